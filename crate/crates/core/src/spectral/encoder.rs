use rand::Rng;

use super::gru::GruParams;
use super::SpectralDims;
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear, INIT_SCALE};
use crate::tensor::{Graph, ParamId, ParamStore, Var};
use crate::text::{SymbolTable, Utterance};

/// Time-major character id batch; padding uses the PAD symbol.
#[derive(Clone, Debug)]
pub struct CharBatch {
    pub lengths: Vec<usize>,
    pub steps: usize,
    pub ids: Vec<usize>,
}

impl CharBatch {
    pub fn from_ids(seqs: &[&[usize]]) -> Result<Self> {
        let b = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if b == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::ShapeMismatch {
                op: "char_batch",
                shapes: vec![seqs.iter().map(|s| s.len()).collect()],
            });
        }
        let mut ids = vec![SymbolTable::PAD; steps * b];
        for (bi, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t * b + bi] = id;
            }
        }
        Ok(Self {
            lengths: seqs.iter().map(|s| s.len()).collect(),
            steps,
            ids,
        })
    }

    /// Utterances must already be encoded against a symbol table.
    pub fn new(utts: &[&Utterance]) -> Result<Self> {
        if let Some(u) = utts.iter().find(|u| u.char_ids.len() != u.chars.len()) {
            return Err(Error::LengthMismatch {
                what: "encoded characters",
                left: u.char_ids.len(),
                right: u.chars.len(),
            });
        }
        let seqs: Vec<&[usize]> = utts.iter().map(|u| u.char_ids.as_slice()).collect();
        Self::from_ids(&seqs)
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }
}

/// Character embedding, two-layer prenet and a bidirectional GRU.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub prenet: [Linear; 2],
    pub fwd: GruParams,
    pub bwd: GruParams,
    pub vocab: usize,
    pub dropout: f64,
}

impl Encoder {
    pub fn register<R: Rng>(store: &mut ParamStore, vocab: usize, dims: &SpectralDims, rng: &mut R) -> Result<Self> {
        let embedding =
            store.register_uniform("spectral.encoder.embedding", &[vocab, dims.char_embed], INIT_SCALE * 4.0, rng)?;
        let p1 = Linear::register(store, "spectral.encoder.prenet1", dims.char_embed, dims.enc_prenet[0], true, rng)?;
        let p2 =
            Linear::register(store, "spectral.encoder.prenet2", dims.enc_prenet[0], dims.enc_prenet[1], true, rng)?;
        let fwd = GruParams::register(store, "spectral.encoder.gru_fwd", dims.enc_prenet[1], dims.enc_rnn, rng)?;
        let bwd = GruParams::register(store, "spectral.encoder.gru_bwd", dims.enc_prenet[1], dims.enc_rnn, rng)?;
        Ok(Self {
            embedding,
            prenet: [p1, p2],
            fwd,
            bwd,
            vocab,
            dropout: dims.dropout,
        })
    }

    pub fn lookup(store: &ParamStore, dropout: f64) -> Result<Self> {
        let embedding = store.id("spectral.encoder.embedding")?;
        Ok(Self {
            vocab: store.tensor(embedding).shape()[0],
            embedding,
            prenet: [
                Linear::lookup(store, "spectral.encoder.prenet1", true)?,
                Linear::lookup(store, "spectral.encoder.prenet2", true)?,
            ],
            fwd: GruParams::lookup(store, "spectral.encoder.gru_fwd")?,
            bwd: GruParams::lookup(store, "spectral.encoder.gru_bwd")?,
            dropout,
        })
    }

    /// Time-major `(N·B)×2H` output embeddings. Dropout is active only when an RNG is given.
    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &CharBatch,
        mut rng: Option<&mut R>,
    ) -> Result<Var> {
        if let Some(&bad) = batch.ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::IndexOutOfRange {
                what: "character id",
                index: bad,
                size: self.vocab,
            });
        }
        let table = g.param(store, self.embedding);
        let mut x = g.gather_rows(table, &batch.ids)?;
        for layer in &self.prenet {
            x = layer.forward(g, store, x)?;
            x = g.relu(x);
            x = dropout(g, x, self.dropout, rng.as_deref_mut())?;
        }
        let hf = self.fwd.run(g, store, x, &batch.lengths, batch.steps, false)?;
        let hb = self.bwd.run(g, store, x, &batch.lengths, batch.steps, true)?;
        let a = g.concat(&hf, 0)?;
        let b = g.concat(&hb, 0)?;
        g.concat(&[a, b], 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SpectralDims {
        SpectralDims {
            char_embed: 6,
            enc_prenet: [5, 4],
            enc_rnn: 3,
            attention: 4,
            dec_prenet: 4,
            attention_rnn: 5,
            decoder_rnn: 5,
            reduction: 2,
            dropout: 0.5,
        }
    }

    #[test]
    fn one_output_per_character() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::register(&mut store, 9, &tiny(), &mut rng).unwrap();
        let batch = CharBatch::from_ids(&[&[2, 3, 4, 5, 6]]).unwrap();
        let mut g = Graph::new();
        let ce = enc.encode::<ChaCha8Rng>(&mut g, &store, &batch, None).unwrap();
        assert_eq!(g.shape(ce), &[5, 6]);
        let bad = CharBatch::from_ids(&[&[2, 9]]).unwrap();
        assert!(enc.encode::<ChaCha8Rng>(&mut g, &store, &bad, None).is_err());
    }

    #[test]
    fn inference_is_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::register(&mut store, 9, &tiny(), &mut rng).unwrap();
        let batch = CharBatch::from_ids(&[&[2, 3, 4]]).unwrap();
        let run = |r: Option<&mut ChaCha8Rng>| {
            let mut g = Graph::new();
            let ce = enc.encode(&mut g, &store, &batch, r).unwrap();
            g.value(ce).clone()
        };
        assert_eq!(run(None), run(None));
        let mut r = ChaCha8Rng::seed_from_u64(5);
        assert_ne!(run(None), run(Some(&mut r)));
    }

    #[test]
    fn padding_does_not_change_real_outputs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::register(&mut store, 9, &tiny(), &mut rng).unwrap();
        let mut g = Graph::new();
        let alone = CharBatch::from_ids(&[&[4, 5]]).unwrap();
        let a = enc.encode::<ChaCha8Rng>(&mut g, &store, &alone, None).unwrap();
        let padded = CharBatch::from_ids(&[&[2, 3, 4, 5], &[4, 5]]).unwrap();
        let p = enc.encode::<ChaCha8Rng>(&mut g, &store, &padded, None).unwrap();
        for t in 0..2 {
            let (x, y) = (g.value(a).row(t), g.value(p).row(t * 2 + 1));
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::register(&mut store, 7, &tiny(), &mut rng).unwrap();
        for p in store.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v *= 8.0);
        }
        let batch = CharBatch::from_ids(&[&[2, 3, 4, 6]]).unwrap();
        let report = grad_check(
            &store,
            |g, s| {
                let ce = enc.encode::<ChaCha8Rng>(g, s, &batch, None)?;
                let sq = g.mul(ce, ce)?;
                Ok(g.sum(sq))
            },
            80,
            1e-6,
            4,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
