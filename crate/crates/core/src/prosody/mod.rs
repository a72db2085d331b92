//! Word-level prosody generator: a BLSTM over word embeddings, a tanh
//! hidden layer and a 5-way softmax giving one break-pattern distribution per
//! token, plus its cross-entropy loss, argmax decoding and P/R/F scoring.

mod lstm;
mod metrics;

pub use lstm::{lstm_cell, LstmParams};
pub use metrics::{harmonic_mean, prf_metrics, Prf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::text::{lookup_word_embeddings, BreakLabel, Utterance, WordEmbeddingTable, WORD_EMBED_DIM};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Parameter name prefix for everything owned by the prosody generator.
pub const PREFIX: &str = "prosody.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProsodyDims {
    pub lstm: usize,
    pub hidden: usize,
}

impl Default for ProsodyDims {
    fn default() -> Self {
        Self { lstm: 200, hidden: 50 }
    }
}

/// `T×5` row-stochastic matrix; row `t` is the break-pattern distribution of token `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProsodyEmbeddingSeq(pub Tensor);

impl ProsodyEmbeddingSeq {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    /// One-hot rows for the given labels.
    pub fn one_hot(labels: &[BreakLabel]) -> Self {
        let mut t = Tensor::zeros(&[labels.len(), BreakLabel::COUNT]);
        for (i, l) in labels.iter().enumerate() {
            t.data_mut()[i * BreakLabel::COUNT + l.code()] = 1.0;
        }
        Self(t)
    }
}

/// Placeholder slot of a token: one learned vector per non-lexical class.
fn placeholder_slot(label: BreakLabel) -> usize {
    match label {
        BreakLabel::Blank => 0,
        BreakLabel::Punctuation => 1,
        BreakLabel::StopToken => 2,
        BreakLabel::Break | BreakLabel::NonBreak => NUM_PLACEHOLDERS,
    }
}

const NUM_PLACEHOLDERS: usize = 3;

/// Time-major batch of token sequences ready for the prosody generator.
#[derive(Clone, Debug)]
pub struct WordBatch {
    pub lengths: Vec<usize>,
    pub steps: usize,
    /// `(steps·B)×200`, word vectors on lexical rows and zeros elsewhere.
    pub lexical: Tensor,
    /// Per row: placeholder slot, or `3` for "none".
    pub slots: Vec<usize>,
    pub targets: Vec<usize>,
    /// Per-row loss weight: `1/B` on real tokens, 0 on padding.
    pub weights: Vec<f64>,
    pub oov: usize,
}

impl WordBatch {
    pub fn new(utts: &[&Utterance], table: &WordEmbeddingTable) -> Self {
        let b = utts.len();
        let steps = utts.iter().map(|u| u.num_tokens()).max().unwrap_or(0);
        let mut lexical = Tensor::zeros(&[steps * b, WORD_EMBED_DIM]);
        let mut slots = vec![NUM_PLACEHOLDERS; steps * b];
        let mut targets = vec![0; steps * b];
        let mut weights = vec![0.0; steps * b];
        let mut oov = 0;
        for (bi, u) in utts.iter().enumerate() {
            let (we, n_oov) = lookup_word_embeddings(u, table);
            oov += n_oov;
            for t in 0..u.num_tokens() {
                let row = t * b + bi;
                lexical.data_mut()[row * WORD_EMBED_DIM..(row + 1) * WORD_EMBED_DIM].copy_from_slice(we.row(t));
                slots[row] = placeholder_slot(u.break_labels[t]);
                targets[row] = u.break_labels[t].code();
                weights[row] = 1.0 / b as f64;
            }
        }
        Self {
            lengths: utts.iter().map(|u| u.num_tokens()).collect(),
            steps,
            lexical,
            slots,
            targets,
            weights,
            oov,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }
}

#[derive(Clone, Debug)]
pub struct ProsodyGenerator {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub hidden: Linear,
    pub output: Linear,
    pub placeholders: ParamId,
    pub dims: ProsodyDims,
}

impl ProsodyGenerator {
    pub fn register<R: Rng>(store: &mut ParamStore, dims: ProsodyDims, rng: &mut R) -> Result<Self> {
        let fwd = LstmParams::register(store, "prosody.lstm_fwd", WORD_EMBED_DIM, dims.lstm, rng)?;
        let bwd = LstmParams::register(store, "prosody.lstm_bwd", WORD_EMBED_DIM, dims.lstm, rng)?;
        let hidden = Linear::register(store, "prosody.hidden", 2 * dims.lstm, dims.hidden, true, rng)?;
        let output = Linear::register(store, "prosody.output", dims.hidden, BreakLabel::COUNT, true, rng)?;
        let placeholders = store.register_uniform(
            "prosody.placeholders",
            &[NUM_PLACEHOLDERS, WORD_EMBED_DIM],
            crate::nn::INIT_SCALE,
            rng,
        )?;
        Ok(Self {
            fwd,
            bwd,
            hidden,
            output,
            placeholders,
            dims,
        })
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let fwd = LstmParams::lookup(store, "prosody.lstm_fwd")?;
        let bwd = LstmParams::lookup(store, "prosody.lstm_bwd")?;
        let hidden = Linear::lookup(store, "prosody.hidden", true)?;
        let output = Linear::lookup(store, "prosody.output", true)?;
        let placeholders = store.id("prosody.placeholders")?;
        let dims = ProsodyDims {
            lstm: fwd.hidden,
            hidden: store.tensor(hidden.weight).shape()[1],
        };
        Ok(Self {
            fwd,
            bwd,
            hidden,
            output,
            placeholders,
            dims,
        })
    }

    /// Batched forward pass; returns the time-major `(steps·B)×5` distributions.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &WordBatch) -> Result<Var> {
        let b = batch.batch_size();
        if b == 0 || batch.steps == 0 {
            return Err(Error::ShapeMismatch {
                op: "prosody_forward",
                shapes: vec![vec![batch.steps, b]],
            });
        }
        let lexical = g.constant(batch.lexical.clone());
        let ph = g.param(store, self.placeholders);
        let zero = g.constant(Tensor::zeros(&[1, WORD_EMBED_DIM]));
        let slots_table = g.concat(&[ph, zero], 0)?;
        let fill = g.gather_rows(slots_table, &batch.slots)?;
        let x = g.add(lexical, fill)?;

        let hf = self.fwd.run(g, store, x, &batch.lengths, batch.steps, false)?;
        let hb = self.bwd.run(g, store, x, &batch.lengths, batch.steps, true)?;
        let per_step: Vec<Var> = hf
            .iter()
            .zip(&hb)
            .map(|(&f, &r)| g.concat(&[f, r], 1))
            .collect::<Result<_>>()?;
        let states = g.concat(&per_step, 0)?;
        let hidden = self.hidden.forward(g, store, states)?;
        let hidden = g.tanh(hidden);
        let logits = self.output.forward(g, store, hidden)?;
        Ok(g.softmax(logits))
    }

    /// Batch-mean of per-utterance `−Σ_t log p_t[target_t]`.
    pub fn loss(&self, g: &mut Graph, pe: Var, batch: &WordBatch) -> Result<Var> {
        g.nll(pe, &batch.targets, &batch.weights, PROB_FLOOR)
    }

    /// Distributions for a single utterance.
    pub fn predict(
        &self,
        store: &ParamStore,
        utt: &Utterance,
        table: &WordEmbeddingTable,
    ) -> Result<ProsodyEmbeddingSeq> {
        let batch = WordBatch::new(&[utt], table);
        let mut g = Graph::new();
        let pe = self.forward(&mut g, store, &batch)?;
        Ok(ProsodyEmbeddingSeq(g.value(pe).clone().with_requires_grad(false)))
    }
}

/// `−Σ_t log(max(p_t[target_t], 1e-12))` for one utterance.
pub fn loss_pe(pe: &ProsodyEmbeddingSeq, targets: &[BreakLabel]) -> Result<f64> {
    if pe.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "loss_pe",
            left: pe.len(),
            right: targets.len(),
        });
    }
    let mut g = Graph::new();
    let p = g.constant(pe.0.clone());
    let codes: Vec<usize> = targets.iter().map(|l| l.code()).collect();
    let l = g.nll(p, &codes, &vec![1.0; codes.len()], PROB_FLOOR)?;
    Ok(g.value(l).item())
}

/// Row-wise argmax; ties go to the lowest label code.
pub fn predict_breaks(pe: &ProsodyEmbeddingSeq) -> Vec<BreakLabel> {
    (0..pe.len())
        .map(|t| {
            let row = pe.row(t);
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            BreakLabel::from_code(best).expect("five columns")
        })
        .collect()
}
