use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::INIT_SCALE;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Masked-out scores are set to this before the softmax.
pub const MASK_SCORE: f64 = -1e9;

/// Additive attention: `score_i = vᵀ·tanh(W_q·q + W_m·m_i)`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: ParamId,
    pub memory: ParamId,
    pub v: ParamId,
}

/// Memory prepared once per utterance batch.
#[derive(Clone, Debug)]
pub struct AttentionMemory {
    /// Time-major `(N·B)×D`.
    pub values: Var,
    /// `values·W_m`, `(N·B)×A`.
    pub keys: Var,
    pub lengths: Vec<usize>,
    pub steps: usize,
    /// `B×N` additive score mask.
    pub mask: Tensor,
}

impl Attention {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        memory_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            query: store.register_uniform(&format!("{name}.query"), &[query_dim, attn_dim], INIT_SCALE, rng)?,
            memory: store.register_uniform(&format!("{name}.memory"), &[memory_dim, attn_dim], INIT_SCALE, rng)?,
            v: store.register_uniform(&format!("{name}.v"), &[attn_dim, 1], INIT_SCALE, rng)?,
        })
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            query: store.id(&format!("{name}.query"))?,
            memory: store.id(&format!("{name}.memory"))?,
            v: store.id(&format!("{name}.v"))?,
        })
    }

    pub fn prepare(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        values: Var,
        lengths: &[usize],
    ) -> Result<AttentionMemory> {
        let b = lengths.len();
        let rows = g.shape(values)[0];
        if b == 0 || rows % b != 0 || lengths.iter().any(|&l| l == 0) {
            return Err(Error::ShapeMismatch {
                op: "attention_memory",
                shapes: vec![g.shape(values).to_vec(), lengths.to_vec()],
            });
        }
        let steps = rows / b;
        let wm = g.param(store, self.memory);
        let keys = g.matmul(values, wm)?;
        let mut mask = Tensor::zeros(&[b, steps]);
        for (bi, &len) in lengths.iter().enumerate() {
            mask.data_mut()[bi * steps + len..(bi + 1) * steps].fill(MASK_SCORE);
        }
        Ok(AttentionMemory {
            values,
            keys,
            lengths: lengths.to_vec(),
            steps,
            mask,
        })
    }

    /// One read: returns the `B×D` context and `B×N` weights.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        mem: &AttentionMemory,
    ) -> Result<(Var, Var)> {
        let b = mem.lengths.len();
        let wq = g.param(store, self.query);
        let q = g.matmul(query, wq)?;
        let q = g.tile_rows(q, mem.steps)?;
        let e = g.add(mem.keys, q)?;
        let e = g.tanh(e);
        let v = g.param(store, self.v);
        let scores = g.matmul(e, v)?;
        let scores = g.reshape(scores, &[mem.steps, b])?;
        let scores = g.transpose(scores)?;
        let scores = if mem.lengths.iter().all(|&l| l == mem.steps) {
            scores
        } else {
            let m = g.constant(mem.mask.clone());
            g.add(scores, m)?
        };
        let weights = g.softmax(scores);
        let context = g.attend(weights, mem.values)?;
        Ok((context, weights))
    }
}

/// Single attention read over an `N×D` memory for one query vector.
pub fn attention_step(
    g: &mut Graph,
    store: &ParamStore,
    attn: &Attention,
    query: Var,
    memory: Var,
) -> Result<(Var, Var)> {
    let n = g.shape(memory)[0];
    let mem = attn.prepare(g, store, memory, &[n])?;
    attn.step(g, store, query, &mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (ParamStore, Attention, Tensor, Tensor) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let attn = Attention::register(&mut store, "attn", 4, 6, 5, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v *= 12.0);
        }
        let q = Tensor::new(vec![1, 4], vec![0.4, -0.3, 0.9, 0.1]).unwrap();
        let m = Tensor::new(vec![n, 6], (0..n * 6).map(|i| (i as f64 * 0.61).sin()).collect()).unwrap();
        (store, attn, q, m)
    }

    #[test]
    fn weights_are_a_distribution() {
        let (store, attn, q, m) = setup(7);
        let mut g = Graph::new();
        let (qv, mv) = (g.constant(q), g.constant(m));
        let (_, w) = attention_step(&mut g, &store, &attn, qv, mv).unwrap();
        let total: f64 = g.value(w).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.value(w).data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn single_memory_row() {
        let (store, attn, q, m) = setup(1);
        let mut g = Graph::new();
        let (qv, mv) = (g.constant(q), g.constant(m.clone()));
        let (c, w) = attention_step(&mut g, &store, &attn, qv, mv).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(c).data(), m.data());
    }

    #[test]
    fn masked_positions_get_no_weight() {
        let (store, attn, _, _) = setup(1);
        let mut g = Graph::new();
        // Two items, three steps, second item has length 2.
        let values = g.constant(Tensor::new(vec![6, 6], (0..36).map(|i| (i as f64).cos()).collect()).unwrap());
        let mem = attn.prepare(&mut g, &store, values, &[3, 2]).unwrap();
        let q = g.constant(Tensor::new(vec![2, 4], vec![0.1; 8]).unwrap());
        let (_, w) = attn.step(&mut g, &store, q, &mem).unwrap();
        let w = g.value(w);
        assert!(w.at(1, 2) < 1e-300);
        assert!((w.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, attn, q, m) = setup(5);
        let report = grad_check(
            &store,
            |g, s| {
                let (qv, mv) = (g.constant(q.clone()), g.constant(m.clone()));
                let (c, w) = attention_step(g, s, &attn, qv, mv)?;
                let cs = g.mul(c, c)?;
                let a = g.sum(cs);
                let ww = g.mul(w, w)?;
                let b = g.sum(ww);
                g.add(a, b)
            },
            64,
            1e-6,
            1,
        )
        .unwrap();
        assert!(report.passes(1e-5), "{report:?}");
    }
}
