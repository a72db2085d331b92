//! Small layer helpers shared by the prosody and spectral networks.
//!
//! Sequence batches use a time-major layout: row `t·B + b` holds step `t`
//! of batch item `b`.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Half-width of the uniform initializer used for every weight matrix.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.register_uniform(&format!("{name}.weight"), &[in_dim, out_dim], INIT_SCALE, rng)?;
        let bias = if bias {
            Some(store.register_zeros(&format!("{name}.bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn lookup(store: &ParamStore, name: &str, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: store.id(&format!("{name}.weight"))?,
            bias: if bias {
                Some(store.id(&format!("{name}.bias"))?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Inverted dropout with a freshly drawn constant mask; identity when `rng` is `None`.
pub fn dropout<R: Rng>(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = g.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    for m in mask.data_mut() {
        if rng.random::<f64>() < keep {
            *m = 1.0 / keep;
        }
    }
    let m = g.constant(mask);
    g.mul(x, m)
}

/// `B×width` mask with ones for items whose length exceeds `t`.
pub fn step_mask(lengths: &[usize], t: usize, width: usize) -> Tensor {
    let mut m = Tensor::zeros(&[lengths.len(), width]);
    for (b, &len) in lengths.iter().enumerate() {
        if t < len {
            m.data_mut()[b * width..(b + 1) * width].fill(1.0);
        }
    }
    m
}

/// `mask⊙new + (1−mask)⊙old`, skipped when every item is active.
pub fn masked_update(
    g: &mut Graph,
    lengths: &[usize],
    t: usize,
    new: Var,
    old: Var,
) -> Result<Var> {
    if lengths.iter().all(|&l| t < l) {
        return Ok(new);
    }
    let width = g.shape(new)[1];
    let keep_new = step_mask(lengths, t, width);
    let mut keep_old = keep_new.clone();
    keep_old.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
    let mn = g.constant(keep_new);
    let mo = g.constant(keep_old);
    let a = g.mul(mn, new)?;
    let b = g.mul(mo, old)?;
    g.add(a, b)
}
