use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{masked_update, INIT_SCALE};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// LSTM cell without peepholes. Gate columns are ordered input, forget,
/// candidate, output.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.register_uniform(&format!("{name}.w_ih"), &[input, 4 * hidden], INIT_SCALE, rng)?;
        let w_hh = store.register_uniform(&format!("{name}.w_hh"), &[hidden, 4 * hidden], INIT_SCALE, rng)?;
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.register(&format!("{name}.bias"), b)?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let w_ih = store.id(&format!("{name}.w_ih"))?;
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        let bias = store.id(&format!("{name}.bias"))?;
        let s = store.tensor(w_ih).shape();
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input: s[0],
            hidden: s[1] / 4,
        })
    }

    /// `x·W_ih + b` for a whole `(steps·B)×input` block at once.
    pub fn project_inputs(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    /// Gate nonlinearities given pre-projected inputs `x_proj` (`B×4H`).
    pub fn step_projected(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x_proj: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let hdim = self.hidden;
        let w_hh = g.param(store, self.w_hh);
        let hh = g.matmul(h_prev, w_hh)?;
        let gates = g.add(x_proj, hh)?;
        let i = g.slice(gates, 1, 0, hdim)?;
        let f = g.slice(gates, 1, hdim, 2 * hdim)?;
        let cand = g.slice(gates, 1, 2 * hdim, 3 * hdim)?;
        let o = g.slice(gates, 1, 3 * hdim, 4 * hdim)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Runs the layer over a time-major batch, forwards or reversed.
    /// Returns one `B×H` hidden state per step, in time order.
    pub fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        lengths: &[usize],
        steps: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let b = lengths.len();
        let x_proj = self.project_inputs(g, store, x)?;
        let mut h = g.constant(Tensor::zeros(&[b, self.hidden]));
        let mut c = h;
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.slice(x_proj, 0, t * b, (t + 1) * b)?;
            let (hn, cn) = self.step_projected(g, store, xt, h, c)?;
            h = masked_update(g, lengths, t, hn, h)?;
            c = masked_update(g, lengths, t, cn, c)?;
            out[t] = h;
        }
        Ok(out)
    }
}

/// One LSTM step on `x` (`B×input`) from state `(h_prev, c_prev)`.
pub fn lstm_cell(
    g: &mut Graph,
    store: &ParamStore,
    params: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let (sx, sh, sc) = (g.shape(x).to_vec(), g.shape(h_prev).to_vec(), g.shape(c_prev).to_vec());
    if sx.len() != 2
        || sx[1] != params.input
        || sh != [sx[0], params.hidden]
        || sc != sh
    {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell",
            shapes: vec![sx, sh, sc, vec![params.input, params.hidden]],
        });
    }
    let xp = params.project_inputs(g, store, x)?;
    params.step_projected(g, store, xp, h_prev, c_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::register(&mut store, "cell", 3, 4, &mut rng).unwrap();
        for id in [p.w_ih, p.w_hh, p.bias] {
            store.tensor_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.3, -2.0, 5.0]).unwrap());
        let h0 = g.constant(Tensor::zeros(&[1, 4]));
        let (h, _) = lstm_cell(&mut g, &store, &p, x, h0, h0).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::register(&mut store, "cell", 2, 3, &mut rng).unwrap();
        assert_eq!(store.tensor(p.bias).data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::register(&mut store, "cell", 2, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 5]));
        let h = g.constant(Tensor::zeros(&[1, 3]));
        assert!(lstm_cell(&mut g, &store, &p, x, h, h).is_err());
    }

    #[test]
    fn cell_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::register(&mut store, "cell", 4, 3, &mut rng).unwrap();
        // Larger weights than the initializer so every gate is exercised.
        for (_, param) in store.clone().iter() {
            let id = store.id(&param.name).unwrap();
            for v in store.tensor_mut(id).data_mut() {
                *v *= 4.0;
            }
        }
        let x = Tensor::new(vec![2, 4], (0..8).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let h0 = Tensor::new(vec![2, 3], (0..6).map(|i| (i as f64 * 1.3).cos() * 0.5).collect()).unwrap();
        let report = grad_check(
            &store,
            |g, s| {
                let xv = g.constant(x.clone());
                let hv = g.constant(h0.clone());
                let (h, c) = lstm_cell(g, s, &p, xv, hv, hv)?;
                let hs = g.mul(h, h)?;
                let a = g.sum(hs);
                let b = g.sum(c);
                g.add(a, b)
            },
            64,
            1e-6,
            0,
        )
        .unwrap();
        assert!(report.passes(1e-5), "{report:?}");
    }
}
