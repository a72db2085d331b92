use rand::Rng;

use crate::error::Result;
use crate::nn::{masked_update, INIT_SCALE};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// GRU cell; gate columns are ordered reset, update, candidate.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: store.register_uniform(&format!("{name}.w_ih"), &[input, 3 * hidden], INIT_SCALE, rng)?,
            b_ih: store.register_zeros(&format!("{name}.b_ih"), &[3 * hidden])?,
            w_hh: store.register_uniform(&format!("{name}.w_hh"), &[hidden, 3 * hidden], INIT_SCALE, rng)?,
            b_hh: store.register_zeros(&format!("{name}.b_hh"), &[3 * hidden])?,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        Ok(Self {
            w_ih: store.id(&format!("{name}.w_ih"))?,
            b_ih: store.id(&format!("{name}.b_ih"))?,
            hidden: store.tensor(w_hh).shape()[0],
            w_hh,
            b_hh: store.id(&format!("{name}.b_hh"))?,
        })
    }

    pub fn project_inputs(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.b_ih);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    /// One step from pre-projected inputs `x_proj` (`B×3H`).
    pub fn step_projected(&self, g: &mut Graph, store: &ParamStore, x_proj: Var, h: Var) -> Result<Var> {
        let n = self.hidden;
        let w = g.param(store, self.w_hh);
        let b = g.param(store, self.b_hh);
        let hh = g.matmul(h, w)?;
        let hh = g.add(hh, b)?;
        let xr = g.slice(x_proj, 1, 0, n)?;
        let xz = g.slice(x_proj, 1, n, 2 * n)?;
        let xn = g.slice(x_proj, 1, 2 * n, 3 * n)?;
        let hr = g.slice(hh, 1, 0, n)?;
        let hz = g.slice(hh, 1, n, 2 * n)?;
        let hn = g.slice(hh, 1, 2 * n, 3 * n)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let gated = g.mul(r, hn)?;
        let cand = g.add(xn, gated)?;
        let cand = g.tanh(cand);
        // h' = (1 − z)⊙n + z⊙h = n + z⊙(h − n)
        let diff = g.sub(h, cand)?;
        let mix = g.mul(z, diff)?;
        g.add(cand, mix)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let xp = self.project_inputs(g, store, x)?;
        self.step_projected(g, store, xp, h)
    }

    /// Runs over a time-major `(steps·B)×input` block; one `B×H` state per step.
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
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.slice(x_proj, 0, t * b, (t + 1) * b)?;
            let hn = self.step_projected(g, store, xt, h)?;
            h = masked_update(g, lengths, t, hn, h)?;
            out[t] = h;
        }
        Ok(out)
    }
}
