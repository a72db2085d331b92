use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub checked: usize,
    pub nan_count: usize,
    /// `name[index]` of the entry with the largest error.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.nan_count == 0 && self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients of `loss_fn` against central finite
/// differences `(f(θ+h) − f(θ−h)) / 2h` on `samples` randomly chosen
/// trainable entries (all entries when there are fewer). Relative error is
/// `|a − n| / max(|a|, |n|, 1e-8)`. `loss_fn` must be deterministic.
pub fn grad_check<F>(
    store: &ParamStore,
    loss_fn: F,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, &analytic)?;
    g.backward_into(loss, &mut analytic)?;

    let entries: Vec<(usize, usize)> = store
        .iter()
        .filter(|(_, p)| p.tensor.requires_grad())
        .flat_map(|(id, p)| (0..p.tensor.len()).map(move |j| (id.0, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = if entries.len() <= samples {
        entries
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = entries;
        // Partial Fisher-Yates: the first `samples` slots become a uniform subset.
        for i in 0..samples {
            let j = rng.random_range(i..picked.len());
            picked.swap(i, j);
        }
        picked.truncate(samples);
        picked
    };

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, s)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        checked: 0,
        nan_count: 0,
        worst: String::new(),
    };
    let mut probe = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (pi, j) in chosen {
        let id = ids[pi];
        let a = analytic.tensor(id).grad().map_or(0.0, |g| g[j]);
        let orig = probe.tensor(id).data()[j];
        probe.tensor_mut(id).data_mut()[j] = orig + h;
        let up = eval(&probe)?;
        probe.tensor_mut(id).data_mut()[j] = orig - h;
        let down = eval(&probe)?;
        probe.tensor_mut(id).data_mut()[j] = orig;
        let n = (up - down) / (2.0 * h);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        report.checked += 1;
        if !rel.is_finite() {
            report.nan_count += 1;
            continue;
        }
        report.mean_rel_error += rel;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{}[{j}]", store.get(id).name);
        }
    }
    if report.checked > report.nan_count {
        report.mean_rel_error /= (report.checked - report.nan_count) as f64;
    }
    Ok(report)
}
