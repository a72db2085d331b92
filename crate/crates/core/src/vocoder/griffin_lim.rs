use rustfft::num_complex::Complex64;

use super::stft::{Spectrogram, StftPlan};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GL_ITERATIONS: usize = 60;
pub const GL_POWER: f64 = 1.5;
pub const PEAK_LEVEL: f64 = 0.95;

/// Result of a traced reconstruction.
#[derive(Clone, Debug)]
pub struct GriffinLimTrace {
    /// Reconstructed signal before peak normalization.
    pub signal: Vec<f64>,
    /// `errors[k]` is the consistency error after `k` iterations; index 0 is
    /// the zero-phase starting point.
    pub errors: Vec<f64>,
}

/// Frobenius distance between `|X|` and `target` over the two-sided spectrum
/// of a real signal (interior bins count twice).
pub fn consistency_error(spec: &Spectrogram, target: &[f64]) -> f64 {
    let half = spec.bins - 1;
    let mut total = 0.0;
    for (i, (c, &m)) in spec.data.iter().zip(target).enumerate() {
        let k = i % spec.bins;
        let d = (c.norm() - m).powi(2);
        total += if k == 0 || k == half { d } else { 2.0 * d };
    }
    total.sqrt()
}

fn with_phase(mag: &[f64], phase_of: &Spectrogram) -> Spectrogram {
    let data = mag
        .iter()
        .zip(&phase_of.data)
        .map(|(&m, c)| {
            let n = c.norm();
            if n > 0.0 {
                c * (m / n)
            } else {
                Complex64::new(m, 0.0)
            }
        })
        .collect();
    Spectrogram {
        data,
        ..phase_of.clone()
    }
}

/// Alternating projections from zero phase on `target` (already sharpened).
pub fn griffin_lim_trace(target: &Tensor, n_iter: usize, plan: &StftPlan) -> Result<GriffinLimTrace> {
    let bins = plan.config.bins();
    if target.shape().len() != 2 || target.cols() != bins {
        return Err(Error::ShapeMismatch {
            op: "griffin_lim",
            shapes: vec![target.shape().to_vec(), vec![bins]],
        });
    }
    let frames = target.rows();
    let len = frames.saturating_sub(1) * plan.config.hop;
    let mag = target.data();
    let start = Spectrogram {
        frames,
        bins,
        data: mag.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
    };
    let mut signal = plan.istft(&start, len)?;
    let mut errors = Vec::with_capacity(n_iter + 1);
    for _ in 0..n_iter {
        let spec = plan.stft(&signal)?;
        errors.push(consistency_error(&spec, mag));
        signal = plan.istft(&with_phase(mag, &spec), len)?;
    }
    errors.push(consistency_error(&plan.stft(&signal)?, mag));
    Ok(GriffinLimTrace { signal, errors })
}

/// Scales the signal so its largest absolute sample equals `peak`.
pub fn peak_normalize(signal: &mut [f64], peak: f64) {
    let max = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let s = peak / max;
        signal.iter_mut().for_each(|v| *v *= s);
    }
}

/// Waveform from a `frames×bins` magnitude spectrogram.
pub fn griffin_lim(magnitude: &Tensor, n_iter: usize, power: f64, plan: &StftPlan) -> Result<Vec<f64>> {
    if n_iter == 0 {
        return Err(Error::InvalidConfig(vec!["griffin-lim needs at least one iteration".into()]));
    }
    let mut sharpened = magnitude.clone();
    sharpened.data_mut().iter_mut().for_each(|v| *v = v.max(0.0).powf(power));
    let mut signal = griffin_lim_trace(&sharpened, n_iter, plan)?.signal;
    peak_normalize(&mut signal, PEAK_LEVEL);
    Ok(signal)
}
