use nalgebra::DMatrix;

use super::stft::{StftConfig, StftPlan};
use crate::error::Result;
use crate::spectral::{MelSpectrogram, MEL_FLOOR, N_MELS};
use crate::tensor::Tensor;

pub const MEL_FMIN: f64 = 50.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank with a cached pseudo-inverse.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels×bins`.
    pub weights: DMatrix<f64>,
    /// `bins×n_mels`, `Wᵀ(WWᵀ)⁻¹`.
    pub pinv: DMatrix<f64>,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &StftConfig, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let bins = config.bins();
        let lo = hz_to_mel(fmin);
        let hi = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
        let mut weights = DMatrix::zeros(n_mels, bins);
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                weights[(m, k)] = w;
            }
        }
        let gram = &weights * weights.transpose();
        let inv = gram.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
            gram.pseudo_inverse(1e-12).expect("pseudo-inverse of a symmetric matrix")
        });
        let pinv = weights.transpose() * inv;
        Self {
            weights,
            pinv,
            centers: edges[1..=n_mels].to_vec(),
        }
    }

    /// The 80-channel filterbank spanning `50 Hz .. sample_rate/2`.
    pub fn standard(config: &StftConfig) -> Self {
        Self::new(config, N_MELS, MEL_FMIN, config.sample_rate as f64 / 2.0)
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Bins where at least one filter has non-zero weight.
    pub fn covered_bins(&self) -> Vec<usize> {
        (0..self.bins())
            .filter(|&k| (0..self.n_mels()).any(|m| self.weights[(m, k)] > 0.0))
            .collect()
    }

    /// Applies the filterbank to a `frames×bins` magnitude matrix.
    pub fn apply(&self, mags: &Tensor) -> Tensor {
        let m = DMatrix::from_row_slice(mags.rows(), mags.cols(), mags.data());
        let out = m * self.weights.transpose();
        to_tensor(&out)
    }
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter());
    }
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("matrix shape")
}

/// `frames×bins` magnitude spectrogram.
pub fn magnitude_spectrogram(signal: &[f64], plan: &StftPlan) -> Result<Tensor> {
    let spec = plan.stft(signal)?;
    Tensor::new(vec![spec.frames, spec.bins], spec.magnitudes())
}

/// `ln(fb·|STFT| + 1e-5)` frames.
pub fn mel_spectrogram(signal: &[f64], fb: &MelFilterbank, plan: &StftPlan) -> Result<MelSpectrogram> {
    let mags = magnitude_spectrogram(signal, plan)?;
    let mut mel = fb.apply(&mags);
    mel.data_mut().iter_mut().for_each(|v| *v = (*v + MEL_FLOOR).ln());
    let frames = mel.rows();
    MelSpectrogram::new(
        frames,
        mel.into_data(),
        plan.config.sample_rate,
        plan.config.hop,
        plan.config.n_fft,
    )
}

/// Approximate linear magnitudes from log-mel frames via the pseudo-inverse.
pub fn mel_to_linear(mel: &MelSpectrogram, fb: &MelFilterbank) -> Tensor {
    let energies: Vec<f64> = mel.data.iter().map(|&v| (v.exp() - MEL_FLOOR).max(0.0)).collect();
    let m = DMatrix::from_row_slice(mel.frames, N_MELS, &energies);
    let lin = m * fb.pinv.transpose();
    let mut t = to_tensor(&lin);
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    t
}
