use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            n_fft: 1024,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sample_rate == 0 {
            errs.push("sample_rate must be positive".to_string());
        }
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            errs.push(format!("n_fft must be even and at least 4, got {}", self.n_fft));
        }
        if self.hop == 0 || self.n_fft % self.hop != 0 || self.n_fft / self.hop < 2 {
            errs.push(format!(
                "hop {} must divide n_fft {} into at least 2 overlaps",
                self.hop, self.n_fft
            ));
        }
        errs
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex spectrogram, `frames×bins` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            data: self.data.iter().map(|c| c * a).collect(),
            ..self.clone()
        }
    }
}

/// Maps a position of the reflect-padded signal back to its source sample.
fn reflect_index(p: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = p;
    // Lengths here always exceed the pad, so one reflection suffices.
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Cached window and FFT plans for a fixed configuration.
pub struct StftPlan {
    pub config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("config", &self.config).finish()
    }
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: hann_window(config.n_fft),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Hann-windowed frames of the reflect-padded signal.
    pub fn stft(&self, signal: &[f64]) -> Result<Spectrogram> {
        let StftConfig { n_fft, hop, .. } = self.config;
        let len = signal.len();
        if len < n_fft {
            return Err(Error::SignalTooShort { len, n_fft });
        }
        let pad = (n_fft / 2) as isize;
        let frames = self.config.num_frames(len);
        let bins = self.config.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            let start = (t * hop) as isize - pad;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = signal[reflect_index(start + i as isize, len)];
                *slot = Complex64::new(s * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram { frames, bins, data })
    }

    /// Least-squares inverse of [`stft`](Self::stft) for a signal of `len`
    /// samples, folding the reflected padding back onto its source samples
    /// so that `istft(stft(x)) == x` everywhere.
    pub fn istft(&self, spec: &Spectrogram, len: usize) -> Result<Vec<f64>> {
        let StftConfig { n_fft, hop, .. } = self.config;
        if spec.bins != self.config.bins() {
            return Err(Error::ShapeMismatch {
                op: "istft",
                shapes: vec![vec![spec.frames, spec.bins], vec![self.config.bins()]],
            });
        }
        if len < n_fft {
            return Err(Error::SignalTooShort { len, n_fft });
        }
        let pad = (n_fft / 2) as isize;
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let half = n_fft / 2;
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            buf[..=half].copy_from_slice(frame);
            // Real signals have Hermitian spectra; DC and Nyquist are real.
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            for k in 1..half {
                buf[n_fft - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = (t * hop) as isize - pad;
            for (i, c) in buf.iter().enumerate() {
                let p = start + i as isize;
                if p < -pad || p >= len as isize + pad {
                    continue;
                }
                let j = reflect_index(p, len);
                let w = self.window[i];
                num[j] += w * c.re / n_fft as f64;
                den[j] += w * w;
            }
        }
        Ok(num
            .iter()
            .zip(&den)
            .map(|(&n, &d)| if d > 1e-12 { n / d } else { 0.0 })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert!(StftConfig::default().validate().is_empty());
        let bad = StftConfig {
            hop: 1000,
            ..StftConfig::default()
        };
        assert_eq!(bad.validate().len(), 1);
        assert!(StftPlan::new(bad).is_err());
    }

    #[test]
    fn sine_peak_bin() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let x: Vec<f64> = (0..8192).map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin()).collect();
        let spec = plan.stft(&x).unwrap();
        assert_eq!(spec.frames, 1 + 8192 / 256);
        let f = spec.frame(10);
        let peak = (0..spec.bins).max_by(|&a, &b| f[a].norm().total_cmp(&f[b].norm())).unwrap();
        assert_eq!(peak, (440.0f64 * 1024.0 / 16000.0).round() as usize);
    }

    #[test]
    fn zero_signal_and_short_signal() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let spec = plan.stft(&[0.0; 2048]).unwrap();
        assert!(spec.magnitudes().iter().all(|&m| m == 0.0));
        assert!(plan.istft(&spec, 2048).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(plan.stft(&[0.0; 1000]), Err(Error::SignalTooShort { .. })));
    }

    #[test]
    fn parseval_per_frame() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = plan.stft(&x).unwrap();
        let n = 1024;
        let t = 6;
        let start = t * 256 - 512;
        let windowed: f64 = (0..n).map(|i| (x[start + i] * plan.window()[i]).powi(2)).sum();
        let f = spec.frame(t);
        let mut two_sided = f[0].norm_sqr() + f[n / 2].norm_sqr();
        two_sided += 2.0 * f[1..n / 2].iter().map(|c| c.norm_sqr()).sum::<f64>();
        let energy = two_sided / n as f64;
        assert!(((energy - windowed) / windowed).abs() < 1e-6);
    }

    #[test]
    fn round_trip_and_linearity() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..8192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = plan.stft(&x).unwrap();
        let y = plan.istft(&spec, x.len()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        let y3 = plan.istft(&spec.scale(3.0), x.len()).unwrap();
        for (a, b) in y.iter().zip(&y3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }
}
