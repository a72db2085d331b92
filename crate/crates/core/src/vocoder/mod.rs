//! STFT analysis, mel features, Griffin-Lim reconstruction and WAV I/O.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use griffin_lim::{
    consistency_error, griffin_lim, griffin_lim_trace, peak_normalize, GriffinLimTrace, GL_ITERATIONS, GL_POWER,
    PEAK_LEVEL,
};
pub use mel::{hz_to_mel, magnitude_spectrogram, mel_spectrogram, mel_to_hz, mel_to_linear, MelFilterbank, MEL_FMIN};
pub use stft::{hann_window, Spectrogram, StftConfig, StftPlan};
pub use wav::{quantize, read_wav, write_wav};

use crate::error::Result;
use crate::spectral::MelSpectrogram;

/// Analysis and synthesis plans bundled for one configuration.
#[derive(Debug)]
pub struct Vocoder {
    pub plan: StftPlan,
    pub filterbank: MelFilterbank,
}

impl Vocoder {
    pub fn new(config: StftConfig) -> Result<Self> {
        Ok(Self {
            filterbank: MelFilterbank::standard(&config),
            plan: StftPlan::new(config)?,
        })
    }

    pub fn analyze(&self, signal: &[f64]) -> Result<MelSpectrogram> {
        mel_spectrogram(signal, &self.filterbank, &self.plan)
    }

    pub fn synthesize(&self, mel: &MelSpectrogram, n_iter: usize, power: f64) -> Result<Vec<f64>> {
        let lin = mel_to_linear(mel, &self.filterbank);
        griffin_lim(&lin, n_iter, power, &self.plan)
    }
}
