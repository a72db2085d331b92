use serde::{Deserialize, Serialize};

use crate::prosody::ProsodyDims;
use crate::spectral::{SpectralDims, StopRule};
use crate::tensor::{AdamConfig, LrSchedule};
use crate::text::WORD_EMBED_DIM;
use crate::vocoder::StftConfig;

/// The four contrastive systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Characters only.
    Tacotron,
    /// Characters plus upsampled word embeddings.
    WeTacotron,
    /// Characters plus the output of a separately pre-trained, frozen prosody generator.
    PeTacotron,
    /// Characters plus prosody embeddings, with the prosody generator trained jointly.
    MtlTacotron,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Tacotron,
        Variant::WeTacotron,
        Variant::PeTacotron,
        Variant::MtlTacotron,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tacotron => "tacotron",
            Variant::WeTacotron => "we_tacotron",
            Variant::PeTacotron => "pe_tacotron",
            Variant::MtlTacotron => "mtl_tacotron",
        }
    }

    pub fn uses_prosody(self) -> bool {
        matches!(self, Variant::PeTacotron | Variant::MtlTacotron)
    }

    /// Whether the break-prediction loss is part of the objective.
    pub fn trains_prosody(self) -> bool {
        self == Variant::MtlTacotron
    }

    /// Columns appended to the encoder output in the attention memory.
    pub fn extra_width(self) -> usize {
        match self {
            Variant::Tacotron => 0,
            Variant::WeTacotron => WORD_EMBED_DIM,
            Variant::PeTacotron | Variant::MtlTacotron => crate::text::BreakLabel::COUNT,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat training configuration. Defaults are the full-scale settings; the
/// shipped desk config overrides sizes and step counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub system_variant: Variant,
    pub w: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub base_lr: f64,
    pub min_lr: f64,
    pub decay_start_step: u64,
    pub decay_end_step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip: f64,
    pub l2_weight: f64,
    pub seed: u64,
    pub reduction: usize,
    pub normalize_loss_wav: bool,
    pub silence_threshold: f64,
    pub max_decoder_steps: usize,
    pub checkpoint_interval: u64,
    pub corpus_dir: String,
    pub mel_cache_dir: Option<String>,
    pub prosody_checkpoint: Option<String>,
    pub char_embed: usize,
    pub enc_prenet1: usize,
    pub enc_prenet2: usize,
    pub enc_rnn: usize,
    pub attention_dim: usize,
    pub dec_prenet: usize,
    pub attention_rnn: usize,
    pub decoder_rnn: usize,
    pub prosody_lstm: usize,
    pub prosody_hidden: usize,
    pub dropout: f64,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub gl_iterations: usize,
    pub gl_power: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = SpectralDims::default();
        let p = ProsodyDims::default();
        let lr = LrSchedule::default();
        let adam = AdamConfig::default();
        let stft = StftConfig::default();
        Self {
            system_variant: Variant::MtlTacotron,
            w: 0.5,
            batch_size: 32,
            max_steps: 200_000,
            base_lr: lr.base_lr,
            min_lr: lr.min_lr,
            decay_start_step: lr.decay_start_step,
            decay_end_step: lr.decay_end_step,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            grad_clip: 1.0,
            l2_weight: 1e-6,
            seed: 0,
            reduction: s.reduction,
            normalize_loss_wav: true,
            silence_threshold: StopRule::default().silence_threshold,
            max_decoder_steps: StopRule::default().max_steps,
            checkpoint_interval: 1000,
            corpus_dir: "corpus".into(),
            mel_cache_dir: None,
            prosody_checkpoint: None,
            char_embed: s.char_embed,
            enc_prenet1: s.enc_prenet[0],
            enc_prenet2: s.enc_prenet[1],
            enc_rnn: s.enc_rnn,
            attention_dim: s.attention,
            dec_prenet: s.dec_prenet,
            attention_rnn: s.attention_rnn,
            decoder_rnn: s.decoder_rnn,
            prosody_lstm: p.lstm,
            prosody_hidden: p.hidden,
            dropout: s.dropout,
            sample_rate: stft.sample_rate,
            n_fft: stft.n_fft,
            hop: stft.hop,
            gl_iterations: crate::vocoder::GL_ITERATIONS,
            gl_power: crate::vocoder::GL_POWER,
        }
    }
}

impl TrainConfig {
    pub fn spectral_dims(&self) -> SpectralDims {
        SpectralDims {
            char_embed: self.char_embed,
            enc_prenet: [self.enc_prenet1, self.enc_prenet2],
            enc_rnn: self.enc_rnn,
            attention: self.attention_dim,
            dec_prenet: self.dec_prenet,
            attention_rnn: self.attention_rnn,
            decoder_rnn: self.decoder_rnn,
            reduction: self.reduction,
            dropout: self.dropout,
        }
    }

    pub fn prosody_dims(&self) -> ProsodyDims {
        ProsodyDims {
            lstm: self.prosody_lstm,
            hidden: self.prosody_hidden,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            schedule: LrSchedule {
                base_lr: self.base_lr,
                min_lr: self.min_lr,
                decay_start_step: self.decay_start_step,
                decay_end_step: self.decay_end_step,
            },
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            hop: self.hop,
        }
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            max_steps: self.max_decoder_steps,
            silence_threshold: self.silence_threshold,
            ..StopRule::default()
        }
    }

    /// Every violated constraint, one message per field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.w.is_finite() && self.w >= 0.0) {
            errs.push(format!("w: must be finite and >= 0, got {}", self.w));
        }
        if self.batch_size == 0 {
            errs.push("batch_size: must be >= 1".into());
        }
        if self.max_steps == 0 {
            errs.push("max_steps: must be >= 1".into());
        }
        if self.checkpoint_interval == 0 {
            errs.push("checkpoint_interval: must be >= 1".into());
        }
        if self.reduction == 0 {
            errs.push("reduction: must be >= 1".into());
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            errs.push(format!("grad_clip: must be > 0, got {}", self.grad_clip));
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            errs.push(format!("l2_weight: must be >= 0, got {}", self.l2_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout: must be in [0, 1), got {}", self.dropout));
        }
        if !self.silence_threshold.is_finite() {
            errs.push("silence_threshold: must be finite".into());
        }
        if self.max_decoder_steps == 0 {
            errs.push("max_decoder_steps: must be >= 1".into());
        }
        if self.gl_iterations == 0 {
            errs.push("gl_iterations: must be >= 1".into());
        }
        if !(self.gl_power.is_finite() && self.gl_power > 0.0) {
            errs.push(format!("gl_power: must be > 0, got {}", self.gl_power));
        }
        for (name, v) in [
            ("char_embed", self.char_embed),
            ("enc_prenet1", self.enc_prenet1),
            ("enc_prenet2", self.enc_prenet2),
            ("enc_rnn", self.enc_rnn),
            ("attention_dim", self.attention_dim),
            ("dec_prenet", self.dec_prenet),
            ("attention_rnn", self.attention_rnn),
            ("decoder_rnn", self.decoder_rnn),
            ("prosody_lstm", self.prosody_lstm),
            ("prosody_hidden", self.prosody_hidden),
        ] {
            if v == 0 {
                errs.push(format!("{name}: must be >= 1"));
            }
        }
        if self.corpus_dir.is_empty() {
            errs.push("corpus_dir: must not be empty".into());
        }
        if self.system_variant == Variant::PeTacotron && self.prosody_checkpoint.is_none() {
            errs.push("prosody_checkpoint: required for system_variant pe_tacotron".into());
        }
        errs.extend(self.adam().validate());
        errs.extend(self.stft().validate().into_iter().map(|e| format!("stft: {e}")));
        errs
    }
}

/// `loss_wav + w·loss_pe`.
pub fn total_loss(loss_wav: f64, loss_pe: f64, w: f64) -> crate::error::Result<f64> {
    for (what, v) in [("loss_wav", loss_wav), ("loss_pe", loss_pe), ("w", w)] {
        if !v.is_finite() {
            return Err(crate::error::Error::NonFinite(format!("{what} = {v}")));
        }
    }
    Ok(loss_wav + w * loss_pe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_full_scale_settings() {
        let c = TrainConfig::default();
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        assert_eq!((c.w, c.batch_size, c.reduction, c.max_steps), (0.5, 32, 5, 200_000));
        assert_eq!((c.char_embed, c.prosody_lstm, c.prosody_hidden), (256, 200, 50));
        assert_eq!(c.spectral_dims(), SpectralDims::default());
    }

    #[test]
    fn every_invalid_field_is_reported() {
        let c = TrainConfig {
            w: -1.0,
            batch_size: 0,
            dropout: 1.0,
            hop: 1000,
            system_variant: Variant::PeTacotron,
            ..TrainConfig::default()
        };
        let errs = c.validate();
        for key in ["w:", "batch_size:", "dropout:", "prosody_checkpoint:", "stft:"] {
            assert!(errs.iter().any(|e| e.starts_with(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn total_loss_formula() {
        assert_eq!(total_loss(1.0, 0.4, 0.5).unwrap(), 1.2);
        assert_eq!(total_loss(0.75, 123.0, 0.0).unwrap(), 0.75);
        assert!(total_loss(f64::NAN, 0.0, 0.5).is_err());
    }

    #[test]
    fn variant_contracts() {
        assert_eq!(Variant::Tacotron.extra_width(), 0);
        assert_eq!(Variant::WeTacotron.extra_width(), 200);
        assert_eq!(Variant::MtlTacotron.extra_width(), 5);
        assert!(Variant::MtlTacotron.trains_prosody() && !Variant::PeTacotron.trains_prosody());
        for v in Variant::ALL {
            assert_eq!(v.to_string(), v.name());
        }
    }
}
