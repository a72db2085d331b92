use rand::Rng;

use super::batch::Batch;
use super::config::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::prosody::ProsodyGenerator;
use crate::spectral::{join, AttentionMemory, DecodeMode, DecodeOutput, Decoder, Encoder, N_MELS};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Parameter handles of one system variant.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub prosody: Option<ProsodyGenerator>,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Graph nodes produced by a teacher-forced forward pass.
#[derive(Clone, Debug)]
pub struct Losses {
    pub wav: Var,
    pub pe: Option<Var>,
    pub total: Var,
    pub decode: DecodeOutput,
    pub prosody_out: Option<Var>,
}

impl Model {
    /// Registers prosody (if the variant has one), encoder and decoder parameters in that order.
    pub fn register<R: Rng>(store: &mut ParamStore, config: &TrainConfig, vocab: usize, rng: &mut R) -> Result<Self> {
        let variant = config.system_variant;
        let dims = config.spectral_dims();
        let prosody = if variant.uses_prosody() {
            Some(ProsodyGenerator::register(store, config.prosody_dims(), rng)?)
        } else {
            None
        };
        let encoder = Encoder::register(store, vocab, &dims, rng)?;
        let memory = dims.encoder_width() + variant.extra_width();
        let decoder = Decoder::register(store, memory, &dims, rng)?;
        Ok(Self {
            variant,
            prosody,
            encoder,
            decoder,
        })
    }

    /// Starts every output frame at the given per-channel level. Without
    /// this the large negative offset of log-mel targets is first fitted
    /// through the attention context, which saturates the encoder and leaves
    /// attention uniform.
    pub fn init_output_bias(&self, store: &mut ParamStore, channel_mean: &[f64]) -> Result<()> {
        if channel_mean.len() != N_MELS {
            return Err(Error::LengthMismatch {
                what: "output bias channels",
                left: channel_mean.len(),
                right: N_MELS,
            });
        }
        let id = self.decoder.output.bias.ok_or(Error::UnknownParam("spectral.decoder.output.bias".into()))?;
        let bias = store.get_mut(id).tensor.data_mut();
        for (i, b) in bias.iter_mut().enumerate() {
            *b = channel_mean[i % N_MELS];
        }
        Ok(())
    }

    pub fn lookup(store: &ParamStore, config: &TrainConfig) -> Result<Self> {
        let variant = config.system_variant;
        let prosody = if variant.uses_prosody() {
            Some(ProsodyGenerator::lookup(store)?)
        } else {
            None
        };
        Ok(Self {
            variant,
            prosody,
            encoder: Encoder::lookup(store, config.dropout)?,
            decoder: Decoder::lookup(store, config.dropout)?,
        })
    }

    /// Attention memory `[CE_o | extra]` and, for prosody variants, the
    /// time-major `(T·B)×5` prosody distributions. `pe_override` replaces the
    /// generator output with fixed distributions in the same layout.
    pub fn memory<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        pe_override: Option<&Tensor>,
        mut rng: Option<&mut R>,
    ) -> Result<(AttentionMemory, Option<Var>)> {
        let ce = self.encoder.encode(g, store, &batch.chars, rng.as_deref_mut())?;
        let (extra, pe) = match self.variant {
            Variant::Tacotron => (None, None),
            Variant::WeTacotron => {
                let we = g.constant(batch.words.lexical.clone());
                (Some(g.gather_rows(we, &batch.upsample)?), None)
            }
            Variant::PeTacotron | Variant::MtlTacotron => {
                let pe = match pe_override {
                    Some(t) => g.constant(t.clone()),
                    None => {
                        let gen = self.prosody.as_ref().ok_or(Error::UnknownParam("prosody".into()))?;
                        gen.forward(g, store, &batch.words)?
                    }
                };
                (Some(g.gather_rows(pe, &batch.upsample)?), Some(pe))
            }
        };
        let joint = join(g, ce, extra)?;
        let mem = self.decoder.attention.prepare(g, store, joint, &batch.chars.lengths)?;
        Ok((mem, pe))
    }

    /// Teacher-forced forward pass with both losses.
    pub fn losses<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &Batch,
        w: f64,
        mut rng: Option<&mut R>,
    ) -> Result<Losses> {
        let mels = batch.mels.as_ref().ok_or(Error::MissingTarget)?;
        let (mem, pe) = self.memory(g, store, batch, None, rng.as_deref_mut())?;
        let decode = self
            .decoder
            .decode(g, store, &mem, DecodeMode::TeacherForced(mels), rng)?;
        let target = g.constant(mels.targets.clone());
        let wav = g.weighted_sq_err(decode.frames, target, Some(mels.weights.clone()))?;
        let (pe_loss, total) = match (self.variant.trains_prosody(), pe, &self.prosody) {
            (true, Some(p), Some(gen)) => {
                let l = gen.loss(g, p, &batch.words)?;
                let scaled = g.scale(l, w);
                (Some(l), g.add(wav, scaled)?)
            }
            _ => (None, wav),
        };
        Ok(Losses {
            wav,
            pe: pe_loss,
            total,
            decode,
            prosody_out: pe,
        })
    }
}
