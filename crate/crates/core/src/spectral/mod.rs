//! Main-task network: character encoder, joint attention memory, and an
//! autoregressive attention decoder emitting `r` mel frames per step.

mod attention;
mod decoder;
mod encoder;
mod gru;

pub use attention::{attention_step, Attention, AttentionMemory, MASK_SCORE};
pub use decoder::{alignment_matrix, unpack_frames, DecodeMode, DecodeOutput, Decoder, MelBatch, StopRule};
pub use encoder::{CharBatch, Encoder};
pub use gru::GruParams;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::text::check_span_cover;

pub const N_MELS: usize = 80;

/// Natural-log floor applied before the log: `ln(x + 1e-5)`.
pub const MEL_FLOOR: f64 = 1e-5;

/// `T′×80` log-mel matrix with its framing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f64>,
    pub frames: usize,
    pub sample_rate: u32,
    pub hop: usize,
    pub win: usize,
}

impl MelSpectrogram {
    pub fn new(frames: usize, data: Vec<f64>, sample_rate: u32, hop: usize, win: usize) -> Result<Self> {
        if data.len() != frames * N_MELS || frames == 0 {
            return Err(Error::ShapeMismatch {
                op: "mel_spectrogram",
                shapes: vec![vec![frames, N_MELS], vec![data.len()]],
            });
        }
        Ok(Self {
            data,
            frames,
            sample_rate,
            hop,
            win,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Appends floor-valued frames until the length is a multiple of `r`.
    pub fn pad_to_multiple(&mut self, r: usize) {
        let target = self.frames.div_ceil(r) * r;
        let fill = MEL_FLOOR.ln();
        self.data.resize(target * N_MELS, fill);
        self.frames = target;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, N_MELS], self.data.clone()).expect("shape")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean log-energy of frames `[start, end)`.
    pub fn mean_level(&self, start: usize, end: usize) -> f64 {
        let s = &self.data[start * N_MELS..end * N_MELS];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDims {
    pub char_embed: usize,
    pub enc_prenet: [usize; 2],
    pub enc_rnn: usize,
    pub attention: usize,
    pub dec_prenet: usize,
    pub attention_rnn: usize,
    pub decoder_rnn: usize,
    pub reduction: usize,
    pub dropout: f64,
}

impl Default for SpectralDims {
    fn default() -> Self {
        Self {
            char_embed: 256,
            enc_prenet: [256, 128],
            enc_rnn: 128,
            attention: 128,
            dec_prenet: 128,
            attention_rnn: 256,
            decoder_rnn: 256,
            reduction: 5,
            dropout: 0.5,
        }
    }
}

impl SpectralDims {
    /// Width of the encoder output (both directions).
    pub fn encoder_width(&self) -> usize {
        2 * self.enc_rnn
    }
}

/// Per-channel mean log level over every frame of `mels`.
pub fn channel_means<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Vec<f64> {
    let mut sum = vec![0.0; N_MELS];
    let mut frames = 0usize;
    for m in mels {
        for t in 0..m.frames {
            sum.iter_mut().zip(m.frame(t)).for_each(|(s, v)| *s += v);
        }
        frames += m.frames;
    }
    if frames > 0 {
        sum.iter_mut().for_each(|s| *s /= frames as f64);
    }
    sum
}

/// Repeats each word row over the characters of its span.
pub fn upsample_pe(pe: &Tensor, spans: &[(usize, usize)]) -> Result<Tensor> {
    if pe.rows() != spans.len() {
        return Err(Error::LengthMismatch {
            what: "upsample_pe",
            left: pe.rows(),
            right: spans.len(),
        });
    }
    let n = spans.last().map_or(0, |s| s.1);
    check_span_cover(spans, n)?;
    let cols = pe.cols();
    let mut data = Vec::with_capacity(n * cols);
    for (t, &(s, e)) in spans.iter().enumerate() {
        for _ in s..e {
            data.extend_from_slice(pe.row(t));
        }
    }
    Tensor::new(vec![n, cols], data)
}

/// Row indices that upsample a time-major `(T·B)×k` word matrix onto a
/// time-major `(N·B)×k` character grid. Padded characters point at token 0.
pub fn upsample_indices(spans: &[&[(usize, usize)]], char_steps: usize) -> Result<Vec<usize>> {
    let b = spans.len();
    let mut idx = vec![0; char_steps * b];
    for (bi, sp) in spans.iter().enumerate() {
        let n = sp.last().map_or(0, |s| s.1);
        check_span_cover(sp, n)?;
        if n > char_steps {
            return Err(Error::SpanCoverage(format!("{n} characters exceed {char_steps} steps")));
        }
        for c in 0..char_steps {
            idx[c * b + bi] = bi;
        }
        for (t, &(s, e)) in sp.iter().enumerate() {
            for c in s..e {
                idx[c * b + bi] = t * b + bi;
            }
        }
    }
    Ok(idx)
}

/// Column-wise concatenation `[CE_o | extra]`.
pub fn join(g: &mut Graph, ce: Var, extra: Option<Var>) -> Result<Var> {
    match extra {
        None => Ok(ce),
        Some(x) => {
            let (a, b) = (g.shape(ce)[0], g.shape(x)[0]);
            if a != b {
                return Err(Error::LengthMismatch {
                    what: "join rows",
                    left: a,
                    right: b,
                });
            }
            g.concat(&[ce, x], 1)
        }
    }
}

/// Squared error per frame summed over frames, optionally divided by
/// `frames·80`; frames from `valid_frames` on are masked out.
pub fn loss_wav(pred: &Tensor, target: &Tensor, valid_frames: usize, normalize: bool) -> Result<f64> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 || pred.cols() != N_MELS {
        return Err(Error::ShapeMismatch {
            op: "loss_wav",
            shapes: vec![pred.shape().to_vec(), target.shape().to_vec()],
        });
    }
    let valid = valid_frames.min(pred.rows());
    let scale = if normalize && valid > 0 {
        1.0 / (valid * N_MELS) as f64
    } else {
        1.0
    };
    let weights: Vec<f64> = (0..pred.len())
        .map(|i| if i / N_MELS < valid { scale } else { 0.0 })
        .collect();
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = g.weighted_sq_err(p, t, Some(weights))?;
    Ok(g.value(l).item())
}
