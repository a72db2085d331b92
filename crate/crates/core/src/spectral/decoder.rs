use rand::Rng;

use super::attention::{Attention, AttentionMemory};
use super::gru::GruParams;
use super::{MelSpectrogram, SpectralDims, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Teacher-forcing targets laid out per decoder step.
///
/// Row `g·B + b` of `targets` holds frames `g·r .. g·r + r` of item `b`,
/// flattened frame by frame; `prev` holds the frame fed to the prenet at
/// that step (the last frame of the previous group, zeros at step 0).
#[derive(Clone, Debug)]
pub struct MelBatch {
    pub frames: Vec<usize>,
    pub groups: usize,
    pub reduction: usize,
    pub targets: Tensor,
    pub prev: Tensor,
    /// Per-element loss weight matching `targets`.
    pub weights: Vec<f64>,
}

impl MelBatch {
    /// Each target must already be padded to a multiple of `r`. With
    /// `normalize`, an item's squared error is divided by its `T′·80`; the
    /// batch loss is the mean over items.
    pub fn new(mels: &[&MelSpectrogram], reduction: usize, normalize: bool) -> Result<Self> {
        let b = mels.len();
        let r = reduction;
        if b == 0 || r == 0 {
            return Err(Error::MissingTarget);
        }
        if let Some(m) = mels.iter().find(|m| m.frames % r != 0) {
            return Err(Error::LengthMismatch {
                what: "target frames modulo reduction",
                left: m.frames,
                right: r,
            });
        }
        let groups = mels.iter().map(|m| m.frames / r).max().unwrap_or(0);
        let width = N_MELS * r;
        let mut targets = Tensor::zeros(&[groups * b, width]);
        let mut prev = Tensor::zeros(&[groups * b, N_MELS]);
        let mut weights = vec![0.0; groups * b * width];
        for (bi, m) in mels.iter().enumerate() {
            let w = if normalize {
                1.0 / (b * m.frames * N_MELS) as f64
            } else {
                1.0 / b as f64
            };
            for gi in 0..m.frames / r {
                let row = gi * b + bi;
                let src = &m.data[gi * width..(gi + 1) * width];
                targets.data_mut()[row * width..(row + 1) * width].copy_from_slice(src);
                weights[row * width..(row + 1) * width].fill(w);
                if gi > 0 {
                    let last = m.frame(gi * r - 1);
                    prev.data_mut()[row * N_MELS..(row + 1) * N_MELS].copy_from_slice(last);
                }
            }
        }
        Ok(Self {
            frames: mels.iter().map(|m| m.frames).collect(),
            groups,
            reduction: r,
            targets,
            prev,
            weights,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.frames.len()
    }
}

/// Free-running termination: stop after `max_steps` groups, or once
/// `silent_groups` consecutive groups have a mean log level below
/// `silence_threshold` while attention sits on the last memory position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub max_steps: usize,
    pub silence_threshold: f64,
    pub silent_groups: usize,
    pub require_final_attention: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_steps: 200,
            silence_threshold: -4.0,
            silent_groups: 2,
            require_final_attention: true,
        }
    }
}

pub enum DecodeMode<'a> {
    TeacherForced(&'a MelBatch),
    FreeRunning(StopRule),
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// `(groups·B)×(80·r)` predictions in the `MelBatch` row layout.
    pub frames: Var,
    /// One `B×N` weight matrix per decoder step.
    pub alignments: Vec<Var>,
    pub groups: usize,
    /// False when free-running decoding hit `max_steps`.
    pub stopped: bool,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub prenet: Linear,
    pub attention_rnn: GruParams,
    pub attention: Attention,
    pub decoder_rnn: GruParams,
    pub output: Linear,
    pub memory_dim: usize,
    pub prenet_dim: usize,
    pub reduction: usize,
    pub dropout: f64,
}

impl Decoder {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        memory_dim: usize,
        dims: &SpectralDims,
        rng: &mut R,
    ) -> Result<Self> {
        let r = dims.reduction;
        Ok(Self {
            prenet: Linear::register(store, "spectral.decoder.prenet", N_MELS, dims.dec_prenet, true, rng)?,
            attention_rnn: GruParams::register(
                store,
                "spectral.decoder.attention_rnn",
                dims.dec_prenet + memory_dim,
                dims.attention_rnn,
                rng,
            )?,
            attention: Attention::register(
                store,
                "spectral.decoder.attention",
                dims.attention_rnn,
                memory_dim,
                dims.attention,
                rng,
            )?,
            decoder_rnn: GruParams::register(
                store,
                "spectral.decoder.decoder_rnn",
                dims.attention_rnn,
                dims.decoder_rnn,
                rng,
            )?,
            output: Linear::register(
                store,
                "spectral.decoder.output",
                dims.decoder_rnn + memory_dim,
                N_MELS * r,
                true,
                rng,
            )?,
            memory_dim,
            prenet_dim: dims.dec_prenet,
            reduction: r,
            dropout: dims.dropout,
        })
    }

    pub fn lookup(store: &ParamStore, dropout: f64) -> Result<Self> {
        let prenet = Linear::lookup(store, "spectral.decoder.prenet", true)?;
        let output = Linear::lookup(store, "spectral.decoder.output", true)?;
        let attention = Attention::lookup(store, "spectral.decoder.attention")?;
        let memory_dim = store.tensor(attention.memory).shape()[0];
        Ok(Self {
            prenet_dim: store.tensor(prenet.weight).shape()[1],
            reduction: store.tensor(output.weight).shape()[1] / N_MELS,
            attention_rnn: GruParams::lookup(store, "spectral.decoder.attention_rnn")?,
            decoder_rnn: GruParams::lookup(store, "spectral.decoder.decoder_rnn")?,
            prenet,
            attention,
            output,
            memory_dim,
            dropout,
        })
    }

    pub fn decode<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: &AttentionMemory,
        mode: DecodeMode<'_>,
        rng: Option<&mut R>,
    ) -> Result<DecodeOutput> {
        match mode {
            DecodeMode::TeacherForced(batch) => self.teacher_forced(g, store, memory, batch, rng),
            DecodeMode::FreeRunning(rule) => self.free_running(g, store, memory, rule),
        }
    }

    fn prenet_forward<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let y = self.prenet.forward(g, store, x)?;
        let y = g.relu(y);
        dropout(g, y, self.dropout, rng)
    }

    /// Prenet half of the attention-cell input projection, split so the
    /// teacher-forced prenet can be projected for all steps at once.
    fn split_attention_input(&self, g: &mut Graph, store: &ParamStore) -> Result<(Var, Var, Var)> {
        let w = g.param(store, self.attention_rnn.w_ih);
        let w_pre = g.slice(w, 0, 0, self.prenet_dim)?;
        let w_ctx = g.slice(w, 0, self.prenet_dim, self.prenet_dim + self.memory_dim)?;
        let b = g.param(store, self.attention_rnn.b_ih);
        Ok((w_pre, w_ctx, b))
    }

    fn check_memory(&self, g: &Graph, memory: &AttentionMemory) -> Result<()> {
        let d = g.shape(memory.values)[1];
        if d != self.memory_dim {
            return Err(Error::ShapeMismatch {
                op: "decoder_memory",
                shapes: vec![vec![d], vec![self.memory_dim]],
            });
        }
        Ok(())
    }

    fn teacher_forced<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: &AttentionMemory,
        batch: &MelBatch,
        rng: Option<&mut R>,
    ) -> Result<DecodeOutput> {
        self.check_memory(g, memory)?;
        let b = memory.lengths.len();
        if batch.batch_size() != b || batch.reduction != self.reduction {
            return Err(Error::LengthMismatch {
                what: "decoder batch",
                left: batch.batch_size(),
                right: b,
            });
        }
        let prev = g.constant(batch.prev.clone());
        let pre = self.prenet_forward(g, store, prev, rng)?;
        let (w_pre, w_ctx, b_ih) = self.split_attention_input(g, store)?;
        let pre_proj = g.matmul(pre, w_pre)?;
        let pre_proj = g.add(pre_proj, b_ih)?;

        let mut ctx = g.constant(Tensor::zeros(&[b, self.memory_dim]));
        let mut att_h = g.constant(Tensor::zeros(&[b, self.attention_rnn.hidden]));
        let mut dec_h = g.constant(Tensor::zeros(&[b, self.decoder_rnn.hidden]));
        let mut dec_states = Vec::with_capacity(batch.groups);
        let mut contexts = Vec::with_capacity(batch.groups);
        let mut alignments = Vec::with_capacity(batch.groups);
        for step in 0..batch.groups {
            let xp = g.slice(pre_proj, 0, step * b, (step + 1) * b)?;
            let cp = g.matmul(ctx, w_ctx)?;
            let xp = g.add(xp, cp)?;
            att_h = self.attention_rnn.step_projected(g, store, xp, att_h)?;
            let (c, w) = self.attention.step(g, store, att_h, memory)?;
            ctx = c;
            dec_h = self.decoder_rnn.step(g, store, att_h, dec_h)?;
            dec_states.push(dec_h);
            contexts.push(ctx);
            alignments.push(w);
        }
        let d = g.concat(&dec_states, 0)?;
        let c = g.concat(&contexts, 0)?;
        let joint = g.concat(&[d, c], 1)?;
        let frames = self.output.forward(g, store, joint)?;
        Ok(DecodeOutput {
            frames,
            alignments,
            groups: batch.groups,
            stopped: true,
        })
    }

    fn free_running(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: &AttentionMemory,
        rule: StopRule,
    ) -> Result<DecodeOutput> {
        self.check_memory(g, memory)?;
        let b = memory.lengths.len();
        let r = self.reduction;
        let (w_pre, w_ctx, b_ih) = self.split_attention_input(g, store)?;
        let mut prev = g.constant(Tensor::zeros(&[b, N_MELS]));
        let mut ctx = g.constant(Tensor::zeros(&[b, self.memory_dim]));
        let mut att_h = g.constant(Tensor::zeros(&[b, self.attention_rnn.hidden]));
        let mut dec_h = g.constant(Tensor::zeros(&[b, self.decoder_rnn.hidden]));
        let mut outputs = Vec::new();
        let mut alignments = Vec::new();
        let mut silent = vec![0usize; b];
        let mut stopped = false;
        for _ in 0..rule.max_steps {
            let pre = self.prenet_forward::<rand_chacha::ChaCha8Rng>(g, store, prev, None)?;
            let xp = g.matmul(pre, w_pre)?;
            let xp = g.add(xp, b_ih)?;
            let cp = g.matmul(ctx, w_ctx)?;
            let xp = g.add(xp, cp)?;
            att_h = self.attention_rnn.step_projected(g, store, xp, att_h)?;
            let (c, w) = self.attention.step(g, store, att_h, memory)?;
            ctx = c;
            dec_h = self.decoder_rnn.step(g, store, att_h, dec_h)?;
            let joint = g.concat(&[dec_h, ctx], 1)?;
            let out = self.output.forward(g, store, joint)?;
            outputs.push(out);
            alignments.push(w);
            prev = g.slice(out, 1, (r - 1) * N_MELS, r * N_MELS)?;

            let (vals, weights) = (g.value(out), g.value(w));
            for bi in 0..b {
                let row = vals.row(bi);
                let level = row.iter().sum::<f64>() / row.len() as f64;
                let wrow = weights.row(bi);
                let last = memory.lengths[bi] - 1;
                let at_end = !rule.require_final_attention
                    || wrow.iter().enumerate().all(|(i, &x)| x <= wrow[last] || i == last);
                if level < rule.silence_threshold && at_end {
                    silent[bi] += 1;
                } else {
                    silent[bi] = 0;
                }
            }
            if silent.iter().all(|&s| s >= rule.silent_groups) {
                stopped = true;
                break;
            }
        }
        if !stopped {
            log::warn!("decoder reached max_steps={} without stopping", rule.max_steps);
        }
        let groups = outputs.len();
        let frames = g.concat(&outputs, 0)?;
        Ok(DecodeOutput {
            frames,
            alignments,
            groups,
            stopped,
        })
    }
}

/// Unpacks item `b` of a decoder output into a `T′×80` matrix of `frames` rows.
pub fn unpack_frames(out: &Tensor, batch_size: usize, item: usize, frames: usize, reduction: usize) -> Tensor {
    let width = N_MELS * reduction;
    let mut data = Vec::with_capacity(frames * N_MELS);
    for gi in 0..frames.div_ceil(reduction) {
        let row = gi * batch_size + item;
        data.extend_from_slice(&out.data()[row * width..(row + 1) * width]);
    }
    data.truncate(frames * N_MELS);
    Tensor::new(vec![frames, N_MELS], data).expect("frame count")
}

/// Stacks per-step attention rows of item `b` into a `steps×N` matrix.
pub fn alignment_matrix(g: &Graph, alignments: &[Var], item: usize, memory_len: usize) -> Tensor {
    let mut data = Vec::with_capacity(alignments.len() * memory_len);
    for &a in alignments {
        data.extend_from_slice(&g.value(a).row(item)[..memory_len]);
    }
    Tensor::new(vec![alignments.len(), memory_len], data).expect("alignment shape")
}
