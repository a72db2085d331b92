use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, BatchSchedule};
use super::config::{total_loss, TrainConfig};
use super::model::Model;
use crate::error::{Error, Result};
use crate::prosody::{predict_breaks, prf_metrics, Prf, ProsodyGenerator, WordBatch, PREFIX};
use crate::tensor::{add_l2_regularization, clip_grad_norm, AdamState, Graph, ParamStore};
use crate::text::{Utterance, WordEmbeddingTable};

const EMA_DECAY: f64 = 0.98;

/// Metrics of one optimizer step, as written to the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_wav: f64,
    pub loss_pe: f64,
    pub loss_total: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

impl StepMetrics {
    /// `step loss_wav loss_pe loss_total grad_norm lr`, shortest round-trip decimals.
    pub fn log_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.step, self.loss_wav, self.loss_pe, self.loss_total, self.grad_norm, self.lr
        )
    }

    pub fn parse_log_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return None;
        }
        Some(Self {
            step: f[0].parse().ok()?,
            loss_wav: f[1].parse().ok()?,
            loss_pe: f[2].parse().ok()?,
            loss_total: f[3].parse().ok()?,
            grad_norm: f[4].parse().ok()?,
            lr: f[5].parse().ok()?,
        })
    }
}

/// Exponential moving averages of the three reported losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossEma {
    pub loss_wav: f64,
    pub loss_pe: f64,
    pub loss_total: f64,
}

impl LossEma {
    fn update(&mut self, m: &StepMetrics, first: bool) {
        let mix = |old: f64, new: f64| {
            if first {
                new
            } else {
                EMA_DECAY * old + (1.0 - EMA_DECAY) * new
            }
        };
        self.loss_wav = mix(self.loss_wav, m.loss_wav);
        self.loss_pe = mix(self.loss_pe, m.loss_pe);
        self.loss_total = mix(self.loss_total, m.loss_total);
    }
}

/// Mutable training state: step counter, parameters, optimizer moments and loss statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub store: ParamStore,
    pub adam: AdamState,
    pub ema: LossEma,
}

fn round_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

impl TrainState {
    /// Parameters are rounded to 32-bit precision so checkpoints capture the state exactly.
    pub fn new(mut store: ParamStore, config: &TrainConfig) -> Self {
        for p in store.iter_mut() {
            round_f32(p.tensor.data_mut());
        }
        let adam = AdamState::new(config.adam(), &store);
        Self {
            step: 0,
            store,
            adam,
            ema: LossEma::default(),
        }
    }

    /// Keeps parameters and moments representable in the checkpoint's f32
    /// format so that resuming reproduces the run bit-exactly.
    fn round_state(&mut self) {
        for p in self.store.iter_mut() {
            round_f32(p.tensor.data_mut());
        }
        for m in self.adam.m.iter_mut().chain(self.adam.v.iter_mut()) {
            round_f32(m);
        }
    }

    fn dropout_rng(&self, config: &TrainConfig) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(self.step + 1);
        rng
    }

    /// Runs backward from `loss`, regularizes, clips and applies Adam. The
    /// state stays untouched on error.
    fn apply(&mut self, g: &Graph, loss: crate::tensor::Var, config: &TrainConfig) -> Result<(f64, f64)> {
        let mut store = self.store.clone();
        g.backward_into(loss, &mut store)?;
        add_l2_regularization(&mut store, config.l2_weight);
        let norm = clip_grad_norm(&mut store, config.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NanLoss {
                step: self.step + 1,
                detail: format!("gradient norm {norm}"),
            });
        }
        let mut adam = self.adam.clone();
        let lr = adam.step(&mut store, self.step + 1)?;
        self.store = store;
        self.adam = adam;
        self.round_state();
        Ok((norm, lr))
    }

    fn finish(&mut self, mut m: StepMetrics) -> StepMetrics {
        self.step += 1;
        m.step = self.step;
        self.ema.update(&m, self.step == 1);
        m
    }
}

fn check_finite(step: u64, parts: &[(&str, f64)]) -> Result<()> {
    let bad: Vec<String> = parts
        .iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(n, v)| format!("{n}={v}"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::NanLoss {
            step,
            detail: bad.join(", "),
        })
    }
}

/// One joint optimizer step on `batch`.
pub fn train_step(state: &mut TrainState, model: &Model, batch: &Batch, config: &TrainConfig) -> Result<StepMetrics> {
    let mut rng = state.dropout_rng(config);
    let mut g = Graph::new();
    let losses = model.losses(&mut g, &state.store, batch, config.w, Some(&mut rng))?;
    let loss_wav = g.value(losses.wav).item();
    let loss_pe = losses.pe.map_or(0.0, |v| g.value(v).item());
    let w = if model.variant.trains_prosody() { config.w } else { 0.0 };
    check_finite(state.step + 1, &[("loss_wav", loss_wav), ("loss_pe", loss_pe)])?;
    let loss_total = total_loss(loss_wav, loss_pe, w)?;
    let (grad_norm, lr) = state.apply(&g, losses.total, config)?;
    Ok(state.finish(StepMetrics {
        step: 0,
        loss_wav,
        loss_pe,
        loss_total,
        grad_norm,
        lr,
    }))
}

/// One step of the prosody generator alone on `Loss_pe`.
pub fn prosody_step(
    state: &mut TrainState,
    gen: &ProsodyGenerator,
    words: &WordBatch,
    config: &TrainConfig,
) -> Result<StepMetrics> {
    let mut g = Graph::new();
    let pe = gen.forward(&mut g, &state.store, words)?;
    let loss = gen.loss(&mut g, pe, words)?;
    let loss_pe = g.value(loss).item();
    check_finite(state.step + 1, &[("loss_pe", loss_pe)])?;
    let (grad_norm, lr) = state.apply(&g, loss, config)?;
    Ok(state.finish(StepMetrics {
        step: 0,
        loss_wav: 0.0,
        loss_pe,
        loss_total: loss_pe,
        grad_norm,
        lr,
    }))
}

/// A freshly initialized prosody-only state, seeded from the config.
pub fn init_prosody_state(config: &TrainConfig) -> Result<(TrainState, ProsodyGenerator)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gen = ProsodyGenerator::register(&mut store, config.prosody_dims(), &mut rng)?;
    Ok((TrainState::new(store, config), gen))
}

/// Trains the prosody generator alone for `config.max_steps` steps (or
/// continues `state` up to that step) and returns the state with the
/// prosody parameters frozen.
pub fn pretrain_prosody(
    utts: &[&Utterance],
    table: &WordEmbeddingTable,
    config: &TrainConfig,
    state: Option<TrainState>,
    mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    if utts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut state, gen) = match state {
        Some(s) => {
            let gen = ProsodyGenerator::lookup(&s.store)?;
            (s, gen)
        }
        None => init_prosody_state(config)?,
    };
    let mut schedule = BatchSchedule::new(utts.iter().map(|u| u.num_tokens()).collect(), config.batch_size, config.seed)?;
    while state.step < config.max_steps {
        let idx = schedule.batch_for_step(state.step + 1).to_vec();
        let chosen: Vec<&Utterance> = idx.iter().map(|&i| utts[i]).collect();
        let words = WordBatch::new(&chosen, table);
        let m = prosody_step(&mut state, &gen, &words, config)?;
        on_step(&m, &state)?;
    }
    state.store.set_frozen(PREFIX, true);
    Ok(state)
}

/// Break-class P/R/F of the prosody generator over `utts`.
pub fn evaluate_breaks(
    store: &ParamStore,
    gen: &ProsodyGenerator,
    utts: &[&Utterance],
    table: &WordEmbeddingTable,
) -> Result<Prf> {
    let mut predicted = Vec::with_capacity(utts.len());
    let mut reference = Vec::with_capacity(utts.len());
    for u in utts {
        predicted.push(predict_breaks(&gen.predict(store, u, table)?));
        reference.push(u.break_labels.clone());
    }
    prf_metrics(&predicted, &reference)
}
