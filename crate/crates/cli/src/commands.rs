//! Command implementations, callable in-process.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use phrasenet_core::prosody::{predict_breaks, Prf, ProsodyGenerator, PREFIX};
use phrasenet_core::spectral::channel_means;
use phrasenet_core::tensor::ParamStore;
use phrasenet_core::text::{parse_annotated, BreakLabel, SymbolTable, Utterance, WordEmbeddingTable};
use phrasenet_core::train::{
    break_gap_positions, evaluate_breaks, low_energy_frames, pretrain_prosody, synthesize, train_step, Batch, BatchSchedule, Model, PeChoice, StepMetrics,
    TrainConfig, TrainState, Variant,
};
use phrasenet_core::vocoder::{read_wav, write_wav, Vocoder};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::corpus::{read_manifest, wav_path, write_corpus, CorpusSpec, Manifest};
use crate::dataset::Dataset;
use crate::melcache;
use crate::UsageError;

pub const METRICS_LOG: &str = "metrics.log";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn step_checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

pub fn make_corpus(spec: &CorpusSpec, out: &Path) -> Result<Manifest> {
    write_corpus(spec, out)
}

/// Computes, pads and caches the mel target of every utterance in the corpus.
pub fn extract_mels(config: &TrainConfig) -> Result<usize> {
    let dir = Path::new(&config.corpus_dir);
    let manifest = read_manifest(dir)?;
    let out = crate::dataset::mel_dir(config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let vocoder = Vocoder::new(config.stft())?;
    for id in &manifest.ids {
        let path = wav_path(dir, id);
        let (signal, sr) = read_wav(&path).with_context(|| format!("missing or unreadable {}", path.display()))?;
        ensure!(
            sr == config.sample_rate,
            "{} has sample rate {sr}, config expects {}",
            path.display(),
            config.sample_rate
        );
        let mut mel = vocoder.analyze(&signal)?;
        mel.pad_to_multiple(config.reduction);
        melcache::write(&out, id, &mel)?;
    }
    Ok(manifest.ids.len())
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub config: TrainConfig,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub pretrain_prosody: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub metrics: Vec<StepMetrics>,
    pub final_checkpoint: PathBuf,
    pub state: TrainState,
}

/// Keeps only log lines up to `step` so a resumed run continues the same file.
fn prepare_log(path: &Path, resume_step: Option<u64>) -> Result<fs::File> {
    let kept = match (resume_step, fs::read_to_string(path)) {
        (Some(step), Ok(text)) => text
            .lines()
            .filter(|l| StepMetrics::parse_log_line(l).is_some_and(|m| m.step <= step))
            .map(|l| format!("{l}\n"))
            .collect::<String>(),
        _ => String::new(),
    };
    fs::write(path, kept)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}

struct RunContext<'a> {
    opts: &'a TrainOptions,
    kind: CheckpointKind,
    symbols: &'a SymbolTable,
    log: fs::File,
    metrics: Vec<StepMetrics>,
}

impl RunContext<'_> {
    fn record(&mut self, m: &StepMetrics, state: &TrainState) -> Result<()> {
        writeln!(self.log, "{}", m.log_line())?;
        self.metrics.push(*m);
        if m.step % self.opts.config.checkpoint_interval == 0 {
            self.save(state, &self.opts.out.join(step_checkpoint_name(m.step)))?;
        }
        Ok(())
    }

    fn save(&self, state: &TrainState, path: &Path) -> Result<()> {
        Checkpoint::new(self.kind, &self.opts.config, self.symbols, state).save(path)
    }
}

/// Fresh joint state for the configured variant, with the output bias at
/// the training targets' channel means and, for `pe_tacotron`, a frozen
/// pre-trained prosody generator.
pub fn init_joint_state(config: &TrainConfig, vocab: usize, train: &[&Utterance]) -> Result<(TrainState, Model)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::register(&mut store, config, vocab, &mut rng)?;
    let means = channel_means(train.iter().filter_map(|u| u.mel_target.as_ref()));
    model.init_output_bias(&mut store, &means)?;
    if config.system_variant == Variant::PeTacotron {
        let path = config
            .prosody_checkpoint
            .as_ref()
            .ok_or_else(|| UsageError("pe_tacotron needs prosody_checkpoint".into()))?;
        let pre = Checkpoint::load(Path::new(path))?;
        ensure!(
            pre.snapshot.kind == CheckpointKind::Prosody,
            "{path} is not a prosody checkpoint"
        );
        let copied = store.copy_from(&pre.state.store, PREFIX)?;
        ensure!(copied > 0, "{path} holds no prosody parameters");
        store.set_frozen(PREFIX, true);
    }
    Ok((TrainState::new(store, config), model))
}

pub fn train(opts: &TrainOptions) -> Result<TrainSummary> {
    let config = &opts.config;
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(crate::config::ConfigErrors(errs).into());
    }
    fs::create_dir_all(&opts.out)?;
    let resumed = match &opts.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let kind = if opts.pretrain_prosody {
        CheckpointKind::Prosody
    } else {
        CheckpointKind::Joint
    };
    if let Some(c) = &resumed {
        ensure!(c.snapshot.kind == kind, "checkpoint kind {:?} does not match this run", c.snapshot.kind);
    }
    let symbols = resumed.as_ref().map(|c| c.symbol_table());
    let data = Dataset::load(config, symbols, !opts.pretrain_prosody)?;
    let log = prepare_log(&opts.out.join(METRICS_LOG), resumed.as_ref().map(|c| c.state.step))?;
    let mut ctx = RunContext {
        opts,
        kind,
        symbols: &data.symbols,
        log,
        metrics: Vec::new(),
    };
    let train: Vec<&Utterance> = data.train.iter().collect();

    let state = if opts.pretrain_prosody {
        pretrain_prosody(&train, &data.embeddings, config, resumed.map(|c| c.state), |m, s| {
            ctx.record(m, s).map_err(|e| std::io::Error::other(format!("{e:#}")).into())
        })?
    } else {
        let (mut state, model) = match resumed {
            Some(c) => {
                let model = Model::lookup(&c.state.store, config)?;
                (c.state, model)
            }
            None => init_joint_state(config, data.symbols.len(), &train)?,
        };
        let lengths = train.iter().map(|u| u.num_chars()).collect();
        let mut schedule = BatchSchedule::new(lengths, config.batch_size, config.seed)?;
        while state.step < config.max_steps {
            let chosen: Vec<&Utterance> = schedule
                .batch_for_step(state.step + 1)
                .iter()
                .map(|&i| train[i])
                .collect();
            let batch = Batch::new(&chosen, &data.embeddings, config.reduction, config.normalize_loss_wav)?;
            let m = train_step(&mut state, &model, &batch, config)?;
            if m.step % 100 == 0 {
                log::info!("{}", m.log_line());
            }
            ctx.record(&m, &state)?;
        }
        state
    };
    let final_checkpoint = opts.out.join(FINAL_CHECKPOINT);
    ctx.save(&state, &final_checkpoint)?;
    Ok(TrainSummary {
        metrics: ctx.metrics,
        final_checkpoint,
        state,
    })
}

/// A checkpoint loaded for inference.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub symbols: SymbolTable,
    pub model: Option<Model>,
    pub prosody: Option<ProsodyGenerator>,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let checkpoint = Checkpoint::load(path)?;
        let symbols = checkpoint.symbol_table();
        let store = &checkpoint.state.store;
        let (model, prosody) = match checkpoint.snapshot.kind {
            CheckpointKind::Prosody => (None, Some(ProsodyGenerator::lookup(store)?)),
            CheckpointKind::Joint => {
                let m = Model::lookup(store, &checkpoint.snapshot.config)?;
                let p = m.prosody.clone();
                (Some(m), p)
            }
        };
        Ok(Self {
            checkpoint,
            symbols,
            model,
            prosody,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.checkpoint.snapshot.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.checkpoint.state.store
    }
}

/// Which break labels drive the prosody embedding during synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum LabelSource {
    /// The model's own prosody distributions.
    Predicted,
    /// The labels marked in the input text.
    Annotated,
    /// Every word forced to NonBreak.
    Nonbreak,
}

pub fn pe_choice(utt: &Utterance, source: LabelSource) -> PeChoice {
    match source {
        LabelSource::Predicted => PeChoice::Predicted,
        LabelSource::Annotated => PeChoice::Labels(utt.break_labels.clone()),
        LabelSource::Nonbreak => PeChoice::Labels(
            utt.break_labels
                .iter()
                .map(|&l| if l == BreakLabel::Break { BreakLabel::NonBreak } else { l })
                .collect(),
        ),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SynthReport {
    pub text: String,
    pub variant: Variant,
    pub unknown_characters: usize,
    pub predicted_labels: Option<Vec<BreakLabel>>,
    pub frames: usize,
    pub samples: usize,
    pub stopped: bool,
    /// Decoder step × character attention weights.
    pub alignment: Vec<Vec<f64>>,
}

pub fn parse_input(text: &str, symbols: &SymbolTable) -> Result<(Utterance, usize)> {
    let mut utt = parse_annotated(text)?;
    let unknown = utt.encode(symbols);
    if unknown > 0 {
        log::warn!("{unknown} input characters are not in the symbol table; mapped to the unknown symbol");
    }
    Ok((utt, unknown))
}

/// Frontend, prosody, free-running decoding and Griffin-Lim; writes the WAV
/// and a JSON side file next to it.
pub fn synth(loaded: &LoadedModel, text: &str, out: &Path, source: LabelSource) -> Result<SynthReport> {
    let model = loaded
        .model
        .as_ref()
        .ok_or_else(|| UsageError("synth needs a joint checkpoint, not a prosody-only one".into()))?;
    let config = loaded.config();
    let (utt, unknown) = parse_input(text, &loaded.symbols)?;
    let embeddings = phrasenet_core::text::load_embedding_file(
        &Path::new(&config.corpus_dir).join(crate::corpus::EMBEDDING_FILE),
    )?;
    let s = synthesize(loaded.store(), model, &utt, &embeddings, config, &pe_choice(&utt, source))?;
    let vocoder = Vocoder::new(config.stft())?;
    let signal = vocoder.synthesize(&s.mel, config.gl_iterations, config.gl_power)?;
    write_wav(out, &signal, config.sample_rate)?;
    let report = SynthReport {
        text: text.to_string(),
        variant: model.variant,
        unknown_characters: unknown,
        predicted_labels: s.predicted_labels,
        frames: s.mel.frames,
        samples: signal.len(),
        stopped: s.stopped,
        alignment: (0..s.alignment.rows()).map(|r| s.alignment.row(r).to_vec()).collect(),
    };
    fs::write(out.with_extension("json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Break-class scores of a checkpoint's prosody generator on the test split.
pub fn eval_breaks(loaded: &LoadedModel, corpus_dir: Option<&Path>) -> Result<Prf> {
    let gen = loaded
        .prosody
        .as_ref()
        .ok_or_else(|| UsageError(format!("variant {} has no prosody generator", loaded.config().system_variant)))?;
    let mut config = loaded.config().clone();
    if let Some(d) = corpus_dir {
        config.corpus_dir = d.display().to_string();
    }
    let data = Dataset::load(&config, Some(loaded.symbols.clone()), false)?;
    let test: Vec<&Utterance> = data.test.iter().collect();
    if test.is_empty() {
        bail!("the corpus has an empty test split");
    }
    Ok(evaluate_breaks(loaded.store(), gen, &test, &data.embeddings)?)
}

pub fn predicted_labels(loaded: &LoadedModel, utt: &Utterance, config: &TrainConfig) -> Result<Vec<BreakLabel>> {
    let gen = loaded.prosody.as_ref().ok_or_else(|| UsageError("no prosody generator".into()))?;
    let embeddings = phrasenet_core::text::load_embedding_file(
        &Path::new(&config.corpus_dir).join(crate::corpus::EMBEDDING_FILE),
    )?;
    Ok(predict_breaks(&gen.predict(loaded.store(), utt, &embeddings)?))
}

/// Low-energy frames attended at Break pause positions, summed over
/// utterances synthesized once with their annotated labels and once with
/// every Break forced to NonBreak.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GapTotals {
    pub break_frames: usize,
    pub nonbreak_frames: usize,
    pub utterances: usize,
    /// Decodes that stopped before `max_decoder_steps`.
    pub stopped: usize,
}

impl GapTotals {
    /// Break over NonBreak gap length; infinite when only the Break run pauses.
    pub fn ratio(&self) -> f64 {
        match (self.break_frames, self.nonbreak_frames) {
            (0, 0) => 0.0,
            (_, 0) => f64::INFINITY,
            (b, n) => b as f64 / n as f64,
        }
    }
}

/// Measures pause gaps on up to `limit` utterances that contain a Break.
pub fn break_gaps(loaded: &LoadedModel, utts: &[Utterance], embeddings: &WordEmbeddingTable, limit: usize) -> Result<GapTotals> {
    let model = loaded
        .model
        .as_ref()
        .ok_or_else(|| UsageError("gap measurement needs a joint checkpoint".into()))?;
    let config = loaded.config();
    let mut totals = GapTotals::default();
    let with_breaks = utts.iter().filter(|u| u.break_labels.contains(&BreakLabel::Break));
    for utt in with_breaks.take(limit) {
        let positions = break_gap_positions(utt, &utt.break_labels);
        for source in [LabelSource::Annotated, LabelSource::Nonbreak] {
            let s = synthesize(loaded.store(), model, utt, embeddings, config, &pe_choice(utt, source))?;
            let frames = low_energy_frames(&s.mel, &s.alignment, model.decoder.reduction, &positions, config.silence_threshold);
            match source {
                LabelSource::Nonbreak => totals.nonbreak_frames += frames,
                _ => totals.break_frames += frames,
            }
            totals.stopped += usize::from(s.stopped);
        }
        totals.utterances += 1;
    }
    Ok(totals)
}

pub fn inspect(path: &Path) -> Result<String> {
    let c = Checkpoint::load(path)?;
    let mut out = String::new();
    let s = &c.snapshot;
    out.push_str(&format!("checkpoint {} (CRC ok)\n", path.display()));
    out.push_str(&format!("kind {:?}, variant {}, step {}\n", s.kind, s.config.system_variant, c.state.step));
    out.push_str(&format!(
        "{} parameters, {} values, {} frozen, {} symbols\n",
        c.state.store.len(),
        c.state.store.num_elements(),
        s.frozen.len(),
        s.symbols.len()
    ));
    out.push_str(&format!(
        "ema loss_wav {} loss_pe {} loss_total {}\n",
        s.ema.loss_wav, s.ema.loss_pe, s.ema.loss_total
    ));
    for (_, p) in c.state.store.iter() {
        out.push_str(&format!("  {} {:?}\n", p.name, p.tensor.shape()));
    }
    Ok(out)
}
