use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use phrasenet_cli::commands::{self, LabelSource, LoadedModel, TrainOptions};
use phrasenet_cli::config::{format_config, load_train_config, parse_flat};
use phrasenet_cli::corpus::CorpusSpec;
use phrasenet_cli::{exit_code, gradcheck, UsageError};
use phrasenet_core::train::TrainConfig;

#[derive(Parser)]
#[command(name = "phrasenet", version, about = "Phrase-break aware multi-task Tacotron")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic annotated corpus with WAVs and embeddings.
    MakeCorpus {
        #[arg(long)]
        utterances: Option<usize>,
    },
    /// Compute and cache log-mel targets for every corpus utterance.
    ExtractMels,
    /// Train the configured variant, or pre-train the prosody generator.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        pretrain_prosody: bool,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Synthesize a WAV from text (whose `#B` markers are honoured with --labels annotated).
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, value_enum, default_value_t = LabelSource::Predicted)]
        labels: LabelSource,
    },
    /// Break-class precision, recall and F on the held-out split.
    EvalBreaks {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    GradCheck,
    /// Print checkpoint metadata and parameter shapes.
    InspectCheckpoint { path: PathBuf },
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok(config)
}

fn required_out(common: &Common, what: &str) -> Result<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| UsageError(format!("--out is required for {what}")).into())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::MakeCorpus { utterances } => {
            let mut spec: CorpusSpec = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    parse_flat(&text)?
                }
                None => CorpusSpec::default(),
            };
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(n) = utterances {
                spec.utterances = n;
            }
            let errs = spec.validate();
            if !errs.is_empty() {
                return Err(phrasenet_cli::config::ConfigErrors(errs).into());
            }
            let out = required_out(common, "make-corpus")?;
            let m = commands::make_corpus(&spec, &out)?;
            println!(
                "wrote {} utterances ({} train, {} test) to {}",
                m.ids.len(),
                m.train.len(),
                m.test.len(),
                out.display()
            );
        }
        Command::ExtractMels => {
            let config = train_config(common)?;
            let n = commands::extract_mels(&config)?;
            println!("cached {n} mel spectrograms in {}", phrasenet_cli::dataset::mel_dir(&config).display());
        }
        Command::Train {
            resume,
            pretrain_prosody,
            max_steps,
        } => {
            let mut config = train_config(common)?;
            if let Some(m) = max_steps {
                config.max_steps = m;
            }
            log::info!("configuration:\n{}", format_config(&config));
            let opts = TrainOptions {
                config,
                out: required_out(common, "train")?,
                resume,
                pretrain_prosody,
            };
            let summary = commands::train(&opts)?;
            if let Some(last) = summary.metrics.last() {
                println!("{}", last.log_line());
            }
            println!("saved {}", summary.final_checkpoint.display());
        }
        Command::Synth {
            checkpoint,
            text,
            labels,
        } => {
            let loaded = LoadedModel::load(&checkpoint)?;
            let out = required_out(common, "synth")?;
            let report = commands::synth(&loaded, &text, &out, labels)?;
            if !report.stopped {
                log::warn!("decoder hit max_decoder_steps without detecting the end of speech");
            }
            println!(
                "wrote {} ({} frames, {} samples), alignment in {}",
                out.display(),
                report.frames,
                report.samples,
                out.with_extension("json").display()
            );
        }
        Command::EvalBreaks { checkpoint, corpus } => {
            let loaded = LoadedModel::load(&checkpoint)?;
            let prf = commands::eval_breaks(&loaded, corpus.as_deref())?;
            println!("precision {:.4} recall {:.4} f {:.4}", prf.precision, prf.recall, prf.f_score);
        }
        Command::GradCheck => {
            let results = gradcheck::run_suite(common.seed.unwrap_or(0))?;
            let mut failed = 0;
            for r in &results {
                println!(
                    "{} {:<28} max_rel_error {:.3e} over {} entries",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_error,
                    r.checked
                );
                failed += usize::from(!r.passed);
            }
            if let Some(out) = &common.out {
                write_json(out, &results)?;
            }
            anyhow::ensure!(failed == 0, "{failed} gradient checks exceeded {:e}", gradcheck::TOLERANCE);
        }
        Command::InspectCheckpoint { path } => print!("{}", commands::inspect(&path)?),
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::try_parse() {
        Ok(cli) => match run(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(exit_code(&e) as u8)
            }
        },
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(phrasenet_cli::EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
