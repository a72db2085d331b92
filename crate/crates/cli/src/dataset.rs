//! Loading a generated corpus directory plus its mel cache.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use phrasenet_core::text::{load_embedding_file, SymbolTable, Utterance, WordEmbeddingTable};
use phrasenet_core::train::TrainConfig;

use crate::corpus::{read_manifest, read_utterances, EMBEDDING_FILE};
use crate::melcache;

pub const DEFAULT_MEL_DIR: &str = "mels";

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub symbols: SymbolTable,
    pub embeddings: WordEmbeddingTable,
}

pub fn mel_dir(config: &TrainConfig) -> PathBuf {
    match &config.mel_cache_dir {
        Some(d) => PathBuf::from(d),
        None => Path::new(&config.corpus_dir).join(DEFAULT_MEL_DIR),
    }
}

impl Dataset {
    /// Reads text, split and embeddings. The symbol table is built from the
    /// training split unless one is supplied (e.g. from a checkpoint). With
    /// `with_mels`, training utterances get their cached mel targets.
    pub fn load(config: &TrainConfig, symbols: Option<SymbolTable>, with_mels: bool) -> Result<Self> {
        let dir = Path::new(&config.corpus_dir);
        let manifest = read_manifest(dir)?;
        let all = read_utterances(dir)?;
        if all.len() != manifest.ids.len() {
            bail!(
                "{} lists {} utterances but the text file has {}",
                dir.display(),
                manifest.ids.len(),
                all.len()
            );
        }
        let pick = |ids: &[String]| -> Vec<Utterance> {
            all.iter().filter(|u| ids.contains(&u.id)).cloned().collect()
        };
        let mut train = pick(&manifest.train);
        let mut test = pick(&manifest.test);
        if train.is_empty() {
            return Err(phrasenet_core::Error::EmptyCorpus.into());
        }
        let symbols = symbols.unwrap_or_else(|| SymbolTable::build(train.iter()));
        for u in train.iter_mut().chain(test.iter_mut()) {
            let unknown = u.encode(&symbols);
            if unknown > 0 {
                log::warn!("{}: {unknown} characters not in the symbol table", u.id);
            }
        }
        if with_mels {
            let mdir = mel_dir(config);
            for u in &mut train {
                let mel = melcache::read(&mdir, &u.id, config.sample_rate, config.hop, config.n_fft)
                    .with_context(|| "run extract-mels first".to_string())?;
                if mel.frames % config.reduction != 0 {
                    bail!(
                        "{}: cached mel has {} frames, not a multiple of r={}",
                        u.id,
                        mel.frames,
                        config.reduction
                    );
                }
                u.mel_target = Some(mel);
            }
        }
        let embeddings = load_embedding_file(&dir.join(EMBEDDING_FILE))?;
        Ok(Self {
            train,
            test,
            symbols,
            embeddings,
        })
    }
}
