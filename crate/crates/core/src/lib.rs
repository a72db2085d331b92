//! Multi-task Tacotron-style speech synthesis with a word-level phrase-break
//! prediction head.
//!
//! The crate is organised bottom-up: [`tensor`] provides the autodiff engine
//! and optimizer, [`text`] the annotated-text frontend, [`prosody`] the break
//! predictor, [`spectral`] the mel decoder, [`vocoder`] the DSP path and
//! [`train`] the joint training loop.

pub mod error;
pub mod nn;
pub mod prosody;
pub mod spectral;
pub mod tensor;
pub mod vocoder;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use prosody::{ProsodyEmbeddingSeq, ProsodyGenerator, Prf};
pub use spectral::{MelSpectrogram, N_MELS};
pub use tensor::{Graph, ParamStore, Tensor, Var};
pub use text::{BreakLabel, SymbolTable, Utterance, WordEmbeddingTable};
