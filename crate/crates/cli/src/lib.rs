//! Corpus generation, caching, checkpoints and the command implementations
//! behind the `phrasenet` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod gradcheck;
pub mod melcache;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Bad invocation or input that no amount of retrying fixes.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for configuration and input validation failures, 3 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use phrasenet_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<config::ConfigErrors>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidConfig(_)
                | E::MalformedMarker { .. }
                | E::EmptyLine
                | E::EmbeddingParse { .. }
                | E::DimensionMismatch { .. }
                | E::DuplicateWord { .. }
                | E::UnsupportedWav(_) => {
                    EXIT_VALIDATION
                }
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}
