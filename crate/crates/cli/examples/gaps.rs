//! Pause-gap and alignment report for trained checkpoints:
//! `cargo run --release --example gaps -- run/final.ckpt ...`

use std::path::Path;

use phrasenet_cli::commands::{break_gaps, LoadedModel};
use phrasenet_cli::dataset::Dataset;
use phrasenet_core::train::teacher_forced_alignment;

fn main() -> anyhow::Result<()> {
    for path in std::env::args().skip(1) {
        let loaded = LoadedModel::load(Path::new(&path))?;
        let data = Dataset::load(loaded.config(), Some(loaded.symbols.clone()), true)?;
        let model = loaded.model.as_ref().ok_or_else(|| anyhow::anyhow!("{path} is not a joint checkpoint"))?;
        // Teacher-forced sharpness: mean of each step's largest attention weight.
        let (mut peak, mut steps) = (0.0, 0usize);
        for u in data.train.iter().take(20) {
            let a = teacher_forced_alignment(loaded.store(), model, u, &data.embeddings, loaded.config())?;
            for r in 0..a.rows() {
                peak += a.row(r).iter().cloned().fold(0.0, f64::max);
            }
            steps += a.rows();
        }
        let gaps = break_gaps(&loaded, &data.test, &data.embeddings, 20)?;
        println!(
            "{path}: attention peak {:.3}, gap frames {} vs {} (ratio {:.2}), {} of {} decodes stopped",
            peak / steps as f64,
            gaps.break_frames,
            gaps.nonbreak_frames,
            gaps.ratio(),
            gaps.stopped,
            2 * gaps.utterances
        );
    }
    Ok(())
}
