use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::config::TrainConfig;
use super::model::Model;
use crate::error::Result;
use crate::prosody::{predict_breaks, ProsodyEmbeddingSeq};
use crate::spectral::{alignment_matrix, unpack_frames, DecodeMode, MelSpectrogram, N_MELS};
use crate::tensor::{Graph, ParamStore, Tensor};
use crate::text::{BreakLabel, Utterance, WordEmbeddingTable};

/// Source of the prosody embedding at inference time.
#[derive(Clone, Debug, PartialEq)]
pub enum PeChoice {
    /// The generator's own distributions.
    Predicted,
    /// One-hot rows of the given labels.
    Labels(Vec<BreakLabel>),
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub mel: MelSpectrogram,
    /// `groups×N` attention weights.
    pub alignment: Tensor,
    /// Argmax break labels of the generator, for prosody variants.
    pub predicted_labels: Option<Vec<BreakLabel>>,
    pub stopped: bool,
}

/// Free-running synthesis of one encoded utterance.
pub fn synthesize(
    store: &ParamStore,
    model: &Model,
    utt: &Utterance,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
    choice: &PeChoice,
) -> Result<Synthesis> {
    let batch = Batch::inputs(&[utt], table)?;
    let override_pe = match choice {
        PeChoice::Labels(labels) if model.variant.uses_prosody() => Some(ProsodyEmbeddingSeq::one_hot(labels).0),
        _ => None,
    };
    let predicted_labels = match &model.prosody {
        Some(gen) => Some(predict_breaks(&gen.predict(store, utt, table)?)),
        None => None,
    };
    let mut g = Graph::new();
    let (mem, _) = model.memory::<ChaCha8Rng>(&mut g, store, &batch, override_pe.as_ref(), None)?;
    let out = model
        .decoder
        .decode::<ChaCha8Rng>(&mut g, store, &mem, DecodeMode::FreeRunning(config.stop_rule()), None)?;
    let r = model.decoder.reduction;
    let frames = out.groups * r;
    let mel_t = unpack_frames(g.value(out.frames), 1, 0, frames, r);
    let mel = MelSpectrogram::new(frames, mel_t.into_data(), config.sample_rate, config.hop, config.n_fft)?;
    Ok(Synthesis {
        mel,
        alignment: alignment_matrix(&g, &out.alignments, 0, utt.num_chars()),
        predicted_labels,
        stopped: out.stopped,
    })
}

/// Teacher-forced `groups×N` attention weights for one utterance with a mel target.
pub fn teacher_forced_alignment(
    store: &ParamStore,
    model: &Model,
    utt: &Utterance,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
) -> Result<Tensor> {
    let batch = Batch::new(&[utt], table, model.decoder.reduction, config.normalize_loss_wav)?;
    let mut g = Graph::new();
    let losses = model.losses::<ChaCha8Rng>(&mut g, store, &batch, config.w, None)?;
    Ok(alignment_matrix(&g, &losses.decode.alignments, 0, utt.num_chars()))
}

/// Character positions where a pause after a Break word is expected: the
/// word's last character and the non-lexical tokens that follow it.
pub fn break_gap_positions(utt: &Utterance, labels: &[BreakLabel]) -> Vec<usize> {
    let mut out = Vec::new();
    for (t, &l) in labels.iter().enumerate() {
        if l != BreakLabel::Break {
            continue;
        }
        let (_, end) = utt.word_char_spans[t];
        out.push(end - 1);
        for (u, &next) in labels.iter().enumerate().skip(t + 1) {
            if next.is_lexical() {
                break;
            }
            let (s, e) = utt.word_char_spans[u];
            out.extend(s..e);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Frames whose mean log level is below `threshold` and whose decoder step
/// attends (argmax) to one of `positions`.
pub fn low_energy_frames(mel: &MelSpectrogram, alignment: &Tensor, reduction: usize, positions: &[usize], threshold: f64) -> usize {
    (0..mel.frames)
        .filter(|&t| {
            let row = alignment.row(t / reduction);
            let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            positions.binary_search(&arg).is_ok() && mel.mean_level(t, t + 1) < threshold
        })
        .count()
}

/// Mean log level of each frame.
pub fn frame_levels(mel: &MelSpectrogram) -> Vec<f64> {
    (0..mel.frames)
        .map(|t| mel.frame(t).iter().sum::<f64>() / N_MELS as f64)
        .collect()
}
