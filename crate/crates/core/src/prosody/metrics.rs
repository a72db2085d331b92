use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::BreakLabel;

/// Precision/recall/F-score of the Break class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// `2PR/(P+R)`, or 0 when both are 0.
///
/// Published precision/recall pairs do not always match their published F.
/// P = 90.77 and R = 91.54 give F ≈ 91.15, whereas 91.39 is listed next to
/// them; this function follows the definition:
///
/// ```
/// use phrasenet_core::prosody::harmonic_mean;
/// let f = harmonic_mean(90.77, 91.54);
/// assert!((f - 91.15).abs() < 0.01);
/// assert!((f - 91.39).abs() > 0.2);
/// ```
pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f_score: harmonic_mean(precision, recall),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

/// Break-class scores over positions whose reference label is Break or
/// NonBreak. Sequences are aligned utterance by utterance.
pub fn prf_metrics(predicted: &[Vec<BreakLabel>], reference: &[Vec<BreakLabel>]) -> Result<Prf> {
    if predicted.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "prf utterances",
            left: predicted.len(),
            right: reference.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, r) in predicted.iter().zip(reference) {
        if p.len() != r.len() {
            return Err(Error::LengthMismatch {
                what: "prf labels",
                left: p.len(),
                right: r.len(),
            });
        }
        for (&pl, &rl) in p.iter().zip(r) {
            if !rl.is_lexical() {
                continue;
            }
            match (pl == BreakLabel::Break, rl == BreakLabel::Break) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}
