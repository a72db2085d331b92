use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prosody::WordBatch;
use crate::spectral::{upsample_indices, CharBatch, MelBatch};
use crate::text::{Utterance, WordEmbeddingTable};

/// How many batches' worth of utterances are length-sorted together.
const BUCKET_BATCHES: usize = 8;

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Partition of `0..lengths.len()` into batches for one epoch: a seeded
/// shuffle, length-sorting within buckets of several batches, then a
/// shuffle of the batch order.
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = epoch_rng(seed, epoch);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let bs = batch_size.max(1);
    let mut batches = Vec::new();
    for bucket in order.chunks(bs * BUCKET_BATCHES) {
        let mut bucket = bucket.to_vec();
        bucket.sort_by_key(|&i| lengths[i]);
        batches.extend(bucket.chunks(bs).map(|c| c.to_vec()));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Stateless mapping from a 1-based global step to its batch, so training
/// can resume at any step without replaying the data order.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    lengths: Vec<usize>,
    batch_size: usize,
    seed: u64,
    cached: Option<(u64, Vec<Vec<usize>>)>,
}

impl BatchSchedule {
    pub fn new(lengths: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            lengths,
            batch_size: batch_size.max(1),
            seed,
            cached: None,
        })
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.lengths.len().div_ceil(self.batch_size) as u64
    }

    pub fn batch_for_step(&mut self, step: u64) -> &[usize] {
        let per = self.batches_per_epoch();
        let s = step.max(1) - 1;
        let (epoch, idx) = (s / per, (s % per) as usize);
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            let b = make_batches(&self.lengths, self.batch_size, self.seed, epoch);
            self.cached = Some((epoch, b));
        }
        &self.cached.as_ref().expect("filled above").1[idx]
    }
}

/// Everything a forward pass needs for one group of utterances.
#[derive(Clone, Debug)]
pub struct Batch {
    pub chars: CharBatch,
    pub words: WordBatch,
    /// Rows of the time-major word matrix feeding each character row.
    pub upsample: Vec<usize>,
    pub mels: Option<MelBatch>,
}

impl Batch {
    /// Text-side inputs only (inference).
    pub fn inputs(utts: &[&Utterance], table: &WordEmbeddingTable) -> Result<Self> {
        if utts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let chars = CharBatch::new(utts)?;
        let words = WordBatch::new(utts, table);
        let spans: Vec<&[(usize, usize)]> = utts.iter().map(|u| u.word_char_spans.as_slice()).collect();
        let upsample = upsample_indices(&spans, chars.steps)?;
        Ok(Self {
            chars,
            words,
            upsample,
            mels: None,
        })
    }

    /// Inputs plus teacher-forcing targets; every utterance needs a mel target.
    pub fn new(utts: &[&Utterance], table: &WordEmbeddingTable, reduction: usize, normalize: bool) -> Result<Self> {
        let mut b = Self::inputs(utts, table)?;
        let mels = utts
            .iter()
            .map(|u| u.mel_target.as_ref().ok_or(Error::MissingTarget))
            .collect::<Result<Vec<_>>>()?;
        b.mels = Some(MelBatch::new(&mels, reduction, normalize)?);
        Ok(b)
    }

    pub fn batch_size(&self) -> usize {
        self.chars.batch_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_order() {
        let lengths: Vec<usize> = (0..50).map(|i| (i * 7) % 13).collect();
        assert_eq!(make_batches(&lengths, 4, 3, 0), make_batches(&lengths, 4, 3, 0));
        assert_ne!(make_batches(&lengths, 4, 3, 0), make_batches(&lengths, 4, 3, 1));
    }

    #[test]
    fn schedule_wraps_epochs() {
        let mut s = BatchSchedule::new(vec![1; 10], 4, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
        let epoch0: Vec<Vec<usize>> = (1..=3).map(|t| s.batch_for_step(t).to_vec()).collect();
        assert_eq!(epoch0, make_batches(&[1; 10], 4, 0, 0));
        assert_eq!(s.batch_for_step(4), make_batches(&[1; 10], 4, 0, 1)[0].as_slice());
        assert!(BatchSchedule::new(vec![], 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn every_utterance_once_per_epoch(n in 1usize..80, bs in 1usize..12, seed in 0u64..100) {
            let lengths: Vec<usize> = (0..n).map(|i| (i * 31) % 17).collect();
            let batches = make_batches(&lengths, bs, seed, 2);
            let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        }
    }
}
