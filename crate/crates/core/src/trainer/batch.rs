//! Per-subset sampling without replacement, reshuffled on wrap.

use alloc::vec::Vec;

use crate::rng::{self, LabRng};

/// Draws indices of one subset in shuffled order; a new permutation starts
/// whenever the current one is exhausted.
#[derive(Debug, Clone)]
pub struct SubsetSampler {
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: LabRng,
}

impl SubsetSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = SubsetSampler { len, order: (0..len).collect(), cursor: 0, rng: rng::seeded(seed) };
        rng::shuffle(&mut s.rng, &mut s.order);
        s
    }

    pub fn take(&mut self, k: usize) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.len {
                rng::shuffle(&mut self.rng, &mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Clip counts per batch for each subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BatchComposition {
    pub strong: usize,
    pub unlabeled: usize,
    pub weak: usize,
}

impl Default for BatchComposition {
    fn default() -> Self {
        BatchComposition { strong: 6, unlabeled: 12, weak: 6 }
    }
}

impl BatchComposition {
    pub fn total(&self) -> usize {
        self.strong + self.unlabeled + self.weak
    }
}

/// Indices into the strong, weak and unlabeled subsets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub strong: Vec<usize>,
    pub weak: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchSampler {
    composition: BatchComposition,
    strong: SubsetSampler,
    weak: SubsetSampler,
    unlabeled: SubsetSampler,
}

impl BatchSampler {
    pub fn new(sizes: (usize, usize, usize), composition: BatchComposition, seed: u64) -> Self {
        BatchSampler {
            composition,
            strong: SubsetSampler::new(sizes.0, rng::derive(seed, 1, 0)),
            weak: SubsetSampler::new(sizes.1, rng::derive(seed, 2, 0)),
            unlabeled: SubsetSampler::new(sizes.2, rng::derive(seed, 3, 0)),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        Batch {
            strong: self.strong.take(self.composition.strong),
            weak: self.weak.take(self.composition.weak),
            unlabeled: self.unlabeled.take(self.composition.unlabeled),
        }
    }
}
