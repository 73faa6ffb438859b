use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive pairs with one negative item list per pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub pairs: Vec<(usize, usize)>,
    pub negatives: Vec<Vec<usize>>,
}

impl Batch {
    /// Batch without negatives, as used by the alignment/uniformity losses.
    pub fn positives_only(pairs: Vec<(usize, usize)>) -> Self {
        let negatives = vec![Vec::new(); pairs.len()];
        Batch { pairs, negatives }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn num_negative_terms(&self) -> usize {
        self.negatives.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    Uniform,
    InBatch,
}

/// Negative sampler owning its RNG stream.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(seed: u64) -> Self {
        NegativeSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        NegativeSampler { rng }
    }

    /// Uniform mode draws `n` items per pair from `I \ {pos}` (other training
    /// positives of the user are not excluded). In-batch mode gives each pair
    /// the positives of the other pairs, skipping copies of its own positive.
    pub fn sample(
        &mut self,
        num_items: usize,
        pairs: &[(usize, usize)],
        n: usize,
        mode: NegativeMode,
    ) -> Result<Batch> {
        if num_items < 2 {
            return Err(Error::CannotSample(format!(
                "need at least 2 items, have {num_items}"
            )));
        }
        let negatives = match mode {
            NegativeMode::Uniform => {
                if n == 0 {
                    return Err(Error::Config("uniform sampling needs n >= 1".into()));
                }
                pairs
                    .iter()
                    .map(|&(_, pos)| {
                        (0..n)
                            .map(|_| {
                                let j = self.rng.gen_range(0..num_items - 1);
                                if j >= pos {
                                    j + 1
                                } else {
                                    j
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
            NegativeMode::InBatch => pairs
                .iter()
                .enumerate()
                .map(|(p, &(_, pos))| {
                    pairs
                        .iter()
                        .enumerate()
                        .filter(|&(q, &(_, item))| q != p && item != pos)
                        .map(|(_, &(_, item))| item)
                        .collect()
                })
                .collect(),
        };
        Ok(Batch {
            pairs: pairs.to_vec(),
            negatives,
        })
    }
}

pub fn sample_negatives(
    num_items: usize,
    pairs: &[(usize, usize)],
    n: usize,
    mode: NegativeMode,
    seed: u64,
) -> Result<Batch> {
    NegativeSampler::new(seed).sample(num_items, pairs, n, mode)
}
