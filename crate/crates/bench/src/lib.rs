//! Shared fixtures for the criterion benches.

use cfloss_core::data::{split, synthetic::SyntheticSpec, NegativeSampler};
use cfloss_core::optim::init_params;
use cfloss_core::{Batch, InteractionDataset, ModelState, NegativeMode};

/// Split synthetic dataset of the given size.
pub fn dataset(users: usize, items: usize, interactions: usize) -> InteractionDataset {
    let spec = SyntheticSpec { users, items, interactions, seed: 11, ..Default::default() };
    split(&spec.generate().expect("synthetic data"), [7, 1, 2], 11)
}

pub fn state(ds: &InteractionDataset, dim: usize) -> ModelState {
    let mut s = ModelState::for_dataset(ds, dim);
    init_params(&mut s, 11);
    s
}

/// First `size` train pairs with negatives drawn in `mode`.
pub fn batch(ds: &InteractionDataset, size: usize, negatives: usize, mode: NegativeMode) -> Batch {
    let pairs: Vec<(usize, usize)> = ds.train_pairs().into_iter().take(size).collect();
    NegativeSampler::new(3).sample(ds.num_items, &pairs, negatives, mode).expect("negatives")
}
