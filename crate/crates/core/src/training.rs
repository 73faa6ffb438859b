//! Mini-batch training with early stopping on validation NDCG@20.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, NegativeMode, NegativeSampler};
use crate::encoders::{Embeddings, Encoder, ModelState, NormalizedAdjacency};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{loss_and_grad, LossConfig, LossKind};
use crate::optim::{init_params, AdamState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mf,
    #[serde(alias = "light_gcn")]
    LightGcn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub num_negatives: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub encoder: EncoderKind,
    pub layers: usize,
    #[serde(flatten)]
    pub loss: LossConfig,
    pub seed: u64,
    /// Lazy (touched-rows) Adam moments; dense when false.
    pub lazy_adam: bool,
    /// Record wall-clock time in the history. Off by default so repeated runs
    /// produce identical output.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            lr: 0.001,
            batch_size: 2048,
            num_negatives: 30,
            max_epochs: 1000,
            patience: 10,
            weight_decay: 0.0,
            encoder: EncoderKind::Mf,
            layers: 2,
            loss: LossConfig::default(),
            seed: 0,
            lazy_adam: true,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        self.loss.validate()
    }

    /// Negatives drawn per pair for the configured loss: none for the
    /// alignment/uniformity losses, one for pairwise losses, in-batch for the
    /// softmax losses and `num_negatives` uniform draws otherwise.
    pub fn negative_plan(&self) -> Option<(NegativeMode, usize)> {
        match self.loss.kind {
            LossKind::DirectAu | LossKind::Mawu => None,
            LossKind::Bpr | LossKind::Cml | LossKind::Sml => Some((NegativeMode::Uniform, 1)),
            LossKind::Ssm | LossKind::Bc => Some((NegativeMode::InBatch, 0)),
            LossKind::Bce | LossKind::Mcl | LossKind::Uib | LossKind::Ccl => {
                Some((NegativeMode::Uniform, self.num_negatives))
            }
        }
    }

    pub fn build_encoder(&self, ds: &InteractionDataset) -> Encoder {
        match self.encoder {
            EncoderKind::Mf => Encoder::Mf,
            EncoderKind::LightGcn => Encoder::lightgcn(
                NormalizedAdjacency::from_pairs(ds.num_users, ds.num_items, &ds.train_pairs()),
                self.layers,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ndcg20: f64,
    pub elapsed_ms: u64,
}

/// History as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_state: ModelState,
    pub best_epoch: usize,
    pub best_valid_ndcg20: f64,
    pub history: Vec<EpochRecord>,
    pub diverged: bool,
}

/// Everything needed to resume training bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub state: ModelState,
    pub adam: AdamState,
    pub best_state: ModelState,
    pub best_epoch: usize,
    pub best_valid_ndcg20: f64,
    pub bad_epochs: usize,
    pub history: Vec<EpochRecord>,
    pub diverged: bool,
}

impl TrainCheckpoint {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: TrainCheckpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.version != crate::encoders::CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}

/// Raw inner-product scores of `user` against every item, from the
/// encoder's final embeddings. Margins play no part at inference.
pub fn score(state: &ModelState, encoder: &Encoder, user: usize) -> Result<Vec<f64>> {
    state.check_user(user)?;
    let emb = encoder.forward(state);
    let mut out = Vec::new();
    eval::scores_into(&emb, user, &mut out);
    Ok(out)
}

pub struct Trainer<'d> {
    ds: &'d InteractionDataset,
    encoder: Encoder,
    train_pairs: Vec<(usize, usize)>,
    ck: TrainCheckpoint,
    started: Instant,
}

impl<'d> Trainer<'d> {
    pub fn new(ds: &'d InteractionDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut state = ModelState::for_dataset(ds, config.dim);
        init_params(&mut state, config.seed);
        let mut adam = AdamState::new(config.lr, config.weight_decay);
        adam.lazy = config.lazy_adam;
        let ck = TrainCheckpoint {
            version: crate::encoders::CHECKPOINT_VERSION,
            config,
            epochs_done: 0,
            best_state: state.clone(),
            state,
            adam,
            best_epoch: 0,
            best_valid_ndcg20: -1.0,
            bad_epochs: 0,
            history: Vec::new(),
            diverged: false,
        };
        Trainer::resume(ds, ck)
    }

    pub fn resume(ds: &'d InteractionDataset, ck: TrainCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        if ck.state.num_users() != ds.num_users || ck.state.num_items() != ds.num_items {
            return Err(Error::Config("checkpoint shape does not match dataset".into()));
        }
        let train_pairs = ds.train_pairs();
        if train_pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let encoder = ck.config.build_encoder(ds);
        Ok(Trainer { ds, encoder, train_pairs, ck, started: Instant::now() })
    }

    pub fn checkpoint(&self) -> &TrainCheckpoint {
        &self.ck
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn is_done(&self) -> bool {
        let c = &self.ck;
        c.diverged || c.epochs_done >= c.config.max_epochs || c.bad_epochs >= c.config.patience
    }

    /// One pass over the shuffled train pairs followed by validation.
    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.ck.epochs_done + 1;
        let cfg = self.ck.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order = self.train_pairs.clone();
        order.shuffle(&mut rng);
        let mut sampler = NegativeSampler::from_rng(rng);
        let plan = cfg.negative_plan();

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = match plan {
                None => crate::data::Batch::positives_only(chunk.to_vec()),
                Some((mode, n)) => sampler.sample(self.ds.num_items, chunk, n, mode)?,
            };
            // A lone in-batch pair has no negatives; skip it.
            if plan.map(|p| p.0) == Some(NegativeMode::InBatch) && batch.num_negative_terms() == 0 {
                continue;
            }
            let ev = loss_and_grad(&cfg.loss, &self.ck.state, &self.encoder, &batch)?;
            if !ev.value.is_finite() || ev.grads.values().any(|g| !g.is_finite()) {
                self.ck.diverged = true;
                self.ck.state = self.ck.best_state.clone();
                return Ok(());
            }
            loss_sum += ev.value;
            batches += 1;
            self.ck.adam.step(&mut self.ck.state, &ev.grads)?;
        }
        if !self.ck.state.is_finite() {
            self.ck.diverged = true;
            self.ck.state = self.ck.best_state.clone();
            return Ok(());
        }

        let ndcg = {
            let emb = self.encoder.forward(&self.ck.state);
            eval::valid_ndcg20(self.ds, &emb)
        };
        self.ck.epochs_done = epoch;
        self.ck.history.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            valid_ndcg20: ndcg,
            elapsed_ms: if cfg.record_timing { self.started.elapsed().as_millis() as u64 } else { 0 },
        });
        if ndcg > self.ck.best_valid_ndcg20 {
            self.ck.best_valid_ndcg20 = ndcg;
            self.ck.best_epoch = epoch;
            self.ck.best_state = self.ck.state.clone();
            self.ck.bad_epochs = 0;
        } else {
            self.ck.bad_epochs += 1;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        let c = self.ck;
        TrainOutcome {
            best_state: c.best_state,
            best_epoch: c.best_epoch,
            best_valid_ndcg20: c.best_valid_ndcg20,
            history: c.history,
            diverged: c.diverged,
        }
    }
}

/// Trains from a fresh seeded initialisation until early stopping.
pub fn train(ds: &InteractionDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(ds, config.clone())?.run()
}

/// Final embeddings of a trained state under the config's encoder.
pub fn final_embeddings<'s>(ds: &InteractionDataset, config: &TrainConfig, state: &'s ModelState) -> Embeddings<'s> {
    config.build_encoder(ds).forward(state)
}
