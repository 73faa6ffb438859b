use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamKind, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trainable parameters plus the popularity metadata the margin strategies
/// read. Margin vectors are stored unconstrained (`|U|×1`, `|I|×1`);
/// `boundary_proj` is a single `1×d` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub version: u32,
    pub user_emb: Tensor,
    pub item_emb: Tensor,
    pub user_margin: Tensor,
    pub item_margin: Tensor,
    pub boundary_proj: Tensor,
    pub pop_user_emb: Tensor,
    pub pop_item_emb: Tensor,
    pub user_pop: Vec<u32>,
    pub item_pop: Vec<u32>,
}

/// `⌊log₂(max(p, 1))⌋`
pub fn pop_bucket(pop: u32) -> usize {
    (31 - pop.max(1).leading_zeros()) as usize
}

impl ModelState {
    /// Zero-initialised state; see [`crate::optim::init_params`].
    pub fn new(num_users: usize, num_items: usize, dim: usize, user_pop: Vec<u32>, item_pop: Vec<u32>) -> Self {
        assert_eq!(user_pop.len(), num_users);
        assert_eq!(item_pop.len(), num_items);
        let user_buckets = user_pop.iter().map(|&p| pop_bucket(p)).max().unwrap_or(0) + 1;
        let item_buckets = item_pop.iter().map(|&p| pop_bucket(p)).max().unwrap_or(0) + 1;
        ModelState {
            version: CHECKPOINT_VERSION,
            user_emb: Tensor::zeros(num_users, dim),
            item_emb: Tensor::zeros(num_items, dim),
            user_margin: Tensor::zeros(num_users, 1),
            item_margin: Tensor::zeros(num_items, 1),
            boundary_proj: Tensor::zeros(1, dim),
            pop_user_emb: Tensor::zeros(user_buckets, dim),
            pop_item_emb: Tensor::zeros(item_buckets, dim),
            user_pop,
            item_pop,
        }
    }

    pub fn for_dataset(ds: &crate::data::InteractionDataset, dim: usize) -> Self {
        ModelState::new(ds.num_users, ds.num_items, dim, ds.user_pop.clone(), ds.item_pop.clone())
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn param(&self, kind: ParamKind) -> &Tensor {
        match kind {
            ParamKind::UserEmb => &self.user_emb,
            ParamKind::ItemEmb => &self.item_emb,
            ParamKind::UserMargin => &self.user_margin,
            ParamKind::ItemMargin => &self.item_margin,
            ParamKind::BoundaryProj => &self.boundary_proj,
            ParamKind::PopUserEmb => &self.pop_user_emb,
            ParamKind::PopItemEmb => &self.pop_item_emb,
        }
    }

    pub fn param_mut(&mut self, kind: ParamKind) -> &mut Tensor {
        match kind {
            ParamKind::UserEmb => &mut self.user_emb,
            ParamKind::ItemEmb => &mut self.item_emb,
            ParamKind::UserMargin => &mut self.user_margin,
            ParamKind::ItemMargin => &mut self.item_margin,
            ParamKind::BoundaryProj => &mut self.boundary_proj,
            ParamKind::PopUserEmb => &mut self.pop_user_emb,
            ParamKind::PopItemEmb => &mut self.pop_item_emb,
        }
    }

    pub fn user_bucket(&self, user: usize) -> usize {
        pop_bucket(self.user_pop[user])
    }

    pub fn item_bucket(&self, item: usize) -> usize {
        pop_bucket(self.item_pop[item])
    }

    pub fn is_finite(&self) -> bool {
        ParamKind::ALL.iter().all(|&k| self.param(k).is_finite())
    }

    pub fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.num_users() {
            return Err(Error::Index { what: "user", index: user, len: self.num_users() });
        }
        Ok(())
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.num_items() {
            return Err(Error::Index { what: "item", index: item, len: self.num_items() });
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: ModelState = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if state.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} unsupported (expected {})",
                path.display(),
                state.version,
                CHECKPOINT_VERSION
            )));
        }
        Ok(state)
    }
}
