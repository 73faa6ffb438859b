//! The eleven CF losses plus MAWU, each returning a value and analytic
//! gradients, and the margin strategies they share.
//!
//! Similarities are computed on L2-normalised vectors: `s(u,i) = ũᵀĩ`,
//! `d(u,i) = ‖ũ − ĩ‖²` where a loss uses distances, `θ̂ = arccos s`. Every
//! loss is mean-reduced.

mod au;
mod gradcheck;
pub mod kernels;
mod margins;
mod pairwise;
mod pointwise;
mod setwise;
mod workspace;


use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::encoders::{Embeddings, Encoder, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{Grad, ParamKind};

pub use au::{directau, mawu};
pub use gradcheck::{grad_check, GradCheckReport};
pub use margins::{margin_value, MarginMode};
pub use pairwise::{bpr, cml, sml};
pub use pointwise::{bce, mcl, uib};
pub use setwise::{bc, ccl, ssm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[serde(alias = "BCE")]
    Bce,
    #[serde(alias = "MCL")]
    Mcl,
    #[serde(alias = "UIB")]
    Uib,
    #[serde(alias = "BPR")]
    Bpr,
    #[serde(alias = "CML")]
    Cml,
    #[serde(alias = "SML")]
    Sml,
    #[serde(alias = "CCL")]
    Ccl,
    #[serde(alias = "SSM")]
    Ssm,
    #[serde(alias = "BC")]
    Bc,
    #[serde(alias = "DirectAU", alias = "DAU", alias = "dau")]
    DirectAu,
    #[serde(alias = "MAWU")]
    Mawu,
}

impl LossKind {
    pub const ALL: [LossKind; 11] = [
        LossKind::Bce,
        LossKind::Mcl,
        LossKind::Uib,
        LossKind::Bpr,
        LossKind::Cml,
        LossKind::Sml,
        LossKind::Ccl,
        LossKind::Ssm,
        LossKind::Bc,
        LossKind::DirectAu,
        LossKind::Mawu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mcl => "mcl",
            LossKind::Uib => "uib",
            LossKind::Bpr => "bpr",
            LossKind::Cml => "cml",
            LossKind::Sml => "sml",
            LossKind::Ccl => "ccl",
            LossKind::Ssm => "ssm",
            LossKind::Bc => "bc",
            LossKind::DirectAu => "directau",
            LossKind::Mawu => "mawu",
        }
    }

    /// Losses that only consume positive pairs.
    pub fn is_alignment_uniformity(self) -> bool {
        matches!(self, LossKind::DirectAu | LossKind::Mawu)
    }

    /// Losses defined on single-negative triplets.
    pub fn is_pairwise(self) -> bool {
        matches!(self, LossKind::Bpr | LossKind::Cml | LossKind::Sml)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .or_else(|_| serde_json::from_value(serde_json::Value::String(s.to_lowercase())))
            .map_err(|_| Error::Config(format!("unknown loss kind {s:?}")))
    }
}

/// `(α, β, λ_p, λ_n)` of the multi-similarity contrastive loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MclParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_p: f64,
    pub lambda_n: f64,
}

impl Default for MclParams {
    fn default() -> Self {
        MclParams { alpha: 1.0, beta: 1.0, lambda_p: 0.0, lambda_n: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub tau: f64,
    /// `M` of CML and CCL.
    pub margin_const: f64,
    /// `w` of CCL.
    pub ccl_weight: f64,
    pub mcl_params: MclParams,
    pub uib_alpha: f64,
    /// DirectAU uniformity weight.
    pub gamma: f64,
    /// MAWU user-uniformity weight.
    pub gamma1: f64,
    /// MAWU item-uniformity weight.
    pub gamma2: f64,
    pub sml_lambda: f64,
    pub margin_mode: MarginMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Mawu,
            tau: 0.1,
            margin_const: 0.5,
            ccl_weight: 1.0,
            mcl_params: MclParams::default(),
            uib_alpha: 1.0,
            gamma: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            sml_lambda: 0.01,
            margin_mode: MarginMode::Learned,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(Error::Config("gamma, gamma1, gamma2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss value and gradients for every parameter the batch touched.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub value: f64,
    pub grads: BTreeMap<ParamKind, Grad>,
    /// Smallest distance from a hinge or clamp boundary encountered
    /// (∞ for smooth losses). Finite-difference checks need this well above
    /// the step size.
    pub kink_distance: f64,
    /// Set when a uniformity term was dropped for lack of distinct ids.
    pub uniformity_skipped: bool,
}

impl LossEvaluation {
    pub(crate) fn new(value: f64, grads: BTreeMap<ParamKind, Grad>) -> Self {
        LossEvaluation { value, grads, kink_distance: f64::INFINITY, uniformity_skipped: false }
    }

    pub fn grad(&self, kind: ParamKind) -> Option<&Grad> {
        self.grads.get(&kind)
    }
}

pub(crate) fn check_batch(emb: &Embeddings, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if batch.negatives.len() != batch.pairs.len() {
        return Err(Error::Config("batch negatives/pairs length mismatch".into()));
    }
    let (nu, ni) = (emb.users.rows(), emb.items.rows());
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        if u >= nu {
            return Err(Error::Index { what: "user", index: u, len: nu });
        }
        if i >= ni {
            return Err(Error::Index { what: "item", index: i, len: ni });
        }
        if let Some(&j) = batch.negatives[p].iter().find(|&&j| j >= ni) {
            return Err(Error::Index { what: "item", index: j, len: ni });
        }
    }
    Ok(())
}

/// Evaluates the configured loss on final embeddings `emb`. Gradients under
/// `UserEmb`/`ItemEmb` are w.r.t. `emb`.
pub fn evaluate(config: &LossConfig, state: &ModelState, emb: &Embeddings, batch: &Batch) -> Result<LossEvaluation> {
    match config.kind {
        LossKind::Bce => bce(state, emb, batch),
        LossKind::Mcl => mcl(state, emb, batch, &config.mcl_params),
        LossKind::Uib => uib(state, emb, batch, config.uib_alpha),
        LossKind::Bpr => bpr(state, emb, batch),
        LossKind::Cml => cml(state, emb, batch, config.margin_const),
        LossKind::Sml => sml(state, emb, batch, config.sml_lambda, config.margin_mode),
        LossKind::Ccl => ccl(state, emb, batch, config.ccl_weight, config.margin_const),
        LossKind::Ssm => ssm(state, emb, batch, config.tau),
        LossKind::Bc => bc(state, emb, batch, config.tau, config.margin_mode),
        LossKind::DirectAu => directau(state, emb, batch, config.gamma),
        LossKind::Mawu => mawu(state, emb, batch, config.gamma1, config.gamma2, config.margin_mode),
    }
}

/// Encoder forward, loss, encoder backward: gradients w.r.t. the stored
/// parameters of `state`.
pub fn loss_and_grad(config: &LossConfig, state: &ModelState, encoder: &Encoder, batch: &Batch) -> Result<LossEvaluation> {
    let emb = encoder.forward(state);
    let mut ev = evaluate(config, state, &emb, batch)?;
    if let Encoder::LightGcn { .. } = encoder {
        let gu = ev.grads.remove(&ParamKind::UserEmb).unwrap_or_else(|| Grad::zeros(state.num_users(), state.dim()));
        let gi = ev.grads.remove(&ParamKind::ItemEmb).unwrap_or_else(|| Grad::zeros(state.num_items(), state.dim()));
        let (bu, bi) = encoder.backward(gu, gi);
        ev.grads.insert(ParamKind::UserEmb, bu);
        ev.grads.insert(ParamKind::ItemEmb, bi);
    }
    Ok(ev)
}
