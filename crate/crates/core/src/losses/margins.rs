//! Per-pair angular margins `(M_u, M_i)` under the five margin strategies.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::kernels::{sigmoid, softplus, ACOS_CLAMP};
use super::workspace::{GradSink, NormSet};
use crate::encoders::{Embeddings, ModelState};
use crate::error::Result;
use crate::tensor::{dot, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// `M_u = M_i = 0`.
    Zero,
    /// `p_max / p` ratios mapped affinely onto `[0, π/4]`.
    InversePopularity,
    /// `softplus(Wᵀf(·))` with a shared trainable projection `W`.
    UibFashion,
    /// Angle between user and item popularity-bucket embeddings, split evenly.
    BcFashion,
    /// `softplus` of per-user and per-item trainable parameters.
    Learned,
}

impl std::str::FromStr for MarginMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| crate::error::Error::Config(format!("unknown margin mode {s:?}")))
    }
}

/// Affine map of `p_max/p` onto `[0, π/4]`, computed over a popularity
/// vector. Counts below 1 are treated as 1.
#[derive(Clone, Copy, Debug)]
struct InversePop {
    max: f64,
    ratio_span: f64,
}

impl InversePop {
    fn new(pop: &[u32]) -> Self {
        let max = pop.iter().copied().max().unwrap_or(1).max(1) as f64;
        let min = pop.iter().copied().min().unwrap_or(1).max(1) as f64;
        InversePop { max, ratio_span: max / min - 1.0 }
    }

    fn margin(&self, p: u32) -> f64 {
        if self.ratio_span <= 0.0 {
            return 0.0;
        }
        let ratio = self.max / p.max(1) as f64;
        FRAC_PI_4 * (ratio - 1.0) / self.ratio_span
    }
}

/// Evaluates margins for one loss call and routes their gradients.
pub(crate) struct Margins<'a> {
    mode: MarginMode,
    state: &'a ModelState,
    emb: &'a Embeddings<'a>,
    inv_user: Option<InversePop>,
    inv_item: Option<InversePop>,
    pop_users: Option<NormSet<'a>>,
    pop_items: Option<NormSet<'a>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PairMargin {
    pub user: f64,
    pub item: f64,
    /// For bc_fashion: the raw cosine between popularity embeddings.
    pop_cos: f64,
}

impl PairMargin {
    pub fn total(&self) -> f64 {
        self.user + self.item
    }
}

impl<'a> Margins<'a> {
    pub fn new(mode: MarginMode, state: &'a ModelState, emb: &'a Embeddings<'a>) -> Self {
        let (inv_user, inv_item) = if mode == MarginMode::InversePopularity {
            (Some(InversePop::new(&state.user_pop)), Some(InversePop::new(&state.item_pop)))
        } else {
            (None, None)
        };
        let (pop_users, pop_items) = if mode == MarginMode::BcFashion {
            (Some(NormSet::new(&state.pop_user_emb)), Some(NormSet::new(&state.pop_item_emb)))
        } else {
            (None, None)
        };
        Margins { mode, state, emb, inv_user, inv_item, pop_users, pop_items }
    }

    pub fn mode(&self) -> MarginMode {
        self.mode
    }

    pub fn pair(&mut self, user: usize, item: usize) -> PairMargin {
        let none = PairMargin { user: 0.0, item: 0.0, pop_cos: 0.0 };
        match self.mode {
            MarginMode::Zero => none,
            MarginMode::InversePopularity => PairMargin {
                user: self.inv_user.unwrap().margin(self.state.user_pop[user]),
                item: self.inv_item.unwrap().margin(self.state.item_pop[item]),
                pop_cos: 0.0,
            },
            MarginMode::Learned => PairMargin {
                user: softplus(self.state.user_margin.row(user)[0]),
                item: softplus(self.state.item_margin.row(item)[0]),
                pop_cos: 0.0,
            },
            MarginMode::UibFashion => {
                let w = self.state.boundary_proj.row(0);
                PairMargin {
                    user: softplus(dot(w, self.emb.users.row(user))),
                    item: softplus(dot(w, self.emb.items.row(item))),
                    pop_cos: 0.0,
                }
            }
            MarginMode::BcFashion => {
                let (pu, pi) = (self.pop_users.as_mut().unwrap(), self.pop_items.as_mut().unwrap());
                let su = pu.slot(self.state.user_bucket(user));
                let si = pi.slot(self.state.item_bucket(item));
                let c = dot(pu.unit(su), pi.unit(si));
                let angle = c.clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP).acos();
                PairMargin { user: angle / 2.0, item: angle / 2.0, pop_cos: c }
            }
        }
    }

    /// Routes `∂L/∂M_u = g_user`, `∂L/∂M_i = g_item` into parameter gradients.
    pub fn backward(&mut self, user: usize, item: usize, m: &PairMargin, g_user: f64, g_item: f64, sink: &mut GradSink) {
        match self.mode {
            MarginMode::Zero | MarginMode::InversePopularity => {}
            MarginMode::Learned => {
                let ru = self.state.user_margin.row(user)[0];
                let ri = self.state.item_margin.row(item)[0];
                sink.grad(ParamKind::UserMargin).add_scalar(user, g_user * sigmoid(ru));
                sink.grad(ParamKind::ItemMargin).add_scalar(item, g_item * sigmoid(ri));
            }
            MarginMode::UibFashion => {
                let w = self.state.boundary_proj.row(0);
                let fu = self.emb.users.row(user);
                let fi = self.emb.items.row(item);
                let cu = g_user * sigmoid(dot(w, fu));
                let ci = g_item * sigmoid(dot(w, fi));
                let gw = sink.grad(ParamKind::BoundaryProj);
                gw.axpy(0, cu, fu);
                gw.axpy(0, ci, fi);
                sink.grad(ParamKind::UserEmb).axpy(user, cu, w);
                sink.grad(ParamKind::ItemEmb).axpy(item, ci, w);
            }
            MarginMode::BcFashion => {
                let lim = 1.0 - ACOS_CLAMP;
                if m.pop_cos.abs() >= lim {
                    return;
                }
                // M_u = M_i = acos(c)/2
                let g_angle = 0.5 * (g_user + g_item);
                let g_cos = -g_angle / (1.0 - m.pop_cos * m.pop_cos).sqrt();
                let (pu, pi) = (self.pop_users.as_mut().unwrap(), self.pop_items.as_mut().unwrap());
                let su = pu.slot(self.state.user_bucket(user));
                let si = pi.slot(self.state.item_bucket(item));
                pu.add(su, g_cos, pi.unit(si));
                pi.add(si, g_cos, pu.unit(su));
            }
        }
    }

    pub fn finish(self, sink: &mut GradSink) {
        if let (Some(pu), Some(pi)) = (&self.pop_users, &self.pop_items) {
            pu.backprop(sink.grad(ParamKind::PopUserEmb));
            pi.backprop(sink.grad(ParamKind::PopItemEmb));
        }
    }
}

/// Effective `(M_u, M_i)` for one pair, for reporting. `emb` supplies the
/// final embeddings used by `uib_fashion`.
pub fn margin_value(
    state: &ModelState,
    emb: &Embeddings,
    mode: MarginMode,
    user: usize,
    item: usize,
) -> Result<(f64, f64)> {
    state.check_user(user)?;
    state.check_item(item)?;
    let emb = Embeddings::borrowed(&emb.users, &emb.items);
    let mut m = Margins::new(mode, state, &emb);
    let pm = m.pair(user, item);
    Ok((pm.user, pm.item))
}
