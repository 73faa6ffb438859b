//! Adam with L2 weight decay and Xavier initialisation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::ModelState;
use crate::error::{Error, Result};
use crate::tensor::{Grad, ParamKind, Tensor};

/// Uniform Xavier bound for a `d`-dimensional table: `√(6 / 2d)`.
pub fn xavier_bound(dim: usize) -> f64 {
    (6.0 / (2.0 * dim as f64)).sqrt()
}

/// Embedding and popularity tables ~ U(±√(6/2d)); margins and the boundary
/// projection are zeroed. Tables are filled in [`ParamKind::ALL`] order from
/// one seeded stream.
pub fn init_params(state: &mut ModelState, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = xavier_bound(state.dim());
    for kind in ParamKind::ALL {
        let t = state.param_mut(kind);
        match kind {
            ParamKind::UserEmb | ParamKind::ItemEmb | ParamKind::PopUserEmb | ParamKind::PopItemEmb => {
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
            }
            ParamKind::UserMargin | ParamKind::ItemMargin | ParamKind::BoundaryProj => {
                t.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Update moments only on rows the gradient touched.
    pub lazy: bool,
    pub step: u64,
    pub moments: BTreeMap<ParamKind, Moments>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            lazy: true,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn dense(mut self) -> Self {
        self.lazy = false;
        self
    }

    /// One bias-corrected Adam step over every parameter present in `grads`,
    /// with `weight_decay · θ` added to the gradient.
    pub fn step(&mut self, state: &mut ModelState, grads: &BTreeMap<ParamKind, Grad>) -> Result<()> {
        for (kind, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", kind.name())));
            }
            if g.values().shape() != state.param(*kind).shape() {
                return Err(Error::Config(format!(
                    "gradient shape {:?} does not match {} {:?}",
                    g.values().shape(),
                    kind.name(),
                    state.param(*kind).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        for (&kind, g) in grads {
            let param = state.param_mut(kind);
            let (rows, cols) = param.shape();
            let mom = self
                .moments
                .entry(kind)
                .or_insert_with(|| Moments { m: Tensor::zeros(rows, cols), v: Tensor::zeros(rows, cols) });
            for r in 0..rows {
                if self.lazy && !g.is_touched(r) {
                    continue;
                }
                let gr = g.row(r);
                let (m, v, p) = (mom.m.row_mut(r), mom.v.row_mut(r), param.row_mut(r));
                for c in 0..cols {
                    let gc = gr[c] + wd * p[c];
                    m[c] = b1 * m[c] + (1.0 - b1) * gc;
                    v[c] = b2 * v[c] + (1.0 - b2) * gc * gc;
                    let m_hat = m[c] / bc1;
                    let v_hat = v[c] / bc2;
                    p[c] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
