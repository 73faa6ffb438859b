//! Central finite-difference check of analytic loss gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evaluate, loss_and_grad, LossConfig};
use crate::data::Batch;
use crate::encoders::{Encoder, ModelState};
use crate::error::{Error, Result};
use crate::tensor::ParamKind;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero compare on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(param, row, col, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, usize, f64, f64)>,
    pub kink_distance: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn loss_value(config: &LossConfig, state: &ModelState, encoder: &Encoder, batch: &Batch) -> Result<f64> {
    let emb = encoder.forward(state);
    let v = evaluate(config, state, &emb, batch)?.value;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{} loss at perturbed point", config.kind.name())));
    }
    Ok(v)
}

/// Compares analytic gradients with central differences of step `eps` over
/// the touched coordinates of every parameter, subsampled to `max_coords`
/// with `seed` when there are more.
pub fn grad_check(
    config: &LossConfig,
    state: &ModelState,
    encoder: &Encoder,
    batch: &Batch,
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be > 0, got {eps}")));
    }
    let ev = loss_and_grad(config, state, encoder, batch)?;
    if !ev.value.is_finite() {
        return Err(Error::NonFinite(format!("{} loss at base point", config.kind.name())));
    }
    let mut coords: Vec<(ParamKind, usize, usize)> = Vec::new();
    for (&kind, g) in &ev.grads {
        let cols = g.values().cols();
        for r in g.touched_rows() {
            coords.extend((0..cols).map(|c| (kind, r, c)));
        }
    }
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        coords.sort();
    }

    let mut probe = state.clone();
    let mut report = GradCheckReport {
        coords_checked: coords.len(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        kink_distance: ev.kink_distance,
    };
    for (kind, r, c) in coords {
        let orig = probe.param(kind).row(r)[c];
        probe.param_mut(kind).row_mut(r)[c] = orig + eps;
        let plus = loss_value(config, &probe, encoder, batch)?;
        probe.param_mut(kind).row_mut(r)[c] = orig - eps;
        let minus = loss_value(config, &probe, encoder, batch)?;
        probe.param_mut(kind).row_mut(r)[c] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = ev.grads[&kind].row(r)[c];
        let rel = relative_error(analytic, numeric);
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((kind.name().to_string(), r, c, analytic, numeric));
        }
    }
    Ok(report)
}
