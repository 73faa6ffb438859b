//! Setwise losses over `(u, i, N_u)`: CCL, SSM and BC.

use super::kernels::{angular_cos, logsumexp};
use super::margins::Margins;
use super::workspace::{GradSink, NormSet};
use super::{check_batch, LossEvaluation, MarginMode};
use crate::data::Batch;
use crate::encoders::{Embeddings, ModelState};
use crate::error::{Error, Result};
use crate::tensor::dot;

/// `1 − s(u,i) + (w/|N_u|) Σ_j [s(u,j) − M]₊`, averaged over pairs.
pub fn ccl(state: &ModelState, emb: &Embeddings, batch: &Batch, weight: f64, margin: f64) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if batch.negatives.iter().any(Vec::is_empty) {
        return Err(Error::Config("ccl needs at least one negative per pair".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut kink = f64::INFINITY;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let si = items.slot(i);
        total += 1.0 - dot(users.unit(su), items.unit(si));
        users.add(su, -1.0 / n, items.unit(si));
        items.add(si, -1.0 / n, users.unit(su));
        let negs = &batch.negatives[p];
        let w = weight / negs.len() as f64;
        for &j in negs {
            let sj = items.slot(j);
            let h = dot(users.unit(su), items.unit(sj)) - margin;
            kink = kink.min(h.abs());
            if h > 0.0 {
                total += w * h;
                users.add(su, w / n, items.unit(sj));
                items.add(sj, w / n, users.unit(su));
            }
        }
    }
    let sink = GradSink::new(state, emb);
    let mut ev = LossEvaluation::new(total / n, sink.finish(&users, &items));
    ev.kink_distance = kink;
    Ok(ev)
}

/// Softmax cross-entropy over `{i} ∪ N_u` with temperature τ, averaged over
/// pairs. The positive logit is `c/τ` where `c` comes from `positive_cos`.
fn softmax_setwise(
    state: &ModelState,
    emb: &Embeddings,
    batch: &Batch,
    tau: f64,
    mode: Option<MarginMode>,
) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let mut sink = GradSink::new(state, emb);
    let mut margins = mode.map(|m| Margins::new(m, state, emb));
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut kink = f64::INFINITY;
    let mut logits = Vec::new();
    let mut neg_slots = Vec::new();
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let si = items.slot(i);
        let s_pos = dot(users.unit(su), items.unit(si));

        // (cos value, ∂c/∂s, ∂c/∂M, margin) for the positive pair
        let (c, dc_ds, dc_dm, pm) = match margins.as_mut() {
            Some(m) if m.mode() != MarginMode::Zero => {
                let pm = m.pair(u, i);
                let a = angular_cos(s_pos, pm.total());
                kink = kink.min(a.kink_distance);
                (a.value, a.d_sim, a.d_margin, Some(pm))
            }
            _ => (s_pos, 1.0, 0.0, None),
        };

        logits.clear();
        neg_slots.clear();
        logits.push(c / tau);
        for &j in &batch.negatives[p] {
            let sj = items.slot(j);
            neg_slots.push(sj);
            logits.push(dot(users.unit(su), items.unit(sj)) / tau);
        }
        let lse = logsumexp(&logits);
        total += lse - logits[0];

        let g_c = ((logits[0] - lse).exp() - 1.0) / (tau * n);
        let g_s = g_c * dc_ds;
        users.add(su, g_s, items.unit(si));
        items.add(si, g_s, users.unit(su));
        for (k, &sj) in neg_slots.iter().enumerate() {
            let g = (logits[k + 1] - lse).exp() / (tau * n);
            users.add(su, g, items.unit(sj));
            items.add(sj, g, users.unit(su));
        }
        if let (Some(pm), Some(m)) = (pm, margins.as_mut()) {
            let g_m = g_c * dc_dm;
            m.backward(u, i, &pm, g_m, g_m, &mut sink);
        }
    }
    if let Some(m) = margins {
        m.finish(&mut sink);
    }
    let mut ev = LossEvaluation::new(total / n, sink.finish(&users, &items));
    ev.kink_distance = kink;
    Ok(ev)
}

/// Sampled softmax, `−log e^{s⁺/τ} / (e^{s⁺/τ} + Σ_j e^{s_j/τ})`.
pub fn ssm(state: &ModelState, emb: &Embeddings, batch: &Batch, tau: f64) -> Result<LossEvaluation> {
    softmax_setwise(state, emb, batch, tau, None)
}

/// SSM with the positive logit replaced by `cos(θ̂_ui + M_ui)/τ`, the angle
/// sum clamped to `[0, π]`. Negative logits carry no margin.
pub fn bc(state: &ModelState, emb: &Embeddings, batch: &Batch, tau: f64, mode: MarginMode) -> Result<LossEvaluation> {
    softmax_setwise(state, emb, batch, tau, Some(mode))
}
