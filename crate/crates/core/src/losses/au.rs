//! Alignment/uniformity losses: DirectAU and MAWU.

use super::kernels::angular_cos;
use super::margins::Margins;
use super::workspace::{GradSink, NormSet};
use super::{check_batch, LossEvaluation, MarginMode};
use crate::data::Batch;
use crate::encoders::{Embeddings, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{dot, sq_dist};

/// `log mean_{a<b} exp(−2‖x̃_a − x̃_b‖²)` over the distinct rows in `set`;
/// adds `weight · ∂/∂x̃` to the set's accumulators. `None` with fewer than
/// two rows.
pub(crate) fn uniformity(set: &mut NormSet, weight: f64) -> Option<f64> {
    let k = set.len();
    if k < 2 {
        return None;
    }
    let sq: Vec<f64> = (0..k).map(|a| dot(set.unit(a), set.unit(a))).collect();
    let mut expo = Vec::with_capacity(k * (k - 1) / 2);
    let mut max = f64::NEG_INFINITY;
    for a in 0..k {
        let ua = set.unit(a);
        for b in a + 1..k {
            let d2 = (sq[a] + sq[b] - 2.0 * dot(ua, set.unit(b))).max(0.0);
            let e = -2.0 * d2;
            max = max.max(e);
            expo.push(e);
        }
    }
    let sum: f64 = expo.iter().map(|e| (e - max).exp()).sum();
    let count = expo.len() as f64;
    let value = max + sum.ln() - count.ln();
    if weight != 0.0 {
        // w_ab = softmax weight; ∂/∂x_a = −4 w_ab (x_a − x_b)
        let mut self_coef = vec![0.0; k];
        let mut idx = 0;
        for a in 0..k {
            for b in a + 1..k {
                let w = (expo[idx] - max).exp() / sum;
                idx += 1;
                let c = -4.0 * weight * w;
                self_coef[a] += c;
                self_coef[b] += c;
                set.add_unit_of(a, -c, b);
                set.add_unit_of(b, -c, a);
            }
        }
        for (a, &c) in self_coef.iter().enumerate() {
            set.add_unit_of(a, c, a);
        }
    }
    Some(value)
}

fn distinct_slots(batch: &Batch, users: &mut NormSet, items: &mut NormSet) -> Vec<(usize, usize)> {
    batch.pairs.iter().map(|&(u, i)| (users.slot(u), items.slot(i))).collect()
}

fn weighted_uniformity(
    users: &mut NormSet,
    items: &mut NormSet,
    gamma_user: f64,
    gamma_item: f64,
) -> (f64, bool) {
    let mut value = 0.0;
    let mut skipped = false;
    match uniformity(users, gamma_user) {
        Some(v) => value += gamma_user * v,
        None => skipped = true,
    }
    match uniformity(items, gamma_item) {
        Some(v) => value += gamma_item * v,
        None => skipped = true,
    }
    (value, skipped)
}

/// `mean ½‖ũ − ĩ‖² + γ·(unif_users + unif_items)`. Negatives are ignored.
///
/// The alignment term carries a factor ½ so that on the unit sphere it equals
/// `1 − s(u,i)`, making MAWU with zero margins differ from it by a constant.
pub fn directau(state: &ModelState, emb: &Embeddings, batch: &Batch, gamma: f64) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if !(gamma >= 0.0) {
        return Err(Error::Config("gamma must be >= 0".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let slots = distinct_slots(batch, &mut users, &mut items);
    let n = batch.len() as f64;
    let mut align = 0.0;
    for &(su, si) in &slots {
        align += 0.5 * sq_dist(users.unit(su), items.unit(si));
        let diff: Vec<f64> = users.unit(su).iter().zip(items.unit(si)).map(|(a, b)| a - b).collect();
        users.add(su, 1.0 / n, &diff);
        items.add(si, -1.0 / n, &diff);
    }
    let (unif, skipped) = weighted_uniformity(&mut users, &mut items, gamma, gamma);
    let sink = GradSink::new(state, emb);
    let mut ev = LossEvaluation::new(align / n + unif, sink.finish(&users, &items));
    ev.uniformity_skipped = skipped;
    Ok(ev)
}

/// Margin-aware alignment `−mean cos(clamp(θ̂_ui + M_u + M_i, 0, π))` plus
/// weighted uniformity `γ₁·unif_users + γ₂·unif_items`.
pub fn mawu(
    state: &ModelState,
    emb: &Embeddings,
    batch: &Batch,
    gamma1: f64,
    gamma2: f64,
    mode: MarginMode,
) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if !(gamma1 >= 0.0 && gamma2 >= 0.0) {
        return Err(Error::Config("gamma1 and gamma2 must be >= 0".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let mut sink = GradSink::new(state, emb);
    let mut margins = Margins::new(mode, state, emb);
    let slots = distinct_slots(batch, &mut users, &mut items);
    let n = batch.len() as f64;
    let mut align = 0.0;
    let mut kink = f64::INFINITY;
    for (&(u, i), &(su, si)) in batch.pairs.iter().zip(&slots) {
        let s = dot(users.unit(su), items.unit(si));
        if mode == MarginMode::Zero {
            align -= s;
            users.add(su, -1.0 / n, items.unit(si));
            items.add(si, -1.0 / n, users.unit(su));
            continue;
        }
        let pm = margins.pair(u, i);
        let a = angular_cos(s, pm.total());
        kink = kink.min(a.kink_distance);
        align -= a.value;
        let g_s = -a.d_sim / n;
        users.add(su, g_s, items.unit(si));
        items.add(si, g_s, users.unit(su));
        let g_m = -a.d_margin / n;
        margins.backward(u, i, &pm, g_m, g_m, &mut sink);
    }
    margins.finish(&mut sink);
    let (unif, skipped) = weighted_uniformity(&mut users, &mut items, gamma1, gamma2);
    let mut ev = LossEvaluation::new(align / n + unif, sink.finish(&users, &items));
    ev.kink_distance = kink;
    ev.uniformity_skipped = skipped;
    Ok(ev)
}
