//! Pairwise losses over `(u, i, j)` triplets: BPR, CML and SML.

use super::kernels::{sigmoid, softplus};
use super::margins::Margins;
use super::workspace::{GradSink, NormSet};
use super::{check_batch, LossEvaluation, MarginMode};
use crate::data::Batch;
use crate::encoders::{Embeddings, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{dot, sq_dist};

/// `−log σ(s(u,i) − s(u,j))` averaged over triplets. Needs exactly one
/// negative per pair.
pub fn bpr(state: &ModelState, emb: &Embeddings, batch: &Batch) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if let Some(bad) = batch.negatives.iter().find(|n| n.len() != 1) {
        return Err(Error::Config(format!("bpr needs exactly 1 negative per pair, got {}", bad.len())));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let si = items.slot(i);
        let sj = items.slot(batch.negatives[p][0]);
        let x = dot(users.unit(su), items.unit(si)) - dot(users.unit(su), items.unit(sj));
        total += softplus(-x);
        let g = -sigmoid(-x) / n;
        let diff: Vec<f64> = items.unit(si).iter().zip(items.unit(sj)).map(|(a, b)| a - b).collect();
        users.add(su, g, &diff);
        items.add(si, g, users.unit(su));
        items.add(sj, -g, users.unit(su));
    }
    let sink = GradSink::new(state, emb);
    Ok(LossEvaluation::new(total / n, sink.finish(&users, &items)))
}

/// `∂‖a − b‖²/∂a = 2(a − b)` accumulated for both endpoints.
fn add_sqdist_grad(a_set: &mut NormSet, a: usize, b_set: &mut NormSet, b: usize, g: f64) {
    let diff: Vec<f64> = a_set.unit(a).iter().zip(b_set.unit(b)).map(|(x, y)| x - y).collect();
    a_set.add(a, 2.0 * g, &diff);
    b_set.add(b, -2.0 * g, &diff);
}

fn add_sqdist_grad_items(items: &mut NormSet, a: usize, b: usize, g: f64) {
    let diff: Vec<f64> = items.unit(a).iter().zip(items.unit(b)).map(|(x, y)| x - y).collect();
    items.add(a, 2.0 * g, &diff);
    items.add(b, -2.0 * g, &diff);
}

/// `[d(u,i) − d(u,j) + M]₊` on squared distances, averaged over all
/// `(pair, negative)` triplets. Subgradient 0 at the kink.
pub fn cml(state: &ModelState, emb: &Embeddings, batch: &Batch, margin: f64) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    let n_trip = batch.num_negative_terms();
    if n_trip == 0 {
        return Err(Error::Config("cml needs at least one negative".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let n = n_trip as f64;
    let mut total = 0.0;
    let mut kink = f64::INFINITY;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let si = items.slot(i);
        let d_pos = sq_dist(users.unit(su), items.unit(si));
        for &j in &batch.negatives[p] {
            let sj = items.slot(j);
            let h = d_pos - sq_dist(users.unit(su), items.unit(sj)) + margin;
            kink = kink.min(h.abs());
            if h > 0.0 {
                total += h;
                add_sqdist_grad(&mut users, su, &mut items, si, 1.0 / n);
                add_sqdist_grad(&mut users, su, &mut items, sj, -1.0 / n);
            }
        }
    }
    let sink = GradSink::new(state, emb);
    let mut ev = LossEvaluation::new(total / n, sink.finish(&users, &items));
    ev.kink_distance = kink;
    Ok(ev)
}

/// User- and item-centric hinges with per-id margins plus the
/// margin-expansion term `λ·L_AM`, `L_AM = −(mean M_u + mean M_i)` over the
/// batch pairs.
pub fn sml(
    state: &ModelState,
    emb: &Embeddings,
    batch: &Batch,
    lambda: f64,
    mode: MarginMode,
) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    let n_trip = batch.num_negative_terms();
    if n_trip == 0 {
        return Err(Error::Config("sml needs at least one negative".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let mut margins = Margins::new(mode, state, emb);
    let mut sink = GradSink::new(state, emb);
    let n = n_trip as f64;
    let n_pairs = batch.len() as f64;
    let mut hinge_total = 0.0;
    let mut am_total = 0.0;
    let mut kink = f64::INFINITY;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let m = margins.pair(u, i);
        let su = users.slot(u);
        let si = items.slot(i);
        let d_ui = sq_dist(users.unit(su), items.unit(si));
        let mut g_mu = -lambda / n_pairs;
        let mut g_mi = -lambda / n_pairs;
        am_total -= m.user + m.item;
        for &j in &batch.negatives[p] {
            let sj = items.slot(j);
            let h_user = d_ui - sq_dist(users.unit(su), items.unit(sj)) + m.user;
            let h_item = d_ui - sq_dist(items.unit(si), items.unit(sj)) + m.item;
            kink = kink.min(h_user.abs()).min(h_item.abs());
            if h_user > 0.0 {
                hinge_total += h_user;
                add_sqdist_grad(&mut users, su, &mut items, si, 1.0 / n);
                add_sqdist_grad(&mut users, su, &mut items, sj, -1.0 / n);
                g_mu += 1.0 / n;
            }
            if h_item > 0.0 {
                hinge_total += h_item;
                add_sqdist_grad(&mut users, su, &mut items, si, 1.0 / n);
                add_sqdist_grad_items(&mut items, si, sj, -1.0 / n);
                g_mi += 1.0 / n;
            }
        }
        margins.backward(u, i, &m, g_mu, g_mi, &mut sink);
    }
    margins.finish(&mut sink);
    let value = hinge_total / n + lambda * am_total / n_pairs;
    let mut ev = LossEvaluation::new(value, sink.finish(&users, &items));
    ev.kink_distance = kink;
    Ok(ev)
}
