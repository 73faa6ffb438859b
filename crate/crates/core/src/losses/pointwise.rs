//! Pointwise losses: BCE, MCL and UIB.

use super::kernels::{logsumexp, sigmoid, softplus};
use super::workspace::{GradSink, NormSet};
use super::{check_batch, LossEvaluation, MclParams};
use crate::data::Batch;
use crate::encoders::{Embeddings, ModelState};
use crate::error::{Error, Result};
use crate::tensor::{dot, sq_dist, ParamKind};

const PROB_CLAMP: f64 = 1e-12;

/// `−log p` with `p` clamped to `[1e-12, 1 − 1e-12]`; returns value and
/// `∂/∂x` where `p = σ(sign·x)`.
fn neg_log_sigmoid(x: f64, sign: f64) -> (f64, f64) {
    let p = sigmoid(sign * x);
    if p < PROB_CLAMP {
        (-PROB_CLAMP.ln(), 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (-(1.0 - PROB_CLAMP).ln(), 0.0)
    } else {
        (softplus(-sign * x), -sign * (1.0 - p))
    }
}

/// `−Σ_pos log σ(s) − Σ_neg log(1 − σ(s))`, averaged over all terms.
pub fn bce(state: &ModelState, emb: &Embeddings, batch: &Batch) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let n_terms = (batch.len() + batch.num_negative_terms()) as f64;
    let mut total = 0.0;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let term = |item: usize, sign: f64, users: &mut NormSet, items: &mut NormSet| {
            let si = items.slot(item);
            let s = dot(users.unit(su), items.unit(si));
            let (v, g) = neg_log_sigmoid(s, sign);
            let g = g / n_terms;
            users.add(su, g, items.unit(si));
            items.add(si, g, users.unit(su));
            v
        };
        total += term(i, 1.0, &mut users, &mut items);
        for &j in &batch.negatives[p] {
            total += term(j, -1.0, &mut users, &mut items);
        }
    }
    let sink = GradSink::new(state, emb);
    Ok(LossEvaluation::new(total / n_terms, sink.finish(&users, &items)))
}

/// `(1/α) log(1 + (1/m) Σ_pos e^{α(d + λ_p)}) + (1/β) log(1 + (1/m) Σ_neg e^{−β(d + λ_n)})`
/// with squared distances on normalised vectors and `m` the number of
/// positive (resp. negative) pairs in the batch.
pub fn mcl(state: &ModelState, emb: &Embeddings, batch: &Batch, params: &MclParams) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if !(params.alpha > 0.0 && params.beta > 0.0) {
        return Err(Error::Config("mcl requires alpha > 0 and beta > 0".into()));
    }
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);

    // (user slot, item slot, distance) for positives then negatives
    let mut pos = Vec::with_capacity(batch.len());
    let mut neg = Vec::with_capacity(batch.num_negative_terms());
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let si = items.slot(i);
        pos.push((su, si, sq_dist(users.unit(su), items.unit(si))));
        for &j in &batch.negatives[p] {
            let sj = items.slot(j);
            neg.push((su, sj, sq_dist(users.unit(su), items.unit(sj))));
        }
    }

    let mut total = 0.0;
    // One block per sign: (terms, exponent scale, offset, outer 1/scale)
    for (terms, scale, offset) in [(&pos, params.alpha, params.lambda_p), (&neg, -params.beta, params.lambda_n)] {
        if terms.is_empty() {
            continue;
        }
        let xs: Vec<f64> = terms.iter().map(|t| scale * (t.2 + offset)).collect();
        let lse = logsumexp(&xs);
        let z = lse - (terms.len() as f64).ln();
        total += softplus(z) / scale.abs();
        // ∂/∂d_k = sign(scale) · σ(z) · softmax_k
        let outer = sigmoid(z) * scale.signum();
        for (t, x) in terms.iter().zip(&xs) {
            let g_d = outer * (x - lse).exp();
            // ∂d/∂ũ = 2(ũ − ĩ)
            let (su, si) = (t.0, t.1);
            let diff: Vec<f64> = users.unit(su).iter().zip(items.unit(si)).map(|(a, b)| a - b).collect();
            users.add(su, 2.0 * g_d, &diff);
            items.add(si, -2.0 * g_d, &diff);
        }
    }
    let sink = GradSink::new(state, emb);
    Ok(LossEvaluation::new(total, sink.finish(&users, &items)))
}

/// `−Σ_pos log σ(s − b_u) − α Σ_neg log σ(b_u − s)` averaged over terms,
/// with boundary `b_u = Wᵀf(u)` on the unnormalised user vector.
pub fn uib(state: &ModelState, emb: &Embeddings, batch: &Batch, alpha: f64) -> Result<LossEvaluation> {
    check_batch(emb, batch)?;
    if state.boundary_proj.cols() != emb.dim() {
        return Err(Error::Config("boundary projection dimension mismatch".into()));
    }
    let w = state.boundary_proj.row(0);
    let mut users = NormSet::new(&emb.users);
    let mut items = NormSet::new(&emb.items);
    let mut sink = GradSink::new(state, emb);
    let n_terms = (batch.len() + batch.num_negative_terms()) as f64;
    let mut total = 0.0;
    for (p, &(u, i)) in batch.pairs.iter().enumerate() {
        let su = users.slot(u);
        let fu = emb.users.row(u);
        let b = dot(w, fu);
        let mut g_b = 0.0;

        let si = items.slot(i);
        let s = dot(users.unit(su), items.unit(si));
        total += softplus(b - s);
        let g = -sigmoid(b - s) / n_terms; // ∂/∂s
        users.add(su, g, items.unit(si));
        items.add(si, g, users.unit(su));
        g_b -= g;

        for &j in &batch.negatives[p] {
            let sj = items.slot(j);
            let s = dot(users.unit(su), items.unit(sj));
            total += alpha * softplus(s - b);
            let g = alpha * sigmoid(s - b) / n_terms;
            users.add(su, g, items.unit(sj));
            items.add(sj, g, users.unit(su));
            g_b -= g;
        }
        if g_b != 0.0 {
            sink.grad(ParamKind::BoundaryProj).axpy(0, g_b, fu);
            sink.grad(ParamKind::UserEmb).axpy(u, g_b, w);
        }
    }
    Ok(LossEvaluation::new(total / n_terms, sink.finish(&users, &items)))
}
