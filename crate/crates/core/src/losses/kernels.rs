//! Numerically stable scalar helpers shared by the losses and the relation
//! checks.

use std::f64::consts::PI;

/// Clamp applied to cosine similarities before `arccos`.
pub const ACOS_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)`
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln Σ eˣ`; −∞ for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sampled-softmax loss of one triplet:
/// `−log e^{s⁺/τ} / (e^{s⁺/τ} + Σ_j e^{s_j/τ})`.
pub fn ssm_triplet(s_pos: f64, s_negs: &[f64], tau: f64) -> f64 {
    let mut logits = Vec::with_capacity(s_negs.len() + 1);
    logits.push(s_pos / tau);
    logits.extend(s_negs.iter().map(|s| s / tau));
    logsumexp(&logits) - s_pos / tau
}

/// BPR loss of one triplet, `−log σ(s⁺ − s⁻)`.
pub fn bpr_triplet(s_pos: f64, s_neg: f64) -> f64 {
    softplus(s_neg - s_pos)
}

/// `cos(clamp(arccos(s) + m, 0, π))` with derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularCos {
    pub value: f64,
    pub d_sim: f64,
    pub d_margin: f64,
    /// Distance to the nearest non-differentiable point (clamp boundaries).
    pub kink_distance: f64,
}

pub fn angular_cos(sim: f64, margin: f64) -> AngularCos {
    let lo = -1.0 + ACOS_CLAMP;
    let hi = 1.0 - ACOS_CLAMP;
    let clamped = sim.clamp(lo, hi);
    let sim_active = clamped != sim;
    let theta = clamped.acos();
    let t = theta + margin;
    let kink_distance = (t - PI).abs().min((sim - hi).abs()).min((sim - lo).abs());
    if t >= PI {
        return AngularCos { value: -1.0, d_sim: 0.0, d_margin: 0.0, kink_distance };
    }
    if t <= 0.0 {
        return AngularCos { value: 1.0, d_sim: 0.0, d_margin: 0.0, kink_distance: kink_distance.min(t.abs()) };
    }
    let sin_t = t.sin();
    AngularCos {
        value: t.cos(),
        d_sim: if sim_active { 0.0 } else { sin_t / theta.sin() },
        d_margin: -sin_t,
        kink_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_and_sigmoid() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lse_stable() {
        assert!((logsumexp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn angular_cos_cases() {
        let a = angular_cos(0.5, PI / 3.0);
        assert!((a.value - (2.0 * PI / 3.0).cos()).abs() < 1e-12);
        let b = angular_cos(0.0, 3.5);
        assert_eq!(b.value, -1.0);
        assert_eq!(b.d_margin, 0.0);
        assert_eq!(b.d_sim, 0.0);
        // derivative check away from kinks
        let h = 1e-6;
        let c = angular_cos(0.3, 0.4);
        let fd = (angular_cos(0.3 + h, 0.4).value - angular_cos(0.3 - h, 0.4).value) / (2.0 * h);
        assert!((fd - c.d_sim).abs() < 1e-8);
        let fdm = (angular_cos(0.3, 0.4 + h).value - angular_cos(0.3, 0.4 - h).value) / (2.0 * h);
        assert!((fdm - c.d_margin).abs() < 1e-8);
    }
}
