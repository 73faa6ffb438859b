//! Numerical checks of the algebraic relations between the losses: exact
//! identities at machine precision and asymptotic limits as averaged trends.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::encoders::{Embeddings, ModelState};
use crate::error::{Error, Result};
use crate::losses::{self, kernels, MarginMode};
use crate::tensor::{dot, Tensor};

/// Dimension of the random embedding ensembles.
pub const ENSEMBLE_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationId {
    SsmBpr,
    BcZeroMargin,
    TauZero,
    TauInf,
    NumNeg,
    TheoremA1,
}

impl RelationId {
    pub const ALL: [RelationId; 6] = [
        RelationId::SsmBpr,
        RelationId::BcZeroMargin,
        RelationId::TauZero,
        RelationId::TauInf,
        RelationId::NumNeg,
        RelationId::TheoremA1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationId::SsmBpr => "ssm_bpr",
            RelationId::BcZeroMargin => "bc_zero_margin",
            RelationId::TauZero => "tau_zero",
            RelationId::TauInf => "tau_inf",
            RelationId::NumNeg => "num_neg",
            RelationId::TheoremA1 => "theorem_a1",
        }
    }
}

impl std::str::FromStr for RelationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationId::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown relation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sweep_value: f64,
    pub mean_disc: f64,
    pub max_disc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub relation: String,
    pub sweep_var: String,
    pub points: Vec<SweepPoint>,
    /// What `passed` asserts.
    pub criterion: String,
    pub passed: bool,
    /// Informational measurements that do not affect `passed`.
    pub info: BTreeMap<String, f64>,
}

impl RelationReport {
    fn new(id: RelationId, sweep_var: &str, criterion: &str) -> Self {
        RelationReport {
            relation: id.name().to_string(),
            sweep_var: sweep_var.to_string(),
            points: Vec::new(),
            criterion: criterion.to_string(),
            passed: false,
            info: BTreeMap::new(),
        }
    }

    fn push(&mut self, sweep_value: f64, discs: &[f64]) {
        let mean_disc = discs.iter().sum::<f64>() / discs.len().max(1) as f64;
        let max_disc = discs.iter().copied().fold(0.0, f64::max);
        self.points.push(SweepPoint { sweep_value, mean_disc, max_disc });
    }

    fn max_disc(&self) -> f64 {
        self.points.iter().map(|p| p.max_disc).fold(0.0, f64::max)
    }

    fn means_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].mean_disc <= w[0].mean_disc)
    }

    fn means_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].mean_disc < w[0].mean_disc)
    }

    fn final_mean(&self) -> f64 {
        self.points.last().map_or(f64::INFINITY, |p| p.mean_disc)
    }
}

/// `relation,sweep_value,mean_disc,max_disc`
pub fn reports_csv(reports: &[RelationReport]) -> String {
    let mut s = String::from("relation,sweep_value,mean_disc,max_disc\n");
    for r in reports {
        for p in &r.points {
            writeln!(s, "{},{},{:e},{:e}", r.relation, p.sweep_value, p.mean_disc, p.max_disc).unwrap();
        }
    }
    s
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One-user batch state: `user` against items `[pos, negs...]`.
fn single_user_state(user: &[f64], items: &[Vec<f64>]) -> (ModelState, Batch) {
    let d = user.len();
    let mut s = ModelState::new(1, items.len(), d, vec![1], vec![1; items.len()]);
    s.user_emb = Tensor::from_vec(1, d, user.to_vec());
    s.item_emb = Tensor::from_rows(items);
    let batch = Batch { pairs: vec![(0, 0)], negatives: vec![(1..items.len()).collect()] };
    (s, batch)
}

/// Random batch of `pairs` pairs over fresh users/items with `negs`
/// distinct negatives each. Every tenth batch makes positives nearly
/// parallel to their users.
fn random_batch_state(rng: &mut ChaCha8Rng, trial: usize, pairs: usize, negs: usize) -> (ModelState, Batch) {
    let d = ENSEMBLE_DIM;
    let ni = pairs * (negs + 1);
    let mut s = ModelState::new(pairs, ni, d, vec![1; pairs], vec![1; ni]);
    let mut users = Vec::with_capacity(pairs);
    let mut items = Vec::with_capacity(ni);
    let mut batch = Batch::default();
    for p in 0..pairs {
        let u = random_unit(rng, d);
        let pos = if trial % 10 == 9 {
            let noise = random_unit(rng, d);
            u.iter().zip(&noise).map(|(a, b)| a + 1e-7 * b).collect()
        } else {
            random_unit(rng, d)
        };
        users.push(u);
        let base = items.len();
        items.push(pos);
        for _ in 0..negs {
            items.push(random_unit(rng, d));
        }
        batch.pairs.push((p, base));
        batch.negatives.push((base + 1..base + 1 + negs).collect());
    }
    s.user_emb = Tensor::from_rows(&users);
    s.item_emb = Tensor::from_rows(&items);
    (s, batch)
}

/// `|SSM(|N|=1, τ=1) − BPR|` on random batches; exact to 1e-12.
pub fn check_ssm_equals_bpr(trials: usize, seed: u64) -> Result<RelationReport> {
    let mut rep = RelationReport::new(RelationId::SsmBpr, "tau", "max |ssm(|N|=1, tau=1) - bpr| <= 1e-12");
    let mut discs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = trial_rng(seed, t as u64);
        let (s, b) = random_batch_state(&mut rng, t, 8, 1);
        let emb = Embeddings::borrowed(&s.user_emb, &s.item_emb);
        let ssm = losses::ssm(&s, &emb, &b, 1.0)?.value;
        let bpr = losses::bpr(&s, &emb, &b)?.value;
        discs.push((ssm - bpr).abs());
    }
    rep.push(1.0, &discs);
    rep.passed = rep.max_disc() <= 1e-12;
    Ok(rep)
}

/// `|BC(M=0) − SSM|` for τ ∈ {0.1, 1}, alternating |N| ∈ {1, 30} over trials.
pub fn check_bc_zero_margin(trials: usize, seed: u64) -> Result<RelationReport> {
    let mut rep = RelationReport::new(RelationId::BcZeroMargin, "tau", "max |bc(M=0) - ssm| <= 1e-12");
    for (k, tau) in [0.1, 1.0].into_iter().enumerate() {
        let mut discs = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng = trial_rng(seed, (k * trials + t) as u64);
            let negs = if t % 2 == 0 { 1 } else { 30 };
            let (s, b) = random_batch_state(&mut rng, t, 8, negs);
            let emb = Embeddings::borrowed(&s.user_emb, &s.item_emb);
            let bc = losses::bc(&s, &emb, &b, tau, MarginMode::Zero)?.value;
            let ssm = losses::ssm(&s, &emb, &b, tau)?.value;
            discs.push((bc - ssm).abs());
        }
        rep.push(tau, &discs);
    }
    rep.passed = rep.max_disc() <= 1e-12;
    Ok(rep)
}

/// Positive and negatives whose hardest-negative gap and hinge argument are
/// both at least `0.05` away from a kink.
fn tau_zero_instance(rng: &mut ChaCha8Rng, negs: usize) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
    loop {
        let u = random_unit(rng, ENSEMBLE_DIM);
        let items: Vec<Vec<f64>> = (0..=negs).map(|_| random_unit(rng, ENSEMBLE_DIM)).collect();
        let s: Vec<f64> = items.iter().map(|v| dot(&u, v)).collect();
        let mut neg = s[1..].to_vec();
        neg.sort_by(|a, b| b.total_cmp(a));
        let arg = neg[0] - s[0];
        let gap = if neg.len() > 1 { neg[0] - neg[1] } else { f64::INFINITY };
        if gap >= 0.05 && arg.abs() >= 0.05 {
            return (u, items, arg.max(0.0));
        }
    }
}

/// `|τ·SSM(τ) − [s(u,j_max) − s(u,i)]₊|` along a descending τ sweep.
pub fn check_tau_zero_limit(taus: &[f64], trials: usize, seed: u64) -> Result<RelationReport> {
    let mut rep = RelationReport::new(
        RelationId::TauZero,
        "tau",
        "mean discrepancy non-increasing along the sweep and <= 1e-2 at the smallest tau",
    );
    let instances: Vec<_> = (0..trials).map(|t| tau_zero_instance(&mut trial_rng(seed, t as u64), 10)).collect();
    for &tau in taus {
        let mut discs = Vec::with_capacity(trials);
        for (u, items, hinge) in &instances {
            let (s, b) = single_user_state(u, items);
            let emb = Embeddings::borrowed(&s.user_emb, &s.item_emb);
            let v = losses::ssm(&s, &emb, &b, tau)?.value;
            discs.push((tau * v - hinge).abs());
        }
        rep.push(tau, &discs);
    }
    rep.passed = rep.means_non_increasing() && rep.final_mean() <= 1e-2;
    Ok(rep)
}

/// `|τ·(SSM − log(|N|+1)) − (−s(u,i) + mean_{j∈N∪{i}} s(u,j))|` along an
/// ascending τ sweep. Two cruder forms are recorded under `info` at the
/// largest τ: averaging over `N` alone leaves an O(1/|N|) floor, and the
/// literal `log|N|` centring leaves `τ·log(1 + 1/|N|)`, which grows with τ.
pub fn check_tau_inf_limit(taus: &[f64], negs: usize, trials: usize, seed: u64) -> Result<RelationReport> {
    let mut rep = RelationReport::new(
        RelationId::TauInf,
        "tau",
        "mean discrepancy non-increasing along the sweep and <= 1e-2 at the largest tau",
    );
    let mut instances = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = trial_rng(seed, t as u64);
        let u = random_unit(&mut rng, ENSEMBLE_DIM);
        let sims: Vec<f64> = (0..=negs).map(|_| dot(&u, &random_unit(&mut rng, ENSEMBLE_DIM))).collect();
        instances.push(sims);
    }
    let n = negs as f64;
    let mut literal = Vec::new();
    let mut negs_only = Vec::new();
    for &tau in taus {
        let mut discs = Vec::with_capacity(trials);
        literal.clear();
        negs_only.clear();
        for sims in &instances {
            let ssm = kernels::ssm_triplet(sims[0], &sims[1..], tau);
            // the softmax denominator runs over N ∪ {i}
            let target = -sims[0] + sims.iter().sum::<f64>() / (n + 1.0);
            let neg_target = -sims[0] + sims[1..].iter().sum::<f64>() / n;
            discs.push((tau * (ssm - (n + 1.0).ln()) - target).abs());
            negs_only.push((tau * (ssm - (n + 1.0).ln()) - neg_target).abs());
            literal.push((tau * (ssm - n.ln()) - neg_target).abs());
        }
        rep.push(tau, &discs);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    rep.info.insert("literal_log_n_mean_disc_at_max_tau".into(), mean(&literal));
    rep.info.insert("negatives_only_mean_disc_at_max_tau".into(), mean(&negs_only));
    rep.info.insert("num_negatives".into(), n);
    rep.passed = rep.means_non_increasing() && rep.final_mean() <= 1e-2;
    Ok(rep)
}

/// `|(SSM − log|N|) − (−s(u,i)/τ + log mean_pop e^{s(u,j)/τ})|` with
/// negatives drawn from a fixed population, averaged over trials.
pub fn check_num_neg_limit(
    sizes: &[usize],
    tau: f64,
    population: usize,
    trials: usize,
    seed: u64,
) -> Result<RelationReport> {
    if !(tau > 0.0) || population == 0 {
        return Err(Error::Config("num_neg check needs tau > 0 and a population".into()));
    }
    let mut rep = RelationReport::new(
        RelationId::NumNeg,
        "num_negatives",
        "mean discrepancy strictly decreasing along the size sweep",
    );
    let mut rng = trial_rng(seed, u64::MAX);
    let pop: Vec<Vec<f64>> = (0..population).map(|_| random_unit(&mut rng, ENSEMBLE_DIM)).collect();
    let mut per_size: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); sizes.len()];
    for t in 0..trials {
        let mut rng = trial_rng(seed, t as u64);
        let u = random_unit(&mut rng, ENSEMBLE_DIM);
        let s_pos = dot(&u, &random_unit(&mut rng, ENSEMBLE_DIM));
        let sims: Vec<f64> = pop.iter().map(|v| dot(&u, v)).collect();
        let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
        let target = -s_pos / tau + kernels::logsumexp(&logits) - (population as f64).ln();
        for (k, &n) in sizes.iter().enumerate() {
            let negs: Vec<f64> = (0..n).map(|_| sims[rng.gen_range(0..population)]).collect();
            let v = kernels::ssm_triplet(s_pos, &negs, tau) - (n as f64).ln();
            per_size[k].push((v - target).abs());
        }
    }
    for (k, &n) in sizes.iter().enumerate() {
        rep.push(n as f64, &per_size[k]);
    }
    rep.info.insert("tau".into(), tau);
    rep.info.insert("population".into(), population as f64);
    rep.passed = rep.means_decreasing();
    Ok(rep)
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sq2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// One 2-D instance of the margin-rotation argument. Users sit at angles in
/// `[0, π/4)`, items in `(π/4, π/2]`, so every item is counter-clockwise of
/// every user and rotating users by `−M_u`, items by `+M_i` widens each pair
/// angle by `M_u + M_i ≤ π/2`. Returns the per-part discrepancies.
fn theorem_a1_instance(rng: &mut ChaCha8Rng, nu: usize, ni: usize) -> [Vec<f64>; 3] {
    // 0.01 keeps pair angles out of the arccos clamp region
    let users: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.0..FRAC_PI_4 - 0.01)).collect();
    let items: Vec<f64> = (0..ni).map(|_| rng.gen_range(FRAC_PI_4 + 0.01..=std::f64::consts::FRAC_PI_2)).collect();
    let mu: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.0..=FRAC_PI_4)).collect();
    let mi: Vec<f64> = (0..ni).map(|_| rng.gen_range(0.0..=FRAC_PI_4)).collect();
    let vu: Vec<[f64; 2]> = users.iter().map(|a| [a.cos(), a.sin()]).collect();
    let vi: Vec<[f64; 2]> = items.iter().map(|a| [a.cos(), a.sin()]).collect();
    let ru: Vec<[f64; 2]> = (0..nu).map(|u| rotate(vu[u], -mu[u])).collect();
    let ri: Vec<[f64; 2]> = (0..ni).map(|i| rotate(vi[i], mi[i])).collect();

    let mut d: Vec<(usize, usize)> = Vec::new();
    for u in 0..nu {
        let k = rng.gen_range(1..=3.min(ni));
        let mut chosen: Vec<usize> = rand::seq::index::sample(rng, ni, k).into_vec();
        chosen.sort_unstable();
        d.extend(chosen.into_iter().map(|i| (u, i)));
    }

    let mut part_a = Vec::with_capacity(d.len());
    for &(u, i) in &d {
        let lhs = -kernels::angular_cos(dot2(vu[u], vi[i]), mu[u] + mi[i]).value;
        let rhs = -dot2(ru[u], ri[i]);
        part_a.push((lhs - rhs).abs());
    }

    // (b) Σ‖R_u v_u − R_i v_i‖² = 2|D| − 2Σ(R_u v_u)ᵀ(R_i v_i)
    //     = Σ_u |P_u| v_uᵀ(v_u − R_uᵀc_u) + Σ_i |P_i| v_iᵀ(v_i − R_iᵀc_i)
    let sum_sq: f64 = d.iter().map(|&(u, i)| sq2(ru[u], ri[i])).sum();
    let sum_dot: f64 = d.iter().map(|&(u, i)| dot2(ru[u], ri[i])).sum();
    let mut cu = vec![[0.0; 2]; nu];
    let mut ci = vec![[0.0; 2]; ni];
    let mut pu = vec![0usize; nu];
    let mut pi = vec![0usize; ni];
    for &(u, i) in &d {
        cu[u] = [cu[u][0] + ri[i][0], cu[u][1] + ri[i][1]];
        ci[i] = [ci[i][0] + ru[u][0], ci[i][1] + ru[u][1]];
        pu[u] += 1;
        pi[i] += 1;
    }
    let centre = |c: [f64; 2], n: usize, angle: f64| {
        if n == 0 {
            [0.0, 0.0]
        } else {
            // R^T (c / n): inverse rotation
            rotate([c[0] / n as f64, c[1] / n as f64], -angle)
        }
    };
    let cu: Vec<[f64; 2]> = (0..nu).map(|u| centre(cu[u], pu[u], -mu[u])).collect();
    let ci: Vec<[f64; 2]> = (0..ni).map(|i| centre(ci[i], pi[i], mi[i])).collect();
    let grouped: f64 = (0..nu).map(|u| pu[u] as f64 * dot2(vu[u], [vu[u][0] - cu[u][0], vu[u][1] - cu[u][1]])).sum::<f64>()
        + (0..ni).map(|i| pi[i] as f64 * dot2(vi[i], [vi[i][0] - ci[i][0], vi[i][1] - ci[i][1]])).sum::<f64>();
    let part_b = vec![
        (sum_sq - (2.0 * d.len() as f64 - 2.0 * sum_dot)).abs(),
        (sum_sq - grouped).abs(),
    ];

    // (c) ‖v − c‖² = 2vᵀ(v − c) + (‖c‖² − ‖v‖²) per term
    let mut part_c = Vec::with_capacity(nu + ni);
    for (v, c) in vu.iter().zip(&cu).chain(vi.iter().zip(&ci)) {
        let lhs = sq2(*v, *c);
        let rhs = 2.0 * dot2(*v, [v[0] - c[0], v[1] - c[1]]) + (dot2(*c, *c) - dot2(*v, *v));
        part_c.push((lhs - rhs).abs());
    }
    [part_a, part_b, part_c]
}

/// Theorem A1 in two dimensions: (a) margin-shifted cosine equals the
/// rotated inner product, (b) the proof's rewriting of the squared-distance
/// sum, (c) the per-term compactness identity. Sweep values 1, 2, 3 are the
/// parts a, b, c.
pub fn check_theorem_a1(trials: usize, seed: u64) -> Result<RelationReport> {
    let mut rep = RelationReport::new(
        RelationId::TheoremA1,
        "part",
        "part a <= 1e-12; parts b and c <= 1e-10",
    );
    let mut parts: [Vec<f64>; 3] = Default::default();
    for t in 0..trials {
        let inst = theorem_a1_instance(&mut trial_rng(seed, t as u64), 8, 8);
        for (acc, v) in parts.iter_mut().zip(inst) {
            acc.extend(v);
        }
    }
    for (k, p) in parts.iter().enumerate() {
        rep.push((k + 1) as f64, p);
    }
    let max = |k: usize| rep.points[k].max_disc;
    rep.passed = max(0) <= 1e-12 && max(1) <= 1e-10 && max(2) <= 1e-10;
    Ok(rep)
}

/// Default parameters for each relation.
pub fn run(id: RelationId, seed: u64) -> Result<RelationReport> {
    match id {
        RelationId::SsmBpr => check_ssm_equals_bpr(1000, seed),
        RelationId::BcZeroMargin => check_bc_zero_margin(500, seed),
        RelationId::TauZero => check_tau_zero_limit(&[1.0, 0.1, 0.01, 0.001], 20, seed),
        RelationId::TauInf => check_tau_inf_limit(&[1.0, 10.0, 100.0], 30, 20, seed),
        RelationId::NumNeg => check_num_neg_limit(&[10, 100, 1000, 10000], 0.1, 50_000, 20, seed),
        RelationId::TheoremA1 => check_theorem_a1(20, seed),
    }
}

pub fn run_all(ids: &[RelationId], seed: u64) -> Result<Vec<RelationReport>> {
    ids.iter().map(|&id| run(id, seed)).collect()
}
