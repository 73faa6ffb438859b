//! Full-ranking top-N metrics, popularity-group breakdowns and the
//! margin–popularity profile.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, SplitLabel};
use crate::encoders::{Embeddings, ModelState};
use crate::losses::kernels::softplus;
use crate::tensor::dot;

pub const CUTOFFS: [usize; 3] = [10, 20, 50];

/// `|top-n ∩ relevant| / |relevant|`; `None` when nothing is relevant.
/// `relevant` must be sorted.
pub fn recall_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(n).filter(|i| relevant.binary_search(i).is_ok()).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with `1/log₂(r+1)` discount; `None` when nothing is
/// relevant. `relevant` must be sorted.
pub fn ndcg_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(n)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

pub fn metric_key(name: &str, n: usize) -> String {
    format!("{name}@{n}")
}

/// Raw inner products `f(u)ᵀf(i)` over all items, written into `out`.
pub fn scores_into(emb: &Embeddings, user: usize, out: &mut Vec<f64>) {
    let fu = emb.users.row(user);
    out.clear();
    out.extend((0..emb.items.rows()).map(|i| dot(fu, emb.items.row(i))));
}

/// The `k` best items by (score desc, id asc), skipping `masked` (sorted).
pub fn top_k(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|i| masked.binary_search(i).is_err()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if cand.len() > k && k > 0 {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.truncate(k);
    cand
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub num_users: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over evaluated users, keyed `recall@N` / `ndcg@N`.
    pub metrics: BTreeMap<String, f64>,
    pub num_users: usize,
    /// Users without any relevant item in the evaluated split.
    pub skipped_users: usize,
    /// `pop` / `unpop` breakdown.
    pub groups: BTreeMap<String, GroupMetrics>,
}

impl MetricsReport {
    pub fn get(&self, name: &str, n: usize) -> f64 {
        self.metrics.get(&metric_key(name, n)).copied().unwrap_or(0.0)
    }

    pub fn ndcg20(&self) -> f64 {
        self.get("ndcg", 20)
    }
}

fn mean_metrics<'a>(rows: impl Iterator<Item = &'a BTreeMap<String, f64>>) -> (usize, BTreeMap<String, f64>) {
    let mut sum: BTreeMap<String, f64> = BTreeMap::new();
    let mut count = 0;
    for m in rows {
        count += 1;
        for (k, v) in m {
            *sum.entry(k.clone()).or_default() += v;
        }
    }
    if count > 0 {
        sum.values_mut().for_each(|v| *v /= count as f64);
    }
    (count, sum)
}

/// Per-user metrics for every user with relevant items in `target`.
/// Candidates exclude train items and the other held-out split's items.
pub fn rank_users(ds: &InteractionDataset, emb: &Embeddings, target: SplitLabel, cutoffs: &[usize]) -> (Vec<UserMetrics>, usize) {
    let other = match target {
        SplitLabel::Valid => Some(SplitLabel::Test),
        SplitLabel::Test => Some(SplitLabel::Valid),
        SplitLabel::Train => None,
    };
    let relevant = ds.items_by_user(target);
    let train = ds.items_by_user(SplitLabel::Train);
    let other = other.map(|l| ds.items_by_user(l));
    let k = cutoffs.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    let mut skipped = 0;
    let mut scores = Vec::with_capacity(ds.num_items);
    let mut masked = Vec::new();
    for u in 0..ds.num_users {
        if relevant[u].is_empty() {
            skipped += 1;
            continue;
        }
        masked.clear();
        if target != SplitLabel::Train {
            masked.extend_from_slice(&train[u]);
        }
        if let Some(o) = &other {
            masked.extend_from_slice(&o[u]);
        }
        masked.sort_unstable();
        scores_into(emb, u, &mut scores);
        let ranked = top_k(&scores, &masked, k);
        let mut metrics = BTreeMap::new();
        for &n in cutoffs {
            metrics.insert(metric_key("recall", n), recall_at_n(&ranked, &relevant[u], n).unwrap());
            metrics.insert(metric_key("ndcg", n), ndcg_at_n(&ranked, &relevant[u], n).unwrap());
        }
        out.push(UserMetrics { user: u, metrics });
    }
    (out, skipped)
}

/// Splits evaluated users into the top `ratio[0]/(ratio[0]+ratio[1])` by
/// train popularity (ties by lower id first) and the rest.
pub fn popularity_groups(ds: &InteractionDataset, users: &[usize], ratio: (u32, u32)) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = users.to_vec();
    order.sort_by(|&a, &b| ds.user_pop[b].cmp(&ds.user_pop[a]).then(a.cmp(&b)));
    let n_pop = ((order.len() as f64) * ratio.0 as f64 / (ratio.0 + ratio.1) as f64).round() as usize;
    let rest = order.split_off(n_pop.min(order.len()));
    (order, rest)
}

/// Overall report with `pop` / `unpop` group means.
pub fn group_report(ds: &InteractionDataset, per_user: &[UserMetrics], skipped: usize, ratio: (u32, u32)) -> MetricsReport {
    let (num_users, metrics) = mean_metrics(per_user.iter().map(|m| &m.metrics));
    let ids: Vec<usize> = per_user.iter().map(|m| m.user).collect();
    let (pop, unpop) = popularity_groups(ds, &ids, ratio);
    let by_user: BTreeMap<usize, &UserMetrics> = per_user.iter().map(|m| (m.user, m)).collect();
    let mut groups = BTreeMap::new();
    for (name, members) in [("pop", pop), ("unpop", unpop)] {
        let (n, m) = mean_metrics(members.iter().map(|u| &by_user[u].metrics));
        groups.insert(name.to_string(), GroupMetrics { num_users: n, metrics: m });
    }
    MetricsReport { metrics, num_users, skipped_users: skipped, groups }
}

/// Full-ranking evaluation of `target` with the default cutoffs and a 2:8
/// popularity breakdown.
pub fn evaluate(ds: &InteractionDataset, emb: &Embeddings, target: SplitLabel) -> MetricsReport {
    let (per_user, skipped) = rank_users(ds, emb, target, &CUTOFFS);
    group_report(ds, &per_user, skipped, (2, 8))
}

/// Validation NDCG@20 only, for early stopping.
pub fn valid_ndcg20(ds: &InteractionDataset, emb: &Embeddings) -> f64 {
    let (per_user, _) = rank_users(ds, emb, SplitLabel::Valid, &[20]);
    mean_metrics(per_user.iter().map(|m| &m.metrics)).1.get("ndcg@20").copied().unwrap_or(0.0)
}

/// Element-wise mean of reports (per-seed averaging). Counts are averaged
/// and rounded down.
pub fn mean_reports(reports: &[MetricsReport]) -> MetricsReport {
    if reports.is_empty() {
        return MetricsReport::default();
    }
    let n = reports.len();
    let (_, metrics) = mean_metrics(reports.iter().map(|r| &r.metrics));
    let mut groups = BTreeMap::new();
    for name in reports[0].groups.keys() {
        let gs: Vec<&GroupMetrics> = reports.iter().filter_map(|r| r.groups.get(name)).collect();
        let (_, m) = mean_metrics(gs.iter().map(|g| &g.metrics));
        let num_users = gs.iter().map(|g| g.num_users).sum::<usize>() / gs.len();
        groups.insert(name.clone(), GroupMetrics { num_users, metrics: m });
    }
    MetricsReport {
        metrics,
        num_users: reports.iter().map(|r| r.num_users).sum::<usize>() / n,
        skipped_users: reports.iter().map(|r| r.skipped_users).sum::<usize>() / n,
        groups,
    }
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for &k in &idx[s..=e] {
            r[k] = avg;
        }
        s = e + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks). A constant input
/// gives 0.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (a, b) = (rx[k] - mx, ry[k] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub kind: String,
    pub id: usize,
    pub popularity: u32,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginProfile {
    pub rows: Vec<ProfileRow>,
    pub spearman_user: f64,
    pub spearman_item: f64,
}

impl MarginProfile {
    /// `kind,id,popularity,margin`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,id,popularity,margin\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.kind, r.id, r.popularity, r.margin).unwrap();
        }
        s
    }
}

/// Learned margins `softplus(raw)` against train popularity, per id.
pub fn margin_popularity_profile(state: &ModelState) -> MarginProfile {
    let mut rows = Vec::new();
    let mut corr = |kind: &str, pops: &[u32], raw: &[f64]| {
        let margins: Vec<f64> = raw.iter().map(|&r| softplus(r)).collect();
        for (id, (&p, &m)) in pops.iter().zip(&margins).enumerate() {
            rows.push(ProfileRow { kind: kind.to_string(), id, popularity: p, margin: m });
        }
        let pf: Vec<f64> = pops.iter().map(|&p| p as f64).collect();
        spearman(&pf, &margins)
    };
    let spearman_user = corr("user", &state.user_pop, state.user_margin.data());
    let spearman_item = corr("item", &state.item_pop, state.item_margin.data());
    MarginProfile { rows, spearman_user, spearman_item }
}
