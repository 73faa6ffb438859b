//! Acceptance suite: one PASS/FAIL line per criterion. Failures are
//! reported without failing the test run unless `CFLOSS_ACCEPTANCE_STRICT=1`.
//!
//! Run a subset with `cargo test -p cfloss-core --test acceptance -- 1 7 9`.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use cfloss_core::data::{gini_index, kcore_filter, sample_negatives, split, synthetic::SyntheticSpec};
use cfloss_core::eval::{self, mean_reports, rank_users, CUTOFFS};
use cfloss_core::losses::{evaluate, grad_check, LossConfig, LossKind, MarginMode, MclParams};
use cfloss_core::relations::{self, RelationId, RelationReport};
use cfloss_core::tensor::Tensor;
use cfloss_core::training::{self, history_jsonl, EncoderKind, TrainConfig};
use cfloss_core::{Batch, Embeddings, Encoder, InteractionDataset, ModelState, NormalizedAdjacency, SplitLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn seed_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn random_state(seed: u64, nu: usize, ni: usize, d: usize) -> ModelState {
    let mut rng = seed_rng(seed);
    let up: Vec<u32> = (0..nu).map(|_| rng.gen_range(1..60)).collect();
    let ip: Vec<u32> = (0..ni).map(|_| rng.gen_range(1..60)).collect();
    let mut s = ModelState::new(nu, ni, d, up, ip);
    s.user_emb = random_tensor(&mut rng, nu, d, 1.0);
    s.item_emb = random_tensor(&mut rng, ni, d, 1.0);
    s.user_margin = random_tensor(&mut rng, nu, 1, 0.5);
    s.item_margin = random_tensor(&mut rng, ni, 1, 0.5);
    s.boundary_proj = random_tensor(&mut rng, 1, d, 0.3);
    let (bu, bi) = (s.pop_user_emb.rows(), s.pop_item_emb.rows());
    s.pop_user_emb = random_tensor(&mut rng, bu, d, 1.0);
    s.pop_item_emb = random_tensor(&mut rng, bi, d, 1.0);
    s
}

fn loss_config(kind: LossKind, mode: MarginMode) -> LossConfig {
    LossConfig {
        kind,
        tau: 0.3,
        margin_const: 0.4,
        ccl_weight: 0.7,
        mcl_params: MclParams { alpha: 1.5, beta: 2.0, lambda_p: 0.2, lambda_n: -0.6 },
        uib_alpha: 0.8,
        gamma: 0.9,
        gamma1: 1.3,
        gamma2: 0.6,
        sml_lambda: 0.05,
        margin_mode: mode,
    }
}

/// Batch drawn the way training draws it for `kind`.
fn training_batch(kind: LossKind, nu: usize, ni: usize, pairs: usize, seed: u64) -> Batch {
    let mut rng = seed_rng(seed ^ 0xba7c);
    let p: Vec<(usize, usize)> = (0..pairs).map(|_| (rng.gen_range(0..nu), rng.gen_range(0..ni))).collect();
    let plan = TrainConfig { loss: LossConfig::new(kind), num_negatives: 4, ..Default::default() }.negative_plan();
    match plan {
        None => Batch::positives_only(p),
        Some((mode, n)) => sample_negatives(ni, &p, n, mode, seed).unwrap(),
    }
}

// ---- 1 --------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let a = relations::check_ssm_equals_bpr(1000, 101).unwrap();
    let b = relations::check_bc_zero_margin(500, 102).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (ea, eb) = (max_disc(&a), max_disc(&b));
    outcome(
        ea <= 1e-12 && eb <= 1e-12 && secs < 5.0,
        format!("max|SSM-BPR|={ea:.2e}, max|BC(M=0)-SSM|={eb:.2e} (1000 batches each), {secs:.2}s"),
    )
}

fn max_disc(r: &RelationReport) -> f64 {
    r.points.iter().map(|p| p.max_disc).fold(0.0, f64::max)
}

// ---- 2 --------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let (nu, ni, d) = (12, 16, 10);
    let adj = NormalizedAdjacency::from_pairs(nu, ni, &training_batch(LossKind::DirectAu, nu, ni, 60, 7).pairs);
    let mut worst = (0.0f64, String::new());
    let mut min_coords = usize::MAX;
    let mut cases = 0;
    for kind in LossKind::ALL {
        let modes: &[MarginMode] = match kind {
            LossKind::Bc | LossKind::Mawu => &[
                MarginMode::Zero,
                MarginMode::InversePopularity,
                MarginMode::UibFashion,
                MarginMode::BcFashion,
                MarginMode::Learned,
            ],
            _ => &[MarginMode::Zero],
        };
        for &mode in modes {
            let c = loss_config(kind, mode);
            for (name, enc) in [("mf", Encoder::Mf), ("lightgcn2", Encoder::lightgcn(adj.clone(), 2))] {
                // resample until every loss kink is at least 1e-3 away
                let mut seed = 31;
                let (s, b) = loop {
                    let s = random_state(seed, nu, ni, d);
                    let b = training_batch(kind, nu, ni, 24, seed);
                    let emb = enc.forward(&s);
                    if evaluate(&c, &s, &emb, &b).unwrap().kink_distance > 1e-3 {
                        break (s, b);
                    }
                    seed += 1000;
                };
                let r = grad_check(&c, &s, &enc, &b, 1e-5, 400, 3).unwrap();
                cases += 1;
                min_coords = min_coords.min(r.coords_checked);
                if r.max_rel_err > worst.0 {
                    worst = (r.max_rel_err, format!("{}/{:?}/{name}", kind.name(), mode));
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-4 && min_coords >= 200 && secs < 120.0,
        format!(
            "{cases} loss/margin/encoder cases, >= {min_coords} coords each, max rel err {:.2e} ({}), {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

// ---- 3-6 ------------------------------------------------------------------

fn sweep(r: &RelationReport) -> String {
    r.points
        .iter()
        .map(|p| format!("{}:{:.3e}", p.sweep_value, p.mean_disc))
        .collect::<Vec<_>>()
        .join(" ")
}

fn criterion_3() -> Outcome {
    let r = relations::run(RelationId::TauZero, 3).unwrap();
    outcome(r.passed, format!("tau->0 mean disc {} (20 seeds)", sweep(&r)))
}

fn criterion_4() -> Outcome {
    let r = relations::run(RelationId::TauInf, 4).unwrap();
    outcome(
        r.passed,
        format!(
            "tau->inf mean disc {} over N+{{i}}, |N|=30; at tau=100 the negatives-only mean leaves {:.1e}, literal log|N| leaves {:.3}",
            sweep(&r),
            r.info["negatives_only_mean_disc_at_max_tau"],
            r.info["literal_log_n_mean_disc_at_max_tau"]
        ),
    )
}

fn criterion_5() -> Outcome {
    let r = relations::run(RelationId::NumNeg, 5).unwrap();
    outcome(r.passed, format!("|N|->inf mean disc {} (20 seeds, population 5e4)", sweep(&r)))
}

fn criterion_6() -> Outcome {
    let r = relations::run(RelationId::TheoremA1, 6).unwrap();
    let m: Vec<f64> = r.points.iter().map(|p| p.max_disc).collect();
    outcome(r.passed, format!("max disc (a)={:.2e} (b)={:.2e} (c)={:.2e} over 20 instances", m[0], m[1], m[2]))
}

// ---- 7 --------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut max_grad = 0.0f64;
    let mut max_off = 0.0f64;
    for seed in 0..50 {
        let s = random_state(seed, 10, 14, 8);
        let b = training_batch(LossKind::DirectAu, 10, 14, 16, seed);
        let emb = Embeddings::borrowed(&s.user_emb, &s.item_emb);
        let gamma = 0.2 + 0.1 * seed as f64;
        let dau = evaluate(&LossConfig { gamma, ..LossConfig::new(LossKind::DirectAu) }, &s, &emb, &b).unwrap();
        let mawu = LossConfig { gamma1: gamma, gamma2: gamma, margin_mode: MarginMode::Zero, ..LossConfig::new(LossKind::Mawu) };
        let mw = evaluate(&mawu, &s, &emb, &b).unwrap();
        max_off = max_off.max((mw.value - dau.value + 1.0).abs());
        for (k, g) in &dau.grads {
            let h = &mw.grads[k];
            for (x, y) in g.values().data().iter().zip(h.values().data()) {
                max_grad = max_grad.max((x - y).abs());
            }
        }
        if mw.grads.len() != dau.grads.len() {
            return outcome(false, "gradient key sets differ");
        }
    }
    outcome(
        max_grad <= 1e-10 && max_off <= 1e-12,
        format!("max |grad diff|={max_grad:.2e}, max |(MAWU - DAU) + 1|={max_off:.2e} over 50 batches"),
    )
}

// ---- 8 --------------------------------------------------------------------

fn brute_force(scores: &[f64], masked: &BTreeSet<usize>, relevant: &BTreeSet<usize>, n: usize) -> (f64, f64) {
    let mut order: Vec<usize> = (0..scores.len()).filter(|i| !masked.contains(i)).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let top = &order[..n.min(order.len())];
    let hits = top.iter().filter(|i| relevant.contains(i)).count();
    let mut dcg = 0.0;
    for (r, i) in top.iter().enumerate() {
        if relevant.contains(i) {
            dcg += 1.0 / (r as f64 + 2.0).log2();
        }
    }
    let idcg: f64 = (0..relevant.len().min(n)).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    (hits as f64 / relevant.len() as f64, dcg / idcg)
}

fn criterion_8() -> Outcome {
    let mut max_err = 0.0f64;
    let mut max_group = 0.0f64;
    let mut users_checked = 0;
    for inst in 0..10u64 {
        let spec = SyntheticSpec { users: 50, items: 120, interactions: 1500, min_per_user: 6, seed: inst, ..Default::default() };
        let ds = split(&spec.generate().unwrap(), [7, 1, 2], inst);
        let mut rng = seed_rng(900 + inst);
        let mut u = random_tensor(&mut rng, ds.num_users, 6, 1.0);
        let i = random_tensor(&mut rng, ds.num_items, 6, 1.0);
        if inst % 2 == 1 {
            // coarse scores force ties
            u.data_mut().iter_mut().for_each(|x| *x = (*x * 2.0).round());
        }
        let emb = Embeddings::borrowed(&u, &i);
        for target in [SplitLabel::Valid, SplitLabel::Test] {
            let other = if target == SplitLabel::Valid { SplitLabel::Test } else { SplitLabel::Valid };
            let rel = ds.items_by_user(target);
            let train = ds.items_by_user(SplitLabel::Train);
            let oth = ds.items_by_user(other);
            let (per_user, _) = rank_users(&ds, &emb, target, &CUTOFFS);
            for m in &per_user {
                let uid = m.user;
                let scores: Vec<f64> = (0..ds.num_items)
                    .map(|it| u.row(uid).iter().zip(i.row(it)).map(|(a, b)| a * b).sum())
                    .collect();
                let masked: BTreeSet<usize> = train[uid].iter().chain(&oth[uid]).copied().collect();
                let relevant: BTreeSet<usize> = rel[uid].iter().copied().collect();
                for n in CUTOFFS {
                    let (r, d) = brute_force(&scores, &masked, &relevant, n);
                    max_err = max_err.max((m.metrics[&format!("recall@{n}")] - r).abs());
                    max_err = max_err.max((m.metrics[&format!("ndcg@{n}")] - d).abs());
                }
                users_checked += 1;
            }
            let rep = eval::evaluate(&ds, &emb, target);
            for (k, v) in &rep.metrics {
                let pop = &rep.groups["pop"];
                let unpop = &rep.groups["unpop"];
                let n = (pop.num_users + unpop.num_users) as f64;
                let recombined = (pop.num_users as f64 * pop.metrics[k] + unpop.num_users as f64 * unpop.metrics[k]) / n;
                max_group = max_group.max((recombined - v).abs());
            }
        }
    }
    outcome(
        max_err == 0.0 && max_group <= 1e-12,
        format!("{users_checked} user rankings vs brute force: max err {max_err:.1e}; group recombination err {max_group:.1e}"),
    )
}

// ---- 9, 10 ----------------------------------------------------------------

/// Desk-scale comparison setup, shared by criteria 9 and 10.
const DESK_SPEC: &str = "zipf:1.0,users=1000,items=1500,interactions=100000,seed=0";
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const DESK_GAMMA_DAU: f64 = 0.1;
const DESK_GAMMA_MAWU: (f64, f64) = (0.1, 0.15);

fn desk_config(kind: LossKind) -> TrainConfig {
    let mut loss = LossConfig::new(kind);
    loss.gamma = DESK_GAMMA_DAU;
    (loss.gamma1, loss.gamma2) = DESK_GAMMA_MAWU;
    loss.margin_mode = MarginMode::Learned;
    TrainConfig {
        dim: 64,
        lr: 0.01,
        batch_size: 1024,
        max_epochs: 40,
        patience: 10,
        encoder: EncoderKind::Mf,
        loss,
        ..Default::default()
    }
}

struct DeskRun {
    ndcg20: f64,
    spearman: Vec<(f64, f64)>,
    secs: f64,
}

fn desk_run(ds: &InteractionDataset, kind: LossKind) -> DeskRun {
    let t = Instant::now();
    let mut reports = Vec::new();
    let mut spearman = Vec::new();
    for seed in DESK_SEEDS {
        let cfg = TrainConfig { seed, ..desk_config(kind) };
        let out = training::train(ds, &cfg).unwrap();
        let emb = training::final_embeddings(ds, &cfg, &out.best_state);
        reports.push(eval::evaluate(ds, &emb, SplitLabel::Test));
        let p = eval::margin_popularity_profile(&out.best_state);
        spearman.push((p.spearman_user, p.spearman_item));
    }
    DeskRun { ndcg20: mean_reports(&reports).ndcg20(), spearman, secs: t.elapsed().as_secs_f64() }
}

fn criteria_9_10() -> (Outcome, Outcome) {
    let spec: SyntheticSpec = DESK_SPEC.parse().unwrap();
    let ds = split(&kcore_filter(&spec.generate().unwrap(), 10), [7, 1, 2], 0);
    let dau = desk_run(&ds, LossKind::DirectAu);
    let mawu = desk_run(&ds, LossKind::Mawu);
    let total = dau.secs + mawu.secs;
    let gain = mawu.ndcg20 / dau.ndcg20 - 1.0;
    let c9 = outcome(
        mawu.ndcg20 >= 0.99 * dau.ndcg20 && total < 600.0,
        format!(
            "test NDCG@20 over 3 seeds: MAWU-MF {:.4}, DirectAU-MF {:.4}, relative gain {:+.2}%; {total:.0}s total ({} interactions)",
            mawu.ndcg20,
            dau.ndcg20,
            100.0 * gain,
            ds.len()
        ),
    );
    let ok = mawu.spearman.iter().all(|&(u, i)| u < 0.0 && i < 0.0);
    let fmt: Vec<String> = mawu.spearman.iter().map(|(u, i)| format!("({u:.3}, {i:.3})")).collect();
    let c10 = outcome(ok, format!("Spearman(popularity, learned margin) (user, item) per seed: {}", fmt.join(" ")));
    (c9, c10)
}

// ---- 11 -------------------------------------------------------------------

fn criterion_11() -> Outcome {
    let g = gini_index(&[0.0, 0.0, 0.0, 10.0]).unwrap();
    let flat = gini_index(&[7.0; 9]).unwrap();
    let mut rng = seed_rng(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..60);
        let counts: Vec<f64> = (0..n).map(|_| rng.gen_range(0..500) as f64).collect();
        if counts.iter().all(|&c| c == 0.0) {
            continue;
        }
        let c = rng.gen_range(0.01..100.0);
        let scaled: Vec<f64> = counts.iter().map(|x| x * c).collect();
        worst = worst.max((gini_index(&counts).unwrap() - gini_index(&scaled).unwrap()).abs());
    }
    outcome(
        g == 0.75 && flat == 0.0 && worst <= 1e-12,
        format!("gini([0,0,0,10])={g}, uniform={flat}, max scale drift {worst:.1e}; Yelp2018 not supplied (informational band skipped)"),
    )
}

// ---- 12 -------------------------------------------------------------------

fn criterion_12() -> Outcome {
    let once = || -> (String, String, String, String) {
        let spec = SyntheticSpec { users: 80, items: 100, interactions: 2500, min_per_user: 8, seed: 4, ..Default::default() };
        let ds = split(&kcore_filter(&spec.generate().unwrap(), 3), [7, 1, 2], 4);
        let stats = serde_json::to_string(&ds.stats().unwrap()).unwrap();
        let cfg = TrainConfig {
            dim: 8,
            lr: 0.02,
            batch_size: 256,
            max_epochs: 5,
            loss: LossConfig::new(LossKind::Bc),
            seed: 9,
            ..Default::default()
        };
        let mut trainer = training::Trainer::new(&ds, cfg.clone()).unwrap();
        while !trainer.is_done() {
            trainer.run_epoch().unwrap();
        }
        let ck = serde_json::to_string(trainer.checkpoint()).unwrap();
        let out = trainer.finish();
        let emb = training::final_embeddings(&ds, &cfg, &out.best_state);
        let rep = serde_json::to_string(&eval::evaluate(&ds, &emb, SplitLabel::Test)).unwrap();
        let rel = relations::run_all(&RelationId::ALL, 12).unwrap();
        let rel = serde_json::to_string(&rel).unwrap() + &relations::reports_csv(&rel);
        (stats, history_jsonl(&out.history) + &ck, rep, rel)
    };
    let (a, b) = (once(), once());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3];
    outcome(
        same.iter().all(|&x| x),
        format!("byte-identical reruns: stats {}, history+checkpoint {}, metrics {}, relations {}", same[0], same[1], same[2], same[3]),
    )
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: u32| args.is_empty() || args.iter().any(|a| a == &n.to_string());
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let simple: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    for (n, f) in simple {
        if wanted(n) {
            results.push((n, f()));
        }
    }
    if wanted(9) || wanted(10) {
        let (c9, c10) = criteria_9_10();
        results.push((9, c9));
        results.push((10, c10));
    }
    for (n, f) in [(11, criterion_11 as fn() -> Outcome), (12, criterion_12)] {
        if wanted(n) {
            results.push((n, f()));
        }
    }

    let mut failed = 0;
    for (n, o) in &results {
        if !o.passed {
            failed += 1;
        }
        println!("criterion {n:>2}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    let strict = std::env::var_os("CFLOSS_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
