use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context};
use cfloss_core::data::{self, synthetic::SyntheticSpec, DatasetStats};
use cfloss_core::eval::{self, MarginProfile, MetricsReport};
use cfloss_core::relations::{self, RelationId, RelationReport};
use cfloss_core::training::{self, history_jsonl, TrainCheckpoint, Trainer};
use cfloss_core::{InteractionDataset, LossKind, MarginMode, SplitLabel, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::Usage;

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Maps `f` over `items` on up to `jobs` threads; output order follows input.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                slots.lock().unwrap()[k] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

// ---- prepare ---------------------------------------------------------------

pub struct PrepareArgs {
    pub input: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub kcore: usize,
    pub split_seed: u64,
    pub out: PathBuf,
}

pub fn prepare(a: &PrepareArgs) -> anyhow::Result<DatasetStats> {
    let raw = match (&a.input, &a.synthetic) {
        (Some(p), None) => data::ingest(p)?,
        (None, Some(spec)) => spec.parse::<SyntheticSpec>().map_err(|e| Usage(e.to_string()))?.generate()?,
        _ => bail!(Usage("give exactly one of --input or --synthetic".into())),
    };
    let filtered = data::kcore_filter(&raw, a.kcore);
    if filtered.is_empty() {
        eprintln!("warning: no interactions survive {}-core filtering", a.kcore);
    }
    let ds = data::split(&filtered, [7, 1, 2], a.split_seed);
    let stats = ds.stats()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    ds.save_json(&a.out.join("dataset.json"))?;
    write_json(&a.out.join("stats.json"), &stats)?;
    Ok(stats)
}

// ---- train -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub loss: LossKind,
    pub best_epoch: usize,
    pub best_valid_ndcg20: f64,
    pub epochs_run: usize,
    pub diverged: bool,
    pub test: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_user: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_item: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub config: ExperimentConfig,
    /// Seeds contributing to `test`; diverged and failed seeds are excluded.
    pub seeds_ok: Vec<u64>,
    pub seeds_diverged: Vec<u64>,
    pub seeds_failed: BTreeMap<u64, String>,
    pub mean_best_valid_ndcg20: f64,
    pub test: MetricsReport,
}

pub enum SeedOutcome {
    Finished(Box<SeedReport>),
    Stopped { seed: u64, epochs_done: usize },
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn learned_profile(cfg: &TrainConfig) -> bool {
    cfg.loss.kind == LossKind::Mawu && cfg.loss.margin_mode == MarginMode::Learned
}

/// Trains one seed, from scratch or from `resume`, writing its artifacts
/// under `dir`. With `stop_after`, halts after that many epochs and leaves a
/// checkpoint to resume from.
pub fn train_seed(
    ds: &InteractionDataset,
    cfg: TrainConfig,
    resume: Option<TrainCheckpoint>,
    stop_after: Option<usize>,
    dir: &Path,
) -> anyhow::Result<SeedOutcome> {
    let seed = cfg.seed;
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(ds, ck)?,
        None => Trainer::new(ds, cfg.clone())?,
    };
    while !trainer.is_done() {
        if stop_after.is_some_and(|n| trainer.checkpoint().epochs_done >= n) {
            break;
        }
        trainer.run_epoch()?;
    }
    let ck = trainer.checkpoint();
    write(&dir.join("history.jsonl"), &history_jsonl(&ck.history))?;
    ck.save_json(&dir.join("checkpoint.json"))?;
    if !trainer.is_done() {
        return Ok(SeedOutcome::Stopped { seed, epochs_done: ck.epochs_done });
    }
    let epochs_run = ck.epochs_done;
    let cfg = ck.config.clone();
    let out = trainer.finish();
    let emb = training::final_embeddings(ds, &cfg, &out.best_state);
    let test = eval::evaluate(ds, &emb, SplitLabel::Test);
    let mut report = SeedReport {
        seed,
        loss: cfg.loss.kind,
        best_epoch: out.best_epoch,
        best_valid_ndcg20: out.best_valid_ndcg20,
        epochs_run,
        diverged: out.diverged,
        test,
        spearman_user: None,
        spearman_item: None,
    };
    if learned_profile(&cfg) {
        let profile: MarginProfile = eval::margin_popularity_profile(&out.best_state);
        write(&dir.join("margins.csv"), &profile.to_csv())?;
        report.spearman_user = Some(profile.spearman_user);
        report.spearman_item = Some(profile.spearman_item);
    }
    write_json(&dir.join("report.json"), &report)?;
    Ok(SeedOutcome::Finished(Box::new(report)))
}

pub fn mean_report(cfg: &ExperimentConfig, results: Vec<(u64, anyhow::Result<SeedReport>)>) -> MeanReport {
    let mut ok = Vec::new();
    let mut m = MeanReport {
        config: cfg.clone(),
        seeds_ok: Vec::new(),
        seeds_diverged: Vec::new(),
        seeds_failed: BTreeMap::new(),
        mean_best_valid_ndcg20: 0.0,
        test: MetricsReport::default(),
    };
    for (seed, r) in results {
        match r {
            Ok(r) if r.diverged => m.seeds_diverged.push(seed),
            Ok(r) => {
                m.seeds_ok.push(seed);
                ok.push(r);
            }
            Err(e) => {
                m.seeds_failed.insert(seed, format!("{e:#}"));
            }
        }
    }
    if !ok.is_empty() {
        m.mean_best_valid_ndcg20 = ok.iter().map(|r| r.best_valid_ndcg20).sum::<f64>() / ok.len() as f64;
        let tests: Vec<MetricsReport> = ok.into_iter().map(|r| r.test).collect();
        m.test = eval::mean_reports(&tests);
    }
    m
}

/// Trains every seed of `cfg` into `out` and writes `mean_report.json`.
pub fn train(cfg: &ExperimentConfig, ds: &InteractionDataset, out: &Path, stop_after: Option<usize>) -> anyhow::Result<Option<MeanReport>> {
    let results = par_map(&cfg.seeds, cfg.jobs(), |&seed| {
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        (seed, train_seed(ds, tc, None, stop_after, &seed_dir(out, seed)))
    });
    let mut finished = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(SeedOutcome::Finished(rep)) => finished.push((seed, Ok(*rep))),
            Ok(SeedOutcome::Stopped { seed, epochs_done }) => {
                eprintln!("seed {seed}: stopped after {epochs_done} epochs; resume from {}", seed_dir(out, seed).join("checkpoint.json").display());
            }
            Err(e) => {
                eprintln!("seed {seed}: {e:#}");
                finished.push((seed, Err(e)));
            }
        }
    }
    if finished.is_empty() {
        return Ok(None);
    }
    let m = mean_report(cfg, finished);
    write_json(&out.join("mean_report.json"), &m)?;
    Ok(Some(m))
}

// ---- grid ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Mean best validation NDCG@20 over the seeds that trained cleanly.
    pub ndcg20: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub best: Option<GridCell>,
    pub cells: Vec<GridCell>,
}

pub const GAMMA_RANGE: (f64, f64) = (0.1, 5.0);

/// Highest `ndcg20`; ties go to the lexicographically smallest `(γ₁, γ₂)`.
pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().filter(|c| c.ndcg20.is_some_and(f64::is_finite)).min_by(|a, b| {
        b.ndcg20
            .unwrap()
            .total_cmp(&a.ndcg20.unwrap())
            .then(a.gamma1.total_cmp(&b.gamma1))
            .then(a.gamma2.total_cmp(&b.gamma2))
    })
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("gamma1,gamma2,ndcg20\n");
    for c in cells {
        let v = c.ndcg20.map_or_else(|| "nan".to_string(), |v| v.to_string());
        s.push_str(&format!("{},{},{}\n", c.gamma1, c.gamma2, v));
    }
    s
}

pub fn grid(cfg: &ExperimentConfig, ds: &InteractionDataset, g1: &[f64], g2: &[f64], out: &Path) -> anyhow::Result<GridSummary> {
    if cfg.train.loss.kind != LossKind::Mawu {
        bail!(Usage("grid search tunes gamma1/gamma2 and needs kind = mawu".into()));
    }
    if g1.is_empty() || g2.is_empty() {
        bail!(Usage("gamma lists must be non-empty".into()));
    }
    for &g in g1.iter().chain(g2) {
        if !(GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&g) {
            bail!(Usage(format!("gamma {g} outside [{}, {}]", GAMMA_RANGE.0, GAMMA_RANGE.1)));
        }
    }
    let jobs: Vec<(f64, f64, u64)> = g1
        .iter()
        .flat_map(|&a| g2.iter().flat_map(move |&b| cfg.seeds.iter().map(move |&s| (a, b, s))))
        .collect();
    let results = par_map(&jobs, cfg.jobs(), |&(a, b, seed)| {
        let mut tc = TrainConfig { seed, ..cfg.train.clone() };
        tc.loss.gamma1 = a;
        tc.loss.gamma2 = b;
        let dir = out.join("cells").join(format!("g1_{a}_g2_{b}")).join(format!("seed-{seed}"));
        match train_seed(ds, tc, None, None, &dir) {
            Ok(SeedOutcome::Finished(r)) if !r.diverged => Ok(r.best_valid_ndcg20),
            Ok(SeedOutcome::Finished(_)) => Err("diverged".to_string()),
            Ok(SeedOutcome::Stopped { .. }) => unreachable!(),
            Err(e) => Err(format!("{e:#}")),
        }
    });
    let mut cells = Vec::new();
    for (k, chunk) in results.chunks(cfg.seeds.len()).enumerate() {
        let (a, b, _) = jobs[k * cfg.seeds.len()];
        let vals: Vec<f64> = chunk.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let errs: Vec<String> = chunk
            .iter()
            .zip(&cfg.seeds)
            .filter_map(|(r, s)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
            .collect();
        cells.push(GridCell {
            gamma1: a,
            gamma2: b,
            ndcg20: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            error: (!errs.is_empty()).then(|| errs.join("; ")),
        });
    }
    let summary = GridSummary { best: best_cell(&cells).cloned(), cells };
    write(&out.join("grid.csv"), &grid_csv(&summary.cells))?;
    write_json(&out.join("grid_summary.json"), &summary)?;
    Ok(summary)
}

// ---- verify ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub passed: bool,
    pub reports: Vec<RelationReport>,
}

pub fn verify(only: &[RelationId], seed: u64, out: &Path) -> anyhow::Result<VerifySummary> {
    let ids: Vec<RelationId> = if only.is_empty() { RelationId::ALL.to_vec() } else { only.to_vec() };
    let reports = relations::run_all(&ids, seed)?;
    let summary = VerifySummary { seed, passed: reports.iter().all(|r| r.passed), reports };
    write_json(&out.join("relations.json"), &summary)?;
    write(&out.join("relations.csv"), &relations::reports_csv(&summary.reports))?;
    Ok(summary)
}

// ---- report ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub loss: LossKind,
    pub seeds: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Relative NDCG@20 change against the first run.
    pub ndcg20_gain_vs_first: f64,
}

/// Compares the `mean_report.json` of several train runs.
pub fn report(runs: &[PathBuf]) -> anyhow::Result<Vec<ComparisonRow>> {
    if runs.is_empty() {
        bail!(Usage("report needs at least one run directory".into()));
    }
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for dir in runs {
        let m: MeanReport = read_json(&dir.join("mean_report.json"))?;
        rows.push(ComparisonRow {
            run: dir.display().to_string(),
            loss: m.config.train.loss.kind,
            seeds: m.seeds_ok.len(),
            metrics: m.test.metrics.clone(),
            ndcg20_gain_vs_first: 0.0,
        });
    }
    let base = rows[0].metrics.get("ndcg@20").copied().unwrap_or(0.0);
    for r in &mut rows {
        let v = r.metrics.get("ndcg@20").copied().unwrap_or(0.0);
        r.ndcg20_gain_vs_first = if base > 0.0 { v / base - 1.0 } else { 0.0 };
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let keys: Vec<String> = rows.first().map(|r| r.metrics.keys().cloned().collect()).unwrap_or_default();
    let mut s = format!("run,loss,seeds,{},ndcg20_gain_vs_first\n", keys.join(","));
    for r in rows {
        let vals: Vec<String> = keys.iter().map(|k| r.metrics.get(k).map_or("nan".into(), |v| v.to_string())).collect();
        s.push_str(&format!("{},{},{},{},{}\n", r.run, r.loss.name(), r.seeds, vals.join(","), r.ndcg20_gain_vs_first));
    }
    s
}

pub fn write_comparison(rows: &[ComparisonRow], out: &Path) -> anyhow::Result<()> {
    write_json(&out.join("comparison.json"), &rows)?;
    write(&out.join("comparison.csv"), &comparison_csv(rows))
}
