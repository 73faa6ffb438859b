//! Experiment configuration: one flat JSON document, overridden by flags.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! `--set key=value` pairs, dedicated flags (`--loss`, `--seeds`, ...).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cfloss_core::data::{self, synthetic::SyntheticSpec};
use cfloss_core::{InteractionDataset, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Usage;

/// Environment variable naming the root for relative output paths.
pub const OUT_ENV: &str = "CFLOSS_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Prepared `dataset.json`, or a raw TSV log that is k-cored and split on load.
    pub dataset: Option<PathBuf>,
    /// Synthetic generator spec (`zipf:...`), used when `dataset` is unset.
    pub synthetic: Option<String>,
    pub kcore: usize,
    pub split_seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Training seeds; each overrides `seed`.
    pub seeds: Vec<u64>,
    /// Worker threads for seeds and grid cells; 0 means all cores.
    pub jobs: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synthetic: None,
            kcore: 10,
            split_seed: 0,
            out_dir: None,
            seeds: vec![1, 2, 3, 4, 5],
            jobs: 0,
            train: TrainConfig::default(),
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    let Value::Object(m) = serde_json::to_value(ExperimentConfig::default()).unwrap() else {
        unreachable!()
    };
    m.into_iter().map(|(k, _)| k).collect()
}

/// `value` parsed as JSON, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    /// Defaults, then `file`, then `overrides` (`key=value`).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut doc = match serde_json::to_value(ExperimentConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
            let Value::Object(m) = v else {
                bail!(Usage(format!("{}: config must be a JSON object", path.display())));
            };
            merge(&mut doc, m)?;
        }
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Usage(format!("--set expects key=value, got {kv:?}")))?;
            let mut m = Map::new();
            m.insert(k.trim().to_string(), parse_value(v.trim()));
            merge(&mut doc, m)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(Value::Object(doc)).map_err(|e| Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!(Usage("seeds must be non-empty".into()));
        }
        if let Some(p) = &self.dataset {
            if !p.exists() {
                bail!(Usage(format!("dataset {} does not exist", p.display())));
            }
        }
        self.train.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(())
    }

    pub fn jobs(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    /// Loads `dataset`, or generates `synthetic`, then k-cores and splits
    /// raw inputs.
    pub fn load_dataset(&self) -> anyhow::Result<InteractionDataset> {
        let ds = match (&self.dataset, &self.synthetic) {
            (Some(p), _) if p.extension().is_some_and(|e| e == "json") => return Ok(InteractionDataset::load_json(p)?),
            (Some(p), _) => data::ingest(p)?,
            (None, Some(spec)) => spec.parse::<SyntheticSpec>().map_err(|e| Usage(e.to_string()))?.generate()?,
            (None, None) => bail!(Usage("either `dataset` or `synthetic` must be set".into())),
        };
        let ds = data::kcore_filter(&ds, self.kcore);
        if ds.is_empty() {
            return Err(cfloss_core::Error::EmptyDataset.into());
        }
        Ok(data::split(&ds, [7, 1, 2], self.split_seed))
    }
}

fn merge(doc: &mut Map<String, Value>, m: Map<String, Value>) -> anyhow::Result<()> {
    let known = known_keys();
    for (k, v) in m {
        if !known.contains(&k) {
            bail!(Usage(format!("unknown config key {k:?}")));
        }
        doc.insert(k, v);
    }
    Ok(())
}

/// Resolves an output directory: relative paths are placed under
/// `$CFLOSS_OUT` when it is set.
pub fn resolve_out(flag: Option<&Path>, config: Option<&Path>, default: &str) -> PathBuf {
    let p = flag.or(config).map_or_else(|| PathBuf::from(default), Path::to_path_buf);
    match std::env::var_os(OUT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p,
    }
}
