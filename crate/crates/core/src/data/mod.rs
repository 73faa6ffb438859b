//! Implicit-feedback interaction data: ingestion, k-core filtering,
//! chronological splitting, Gini statistics and negative sampling.

mod sampling;
pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampling::{sample_negatives, Batch, NegativeMode, NegativeSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Seconds; 0 when the source had no timestamp column.
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: Vec<Interaction>,
    /// One label per interaction, same order.
    pub split: Vec<SplitLabel>,
    /// Train-interaction count per user.
    pub user_pop: Vec<u32>,
    /// Train-interaction count per item.
    pub item_pop: Vec<u32>,
    /// Original (pre-compaction) ids, indexed by compact id.
    pub user_labels: Vec<u64>,
    pub item_labels: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub density: f64,
    pub gini_user: f64,
    pub gini_item: f64,
    pub gini_ratio: f64,
}

impl InteractionDataset {
    /// Builds a dataset with every interaction labelled train. Ids must
    /// already be compact.
    pub fn from_interactions(
        num_users: usize,
        num_items: usize,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        for it in &interactions {
            if it.user >= num_users {
                return Err(Error::Index {
                    what: "user",
                    index: it.user,
                    len: num_users,
                });
            }
            if it.item >= num_items {
                return Err(Error::Index {
                    what: "item",
                    index: it.item,
                    len: num_items,
                });
            }
        }
        let split = vec![SplitLabel::Train; interactions.len()];
        let mut ds = InteractionDataset {
            num_users,
            num_items,
            interactions,
            split,
            user_pop: Vec::new(),
            item_pop: Vec::new(),
            user_labels: (0..num_users as u64).collect(),
            item_labels: (0..num_items as u64).collect(),
        };
        ds.recount();
        Ok(ds)
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    /// Replaces the split labels and recomputes train popularity.
    pub fn with_split(mut self, split: Vec<SplitLabel>) -> Result<Self> {
        if split.len() != self.interactions.len() {
            return Err(Error::Config(format!(
                "split has {} labels for {} interactions",
                split.len(),
                self.interactions.len()
            )));
        }
        self.split = split;
        self.recount();
        Ok(self)
    }

    fn recount(&mut self) {
        self.user_pop = vec![0; self.num_users];
        self.item_pop = vec![0; self.num_items];
        for (it, label) in self.interactions.iter().zip(&self.split) {
            if *label == SplitLabel::Train {
                self.user_pop[it.user] += 1;
                self.item_pop[it.item] += 1;
            }
        }
    }

    pub fn pairs_with(&self, label: SplitLabel) -> Vec<(usize, usize)> {
        self.interactions
            .iter()
            .zip(&self.split)
            .filter(|(_, l)| **l == label)
            .map(|(it, _)| (it.user, it.item))
            .collect()
    }

    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs_with(SplitLabel::Train)
    }

    /// Per-user item lists for one split label, items ascending.
    pub fn items_by_user(&self, label: SplitLabel) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for (it, l) in self.interactions.iter().zip(&self.split) {
            if *l == label {
                out[it.user].push(it.item);
            }
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    /// Statistics over all interactions (every split label).
    pub fn stats(&self) -> Result<DatasetStats> {
        if self.interactions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut users = vec![0f64; self.num_users];
        let mut items = vec![0f64; self.num_items];
        for it in &self.interactions {
            users[it.user] += 1.0;
            items[it.item] += 1.0;
        }
        let gini_user = gini_index(&users)?;
        let gini_item = gini_index(&items)?;
        let gini_ratio = if gini_user > 0.0 {
            gini_item / gini_user
        } else {
            f64::INFINITY
        };
        Ok(DatasetStats {
            num_users: self.num_users,
            num_items: self.num_items,
            num_interactions: self.interactions.len(),
            density: self.interactions.len() as f64
                / (self.num_users as f64 * self.num_items as f64),
            gini_user,
            gini_item,
            gini_ratio,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Reads a `user \t item [\t timestamp]` file.
pub fn ingest(path: &Path) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}

/// Parses TSV interaction text. Ids are compacted by first appearance;
/// repeated (user, item) pairs keep the record with the largest timestamp
/// (the later line on ties).
pub fn parse_tsv(text: &str) -> Result<InteractionDataset> {
    let mut user_ids: HashMap<u64, usize> = HashMap::new();
    let mut item_ids: HashMap<u64, usize> = HashMap::new();
    let mut user_labels = Vec::new();
    let mut item_labels = Vec::new();
    let mut pair_slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut interactions: Vec<Interaction> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse_id = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid {what} id {s:?}"),
            })
        };
        let user_raw = parse_id(fields[0], "user")?;
        let item_raw = parse_id(fields[1], "item")?;
        let timestamp = match fields.get(2) {
            Some(s) if !s.trim().is_empty() => {
                let s = s.trim();
                // Float timestamps appear in some public dumps.
                s.parse::<i64>()
                    .or_else(|_| s.parse::<f64>().map(|f| f as i64))
                    .map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("invalid timestamp {s:?}"),
                    })?
            }
            _ => 0,
        };
        let user = *user_ids.entry(user_raw).or_insert_with(|| {
            user_labels.push(user_raw);
            user_labels.len() - 1
        });
        let item = *item_ids.entry(item_raw).or_insert_with(|| {
            item_labels.push(item_raw);
            item_labels.len() - 1
        });
        let rec = Interaction {
            user,
            item,
            timestamp,
        };
        match pair_slot.get(&(user, item)) {
            Some(&slot) => {
                if timestamp >= interactions[slot].timestamp {
                    interactions[slot] = rec;
                }
            }
            None => {
                pair_slot.insert((user, item), interactions.len());
                interactions.push(rec);
            }
        }
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ds = InteractionDataset::from_interactions(
        user_labels.len(),
        item_labels.len(),
        interactions,
    )?;
    ds.user_labels = user_labels;
    ds.item_labels = item_labels;
    Ok(ds)
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// a fixed point, then re-compacts ids (relative order preserved). Split
/// labels of surviving interactions are kept.
pub fn kcore_filter(ds: &InteractionDataset, k: usize) -> InteractionDataset {
    let k = k.max(1);
    let mut alive: Vec<bool> = vec![true; ds.interactions.len()];
    loop {
        let mut udeg = vec![0usize; ds.num_users];
        let mut ideg = vec![0usize; ds.num_items];
        for (it, _) in ds.interactions.iter().zip(&alive).filter(|(_, a)| **a) {
            udeg[it.user] += 1;
            ideg[it.item] += 1;
        }
        let mut changed = false;
        for (it, a) in ds.interactions.iter().zip(alive.iter_mut()) {
            if *a && (udeg[it.user] < k || ideg[it.item] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut user_map = vec![usize::MAX; ds.num_users];
    let mut item_map = vec![usize::MAX; ds.num_items];
    for (it, _) in ds.interactions.iter().zip(&alive).filter(|(_, a)| **a) {
        user_map[it.user] = 0;
        item_map[it.item] = 0;
    }
    let mut user_labels = Vec::new();
    for (u, slot) in user_map.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = user_labels.len();
            user_labels.push(ds.user_labels[u]);
        }
    }
    let mut item_labels = Vec::new();
    for (i, slot) in item_map.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = item_labels.len();
            item_labels.push(ds.item_labels[i]);
        }
    }
    let mut interactions = Vec::new();
    let mut split = Vec::new();
    for ((it, label), _) in ds
        .interactions
        .iter()
        .zip(&ds.split)
        .zip(&alive)
        .filter(|(_, a)| **a)
    {
        interactions.push(Interaction {
            user: user_map[it.user],
            item: item_map[it.item],
            timestamp: it.timestamp,
        });
        split.push(*label);
    }
    let mut out = InteractionDataset {
        num_users: user_labels.len(),
        num_items: item_labels.len(),
        interactions,
        split,
        user_pop: Vec::new(),
        item_pop: Vec::new(),
        user_labels,
        item_labels,
    };
    out.recount();
    out
}

/// Per-user chronological split. Users with fewer than three interactions
/// keep everything in train; otherwise valid and test each receive at least
/// one interaction. `seed` only breaks timestamp ties.
pub fn split(ds: &InteractionDataset, ratio: [u32; 3], seed: u64) -> InteractionDataset {
    let total: u32 = ratio.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiebreak: Vec<u64> = (0..ds.interactions.len()).map(|_| rng.gen()).collect();

    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); ds.num_users];
    for (idx, it) in ds.interactions.iter().enumerate() {
        by_user[it.user].push(idx);
    }
    let mut labels = vec![SplitLabel::Train; ds.interactions.len()];
    for idxs in &mut by_user {
        let n = idxs.len();
        if n < 3 || total == 0 {
            continue;
        }
        idxs.sort_by_key(|&i| (ds.interactions[i].timestamp, tiebreak[i]));
        let frac = |part: u32| (n as f64 * part as f64 / total as f64).round() as usize;
        let n_valid = frac(ratio[1]).max(1);
        let n_test = frac(ratio[2]).max(1);
        let n_train = n.saturating_sub(n_valid + n_test).max(1);
        let n_valid = n_valid.min(n - n_train - 1);
        for (pos, &i) in idxs.iter().enumerate() {
            labels[i] = if pos < n_train {
                SplitLabel::Train
            } else if pos < n_train + n_valid {
                SplitLabel::Valid
            } else {
                SplitLabel::Test
            };
        }
    }
    let mut out = ds.clone();
    out.split = labels;
    out.recount();
    out
}

/// Gini index of a count distribution:
/// `G = Σ (2i − n − 1)·x_i / (n·Σx)` over ascending-sorted counts, 1-based i.
pub fn gini_index(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::UndefinedStatistic("gini of empty counts".into()));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::UndefinedStatistic(
            "gini requires finite nonnegative counts".into(),
        ));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    if sum <= 0.0 {
        return Err(Error::UndefinedStatistic("gini of all-zero counts".into()));
    }
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok(weighted / (n * sum))
}
