//! Synthetic implicit-feedback generator: Zipf item popularity, log-normal
//! user activity and a latent-factor preference model.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub zipf_exponent: f64,
    pub users: usize,
    pub items: usize,
    /// Target interaction count; the realised count is within a few percent.
    pub interactions: usize,
    pub factors: usize,
    /// Weight of the latent preference term relative to log-popularity.
    pub sharpness: f64,
    /// σ of the log-normal user activity.
    pub activity_sigma: f64,
    pub min_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            zipf_exponent: 1.0,
            users: 1000,
            items: 1500,
            interactions: 100_000,
            factors: 8,
            sharpness: 10.0,
            activity_sigma: 0.8,
            min_per_user: 12,
            seed: 0,
        }
    }
}

/// Parses `zipf:<s>[,key=value]*`, e.g. `zipf:1.0,users=1000,items=1500`.
/// Keys: users, items, interactions, factors, sharpness, sigma, min, seed.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("synthetic spec {s:?}: {m}"));
        let rest = s
            .strip_prefix("zipf:")
            .ok_or_else(|| bad("must start with `zipf:`".into()))?;
        let mut parts = rest.split(',');
        let mut spec = SyntheticSpec::default();
        let exp = parts.next().unwrap_or_default();
        spec.zipf_exponent = exp
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid exponent {exp:?}")))?;
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            let value = value.trim();
            let int = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| bad(format!("invalid integer for {key}")))
            };
            let real = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| bad(format!("invalid number for {key}")))
            };
            match key.trim() {
                "users" => spec.users = int()?,
                "items" => spec.items = int()?,
                "interactions" => spec.interactions = int()?,
                "factors" => spec.factors = int()?,
                "sharpness" => spec.sharpness = real()?,
                "sigma" => spec.activity_sigma = real()?,
                "min" => spec.min_per_user = int()?,
                "seed" => spec.seed = int()? as u64,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items < 2 {
            return Err(Error::Config("synthetic data needs users >= 1 and items >= 2".into()));
        }
        if self.min_per_user > self.items {
            return Err(Error::Config("min interactions per user exceeds item count".into()));
        }
        if !(self.zipf_exponent >= 0.0) || self.factors == 0 {
            return Err(Error::Config("invalid zipf exponent or factor count".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<InteractionDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.factors;

        // Popularity rank is a random permutation of item ids.
        let mut ranks: Vec<usize> = (1..=self.items).collect();
        ranks.shuffle(&mut rng);
        let log_pop: Vec<f64> = ranks
            .iter()
            .map(|&r| -self.zipf_exponent * (r as f64).ln())
            .collect();

        let scale = 1.0 / (k as f64).sqrt();
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect()
        };
        let user_f = draw(self.users * k, &mut rng);
        let item_f = draw(self.items * k, &mut rng);

        let activity = LogNormal::new(0.0, self.activity_sigma)
            .map_err(|e| Error::Config(e.to_string()))?;
        let raw: Vec<f64> = (0..self.users).map(|_| activity.sample(&mut rng)).collect();
        let raw_sum: f64 = raw.iter().sum();
        let cap = (self.items / 2).max(self.min_per_user);
        let counts: Vec<usize> = raw
            .iter()
            .map(|a| {
                let n = (a / raw_sum * self.interactions as f64).round() as usize;
                n.clamp(self.min_per_user, cap)
            })
            .collect();

        let mut interactions = Vec::new();
        let mut keys: Vec<(f64, usize)> = Vec::with_capacity(self.items);
        for (u, &n_u) in counts.iter().enumerate() {
            let pu = &user_f[u * k..(u + 1) * k];
            keys.clear();
            for i in 0..self.items {
                let qi = &item_f[i * k..(i + 1) * k];
                let pref: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum();
                let logit = log_pop[i] + self.sharpness * pref;
                // Gumbel-top-k == weighted sampling without replacement.
                let uniform: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                keys.push((logit - (-uniform.ln()).ln(), i));
            }
            let n_u = n_u.min(self.items);
            keys.select_nth_unstable_by(n_u - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, item) in &keys[..n_u] {
                interactions.push(Interaction {
                    user: u,
                    item,
                    timestamp: rng.gen_range(0..1_000_000_000),
                });
            }
        }
        // Items never drawn would be isolated; keep ids compact.
        let mut used = vec![usize::MAX; self.items];
        let mut next = 0;
        for it in &mut interactions {
            if used[it.item] == usize::MAX {
                used[it.item] = next;
                next += 1;
            }
            it.item = used[it.item];
        }
        let mut ds = InteractionDataset::from_interactions(self.users, next, interactions)?;
        let mut labels = vec![0u64; next];
        for (orig, &compact) in used.iter().enumerate() {
            if compact != usize::MAX {
                labels[compact] = orig as u64;
            }
        }
        ds.item_labels = labels;
        Ok(ds)
    }
}
