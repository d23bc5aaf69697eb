//! Synthetic rating stream: users arrive over time, their latent tastes drift
//! day by day, and ratings in `[0, 1]` come from a low-rank model whose item
//! factors cluster by genre. Genres reach the model as multi-hot numeric
//! features.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ColumnKind, ColumnSpec, Dataset, Schema, StreamRecord};
use crate::likelihoods::Target;
use crate::rng::{derive_seed, seeded, standard_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingStreamConfig {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    /// Upper bound on the genres of one item (at least one each).
    pub genres_per_item: usize,
    pub latent_dim: usize,
    pub days: usize,
    pub ratings_per_day: usize,
    /// Per-day innovation scale of the user random walk.
    pub drift: f64,
    /// Standard deviation of the rating noise.
    pub noise: f64,
    /// Users arrive uniformly over this share of the days.
    pub arrival_fraction: f64,
    /// Zipf exponent of item popularity and user activity (0 is uniform).
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for RatingStreamConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            genres: 10,
            genres_per_item: 3,
            latent_dim: 4,
            days: 60,
            ratings_per_day: 300,
            drift: 0.1,
            noise: 0.05,
            arrival_fraction: 0.75,
            popularity_exponent: 1.0,
            seed: 7,
        }
    }
}

impl RatingStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.genres_per_item == 0 || self.genres_per_item > self.genres {
            return Err(Error::config("bench.genres_per_item", "must lie in 1..=genres"));
        }
        for (field, v) in [
            ("bench.users", self.users),
            ("bench.items", self.items),
            ("bench.genres", self.genres),
            ("bench.latent_dim", self.latent_dim),
            ("bench.days", self.days),
            ("bench.ratings_per_day", self.ratings_per_day),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::config("bench.drift", "must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("bench.noise", "must be finite and nonnegative"));
        }
        if !(self.popularity_exponent >= 0.0 && self.popularity_exponent.is_finite()) {
            return Err(Error::config("bench.popularity_exponent", "must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.arrival_fraction) {
            return Err(Error::config("bench.arrival_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn rating_schema(genres: usize) -> Schema {
    let mut columns = vec![
        ColumnSpec::new("user", ColumnKind::Categorical),
        ColumnSpec::new("item", ColumnKind::Categorical),
    ];
    for g in 0..genres {
        columns.push(ColumnSpec {
            normalize: false,
            ..ColumnSpec::new(&format!("genre_{g}"), ColumnKind::Numeric)
        });
    }
    columns.push(ColumnSpec::new("rating", ColumnKind::TargetReal));
    columns.push(ColumnSpec::new("day", ColumnKind::Timestamp));
    Schema {
        columns,
        missing_token: "__missing__".into(),
    }
}

/// Zipf weights `1 / rank^s` over a seeded random ranking of `n` entities.
fn zipf_weights(n: usize, s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(rng);
    ranks.into_iter().map(|r| (r as f64).powf(-s)).collect()
}

fn gaussian_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| scale * standard_normal(rng)).collect()
}

/// Generates the stream in day order; the timestamp of each record is its day.
pub fn rating_stream(cfg: &RatingStreamConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seeded(derive_seed(cfg.seed, 0x5241));
    let k = cfg.latent_dim;
    let centres: Vec<Vec<f64>> = (0..cfg.genres).map(|_| gaussian_vec(k, 1.0, &mut rng)).collect();
    let item_genres: Vec<Vec<usize>> = (0..cfg.items)
        .map(|_| {
            let n = rng.random_range(1..=cfg.genres_per_item);
            let mut gs = rand::seq::index::sample(&mut rng, cfg.genres, n).into_vec();
            gs.sort_unstable();
            gs
        })
        .collect();
    let item_vec: Vec<Vec<f64>> = item_genres
        .iter()
        .map(|gs| {
            (0..k)
                .map(|j| {
                    let c: f64 = gs.iter().map(|&g| centres[g][j]).sum::<f64>() / gs.len() as f64;
                    c + 0.5 * standard_normal(&mut rng)
                })
                .collect()
        })
        .collect();
    let multi_hot: Vec<Vec<f64>> = item_genres
        .iter()
        .map(|gs| (0..cfg.genres).map(|g| f64::from(u8::from(gs.contains(&g)))).collect())
        .collect();
    let item_bias = gaussian_vec(cfg.items, 0.3, &mut rng);
    let user_bias = gaussian_vec(cfg.users, 0.3, &mut rng);
    let mut user_vec: Vec<Vec<f64>> = (0..cfg.users).map(|_| gaussian_vec(k, 1.0, &mut rng)).collect();
    let span = cfg.arrival_fraction * cfg.days as f64;
    let arrival: Vec<usize> = (0..cfg.users)
        .map(|u| (u as f64 * span / cfg.users as f64).floor() as usize)
        .collect();
    let item_pick = WeightedIndex::new(zipf_weights(cfg.items, cfg.popularity_exponent, &mut rng))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let user_weight = zipf_weights(cfg.users, cfg.popularity_exponent, &mut rng);
    let keep = (1.0 - cfg.drift * cfg.drift).sqrt();
    let scale = 1.0 / (k as f64).sqrt();

    let mut records = Vec::with_capacity(cfg.days * cfg.ratings_per_day);
    for day in 0..cfg.days {
        let active = arrival.partition_point(|&a| a <= day).max(1);
        let user_pick = WeightedIndex::new(&user_weight[..active]).map_err(|e| Error::invalid(e.to_string()))?;
        for _ in 0..cfg.ratings_per_day {
            let u = user_pick.sample(&mut rng);
            let i = item_pick.sample(&mut rng);
            let dot: f64 = user_vec[u].iter().zip(&item_vec[i]).map(|(a, b)| a * b).sum();
            let z = scale * dot + user_bias[u] + item_bias[i];
            let y = (1.0 / (1.0 + (-z).exp()) + cfg.noise * standard_normal(&mut rng)).clamp(0.0, 1.0);
            records.push(StreamRecord {
                categorical: vec![format!("u{u}"), format!("i{i}")],
                numeric: multi_hot[i].clone(),
                target: Target::Real(y),
                timestamp: Some(day as i64),
            });
        }
        for v in user_vec.iter_mut() {
            for x in v.iter_mut() {
                *x = keep * *x + cfg.drift * standard_normal(&mut rng);
            }
        }
    }
    Ok(Dataset {
        schema: rating_schema(cfg.genres),
        class_labels: Vec::new(),
        records,
    })
}
