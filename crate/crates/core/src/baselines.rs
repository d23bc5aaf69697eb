//! Comparison systems: deterministic hash embeddings fine-tuned by maximum
//! likelihood (Slow/Medium/FastAda), collision-free expandable embeddings
//! (EE), and their probabilistic counterpart (P-EE).
//!
//! All of them run through [`ModelState`](crate::inference::ModelState);
//! this module provides the pieces that differ: point tables, the growing
//! vocabulary, model identities and parameter accounting.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ParamTable;
use crate::error::{Error, Result};
use crate::gaussian_table::INIT_SCALE;
use crate::hashing::HashSpec;
use crate::inference::{ModelState, TrainConfig};
use crate::harness::StreamRecord;
use crate::rng::{standard_normal, SeededRng};

/// Point-valued embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DeterministicTable {
    /// Entries drawn i.i.d. from `N(0, 0.1^2)`, matching the mean
    /// initialisation of the probabilistic tables.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            rows,
            cols,
            values: (0..rows * cols).map(|_| INIT_SCALE * standard_normal(rng)).collect(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid("value count does not match the table shape"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn push_init_row<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for _ in 0..self.cols {
            self.values.push(INIT_SCALE * standard_normal(rng));
        }
        self.rows += 1;
    }
}

/// Injective, append-only map from item key to table row.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct VocabMap {
    items: Vec<String>,
    rows: HashMap<String, usize>,
}

impl From<Vec<String>> for VocabMap {
    fn from(items: Vec<String>) -> Self {
        let rows = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { items, rows }
    }
}

impl From<VocabMap> for Vec<String> {
    fn from(v: VocabMap) -> Self {
        v.items
    }
}

impl VocabMap {
    pub fn get(&self, item: &str) -> Option<usize> {
        self.rows.get(item).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in row order.
    pub fn items(&self) -> &[String] {
        &self.items
    }

    fn insert(&mut self, item: &str) -> usize {
        let row = self.items.len();
        self.items.push(item.to_string());
        self.rows.insert(item.to_string(), row);
        row
    }
}

/// Row of `item`, appending a freshly initialised row on first sight.
pub fn ee_lookup_or_grow(vmap: &mut VocabMap, table: &mut ParamTable, item: &str, rng: &mut SeededRng) -> usize {
    if let Some(row) = vmap.get(item) {
        return row;
    }
    match table {
        ParamTable::Gaussian(t) => t.push_init_row(rng),
        ParamTable::Point(t) => t.push_init_row(rng),
    }
    vmap.insert(item)
}

/// The compared systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Phe,
    SlowAda,
    MediumAda,
    FastAda,
    Ee,
    Pee,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::Phe,
        ModelId::SlowAda,
        ModelId::MediumAda,
        ModelId::FastAda,
        ModelId::Ee,
        ModelId::Pee,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Phe => "phe",
            ModelId::SlowAda => "slow_ada",
            ModelId::MediumAda => "medium_ada",
            ModelId::FastAda => "fast_ada",
            ModelId::Ee => "ee",
            ModelId::Pee => "pee",
        }
    }

    pub fn is_probabilistic(&self) -> bool {
        matches!(self, ModelId::Phe | ModelId::Pee)
    }

    pub fn is_hashed(&self) -> bool {
        !matches!(self, ModelId::Ee | ModelId::Pee)
    }

    /// Epochs per online update; PHE, EE and P-EE use the configured
    /// online budget, the Ada variants use 15 / 5 / 1.
    pub fn online_epochs(&self, default_epochs: usize) -> usize {
        match self {
            ModelId::FastAda => 15,
            ModelId::MediumAda => 5,
            ModelId::SlowAda => 1,
            ModelId::Phe | ModelId::Ee | ModelId::Pee => default_epochs,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("model", format!("unknown model `{s}`")))
    }
}

/// Embedding parameters of PHE: `2 (B d + P K)`.
pub fn phe_param_count(spec: &HashSpec) -> usize {
    2 * (spec.bucket_count() * spec.embed_dim() + spec.weight_buckets() * spec.num_hashes())
}

/// Embedding parameters of a deterministic hash embedding: `B d + P K`.
pub fn ada_param_count(spec: &HashSpec) -> usize {
    phe_param_count(spec) / 2
}

/// Embedding parameters of P-EE over `vocab` items: `2 V d`.
pub fn pee_param_count(vocab: usize, embed_dim: usize) -> usize {
    2 * vocab * embed_dim
}

pub fn ee_param_count(vocab: usize, embed_dim: usize) -> usize {
    vocab * embed_dim
}

/// Maximum-likelihood fine-tuning of a deterministic hashed model for
/// `epochs` passes over `data` (no prior, no KL).
pub fn ada_fit_online(
    model: &mut ModelState,
    data: &[StreamRecord],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<()> {
    if model.embedder().is_probabilistic() {
        return Err(Error::invalid("Ada fine-tuning needs a deterministic model"));
    }
    model.fit_online(data, epochs, cfg, rng).map(|_| ())
}

/// Online variational update of a collision-free probabilistic model.
pub fn pee_fit_online(
    model: &mut ModelState,
    data: &[StreamRecord],
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<()> {
    if !model.embedder().is_probabilistic() || model.embedder().e().rows() != model.vocab_size().unwrap_or(usize::MAX) {
        return Err(Error::invalid("P-EE update needs a probabilistic expandable model"));
    }
    model.fit_online(data, epochs, cfg, rng).map(|_| ())
}
