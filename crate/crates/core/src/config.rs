//! Experiment configuration files (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::ModelId;
use crate::encoder::{Aggregation, EncoderConfig};
use crate::error::{Error, Result};
use crate::exact_demo::DemoConfig;
use crate::harness::{ColumnSpec, Schema};
use crate::hashing::HashSpec;
use crate::inference::TrainConfig;
use crate::likelihoods::HeadKind;
use crate::rng::derive_seed;
use crate::synthetic::RatingStreamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OnlineStream,
    ContinualGroups,
    Demo,
    Bench,
}

/// Hash-table sizes. Seeds come from `seeds` (K + 1 values), else from
/// `seed`, else from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashConfig {
    pub bucket_count: usize,
    pub num_hashes: usize,
    pub weight_buckets: usize,
    pub embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl HashConfig {
    pub fn spec(&self, experiment_seed: u64) -> Result<HashSpec> {
        match &self.seeds {
            Some(seeds) => HashSpec::with_seeds(
                self.bucket_count,
                self.num_hashes,
                self.weight_buckets,
                self.embed_dim,
                seeds.clone(),
            ),
            None => HashSpec::new(
                self.bucket_count,
                self.num_hashes,
                self.weight_buckets,
                self.embed_dim,
                self.seed.unwrap_or_else(|| derive_seed(experiment_seed, 0x4a5f)),
            ),
        }
        .map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("hash.{field}"), message),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderOptions {
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_true")]
    pub column_namespacing: bool,
    /// Append the elementwise product of the first two column embeddings.
    #[serde(default)]
    pub product_features: bool,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::WeightedSum,
            column_namespacing: true,
            product_features: false,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    64
}

fn default_sigma_y() -> f64 {
    0.1
}

/// Likelihood head; the class count of a categorical head comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HeadConfig {
    CategoricalLinear,
    GaussianMlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_sigma_y")]
        sigma_y: f64,
    },
    PoissonLinear,
    GaussianLinear {
        #[serde(default = "default_sigma_y")]
        sigma_y: f64,
    },
}

impl HeadConfig {
    pub fn kind(&self, classes: usize) -> HeadKind {
        match *self {
            HeadConfig::CategoricalLinear => HeadKind::CategoricalLinear { classes },
            HeadConfig::GaussianMlp { hidden, sigma_y } => HeadKind::GaussianMlp { hidden, sigma_y },
            HeadConfig::PoissonLinear => HeadKind::PoissonLinear,
            HeadConfig::GaussianLinear { sigma_y } => HeadKind::GaussianLinear { sigma_y },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV path, relative to the config file's directory.
    pub path: PathBuf,
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_missing")]
    pub missing_token: String,
}

fn default_missing() -> String {
    "__missing__".to_string()
}

impl DataConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            columns: self.columns.clone(),
            missing_token: self.missing_token.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Share of the rows used for the initial fit (ignored when ordering by time).
    pub init_fraction: f64,
    /// Timestamp below which rows form the initial fit when ordering by time.
    pub init_before: Option<i64>,
    /// Records per streamed step; defaults to `train.batch_size`.
    pub step_size: Option<usize>,
    /// Group steps by timestamp (one step per distinct timestamp) instead of fixed-size chunks.
    pub step_by_timestamp: bool,
    /// Categorical columns whose embeddings receive online gradients (all when absent).
    pub update_columns: Option<Vec<String>>,
    pub split_seed: Option<u64>,
    /// Gaussian bandwidth (in steps) of the optional smoothed-curve CSV.
    pub smoothing_bandwidth: Option<f64>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            init_fraction: 0.2,
            init_before: None,
            step_size: None,
            step_by_timestamp: false,
            update_columns: None,
            split_seed: None,
            smoothing_bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinualConfig {
    pub column: String,
    pub n_groups: usize,
    /// Explicit item groups; a seeded random split is used when absent.
    #[serde(default)]
    pub groups: Option<Vec<Vec<String>>>,
    #[serde(default = "two_thirds")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: Option<u64>,
}

fn two_thirds() -> f64 {
    2.0 / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default = "default_model")]
    pub model: ModelId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hash: Option<HashConfig>,
    #[serde(default)]
    pub encoder: EncoderOptions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub head: Option<HeadConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub stream: Option<StreamConfig>,
    #[serde(default)]
    pub continual: Option<ContinualConfig>,
    #[serde(default)]
    pub demo: Option<DemoConfig>,
    #[serde(default)]
    pub bench: Option<RatingStreamConfig>,
    /// Vocabulary size used for expandable-table parameter counts instead of
    /// counting the dataset.
    #[serde(default)]
    pub vocab_size: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_model() -> ModelId {
    ModelId::Phe
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<config>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let needs = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::config(field, format!("required for kind {:?}", self.kind)))
            }
        };
        match self.kind {
            ExperimentKind::OnlineStream | ExperimentKind::ContinualGroups | ExperimentKind::Bench => {
                needs(self.hash.is_some(), "hash")?;
                needs(self.head.is_some(), "head")?;
            }
            ExperimentKind::Demo => {}
        }
        match self.kind {
            ExperimentKind::OnlineStream => needs(self.data.is_some(), "data")?,
            ExperimentKind::ContinualGroups => {
                needs(self.data.is_some(), "data")?;
                needs(self.continual.is_some(), "continual")?;
            }
            ExperimentKind::Bench => needs(self.bench.is_some(), "bench")?,
            ExperimentKind::Demo => {}
        }
        if let Some(h) = &self.hash {
            h.spec(self.seed)?;
        }
        if let Some(d) = &self.data {
            d.schema().validate()?;
        }
        if let Some(s) = &self.stream {
            if !(0.0..1.0).contains(&s.init_fraction) {
                return Err(Error::config("stream.init_fraction", "must lie in [0, 1)"));
            }
            if s.step_size == Some(0) {
                return Err(Error::config("stream.step_size", "must be at least 1"));
            }
            if let (Some(cols), Some(d)) = (&s.update_columns, &self.data) {
                let known = d.schema().categorical_columns();
                if let Some(c) = cols.iter().find(|c| !known.contains(c)) {
                    return Err(Error::config("stream.update_columns", format!("`{c}` is not a categorical column")));
                }
            }
            if s.smoothing_bandwidth.is_some_and(|b| !(b >= 0.0)) {
                return Err(Error::config("stream.smoothing_bandwidth", "must be nonnegative"));
            }
        }
        if let Some(c) = &self.continual {
            if c.n_groups == 0 {
                return Err(Error::config("continual.n_groups", "must be at least 1"));
            }
            if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
                return Err(Error::config("continual.train_fraction", "must lie in (0, 1)"));
            }
            if c.groups.as_ref().is_some_and(|g| g.len() != c.n_groups) {
                return Err(Error::config("continual.groups", "must list exactly n_groups item sets"));
            }
            if let Some(d) = &self.data {
                if d.schema().categorical_index(&c.column).is_none() {
                    return Err(Error::config("continual.column", format!("`{}` is not a categorical column", c.column)));
                }
            }
        }
        if let Some(d) = &self.demo {
            d.validate()?;
        }
        if let Some(b) = &self.bench {
            b.validate()?;
        }
        if let (Some(HeadConfig::GaussianMlp { hidden: 0, .. }), _) = (&self.head, ()) {
            return Err(Error::config("head.hidden", "must be at least 1"));
        }
        match self.head {
            Some(HeadConfig::GaussianMlp { sigma_y, .. } | HeadConfig::GaussianLinear { sigma_y })
                if !(sigma_y > 0.0 && sigma_y.is_finite()) =>
            {
                return Err(Error::config("head.sigma_y", "must be positive"));
            }
            _ => {}
        }
        if self.vocab_size == Some(0) {
            return Err(Error::config("vocab_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let hash = self.hash.as_ref().ok_or_else(|| Error::config("hash", "missing"))?;
        Ok(EncoderConfig {
            spec: hash.spec(self.seed)?,
            aggregation: self.encoder.aggregation,
            column_namespacing: self.encoder.column_namespacing,
        })
    }

    /// Resolves a path from the config relative to `base`.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "kind": "online_stream", "model": "fast_ada",
        "hash": {"bucket_count": 7, "num_hashes": 3, "weight_buckets": 11, "embed_dim": 20, "seed": 1},
        "head": {"type": "categorical-linear"},
        "data": {"path": "x.csv", "columns": [
            {"name": "c", "kind": "categorical"}, {"name": "y", "kind": "target-class"}]}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.model, ModelId::FastAda);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.encoder_config().unwrap().spec.num_hashes(), 3);
    }

    #[test]
    fn zero_hashes_is_a_field_error() {
        let text = MINIMAL.replace("\"num_hashes\": 3", "\"num_hashes\": 0");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("hash.num_hashes"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"seed\": 1}", "\"seed\": 1, \"buckets\": 3}");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = MINIMAL.replace("\"name\": \"t\",", "\"name\": \"t\", \"extra\": true,");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn missing_sections_reported() {
        let text = MINIMAL.replace("\"head\": {\"type\": \"categorical-linear\"},", "");
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("head"));
    }

    #[test]
    fn explicit_seed_list_checked() {
        let text = MINIMAL.replace("\"seed\": 1}", "\"seeds\": [1, 2, 2, 3]}");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
