//! End-to-end experiment runners driven by an [`ExperimentConfig`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{pee_param_count, phe_param_count, ModelId};
use crate::checkpoint;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::encoder::FeatureLayout;
use crate::error::{Error, Result};
use crate::exact_demo::{alternating_demo, AlternatingTraces, DemoConfig};
use crate::harness::{
    batches, ingest_csv, init_split, partition_by_items, partition_by_vocab, run_continual, run_stream, smooth_gaussian,
    Dataset, MetricKind, MetricsLog, Normalizer, StreamOptions, StreamRecord,
};
use crate::inference::ModelState;
use crate::rng::{derive_seed, seeded};
use crate::synthetic::rating_stream;

/// Embedding parameter accounting for a hashed model and its expandable
/// counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub phe: usize,
    pub pee: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// `phe / pee`, rounded to two decimals.
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub kind: ExperimentKind,
    pub model: ModelId,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    pub steps: usize,
    pub records: usize,
    /// Record-weighted mean score over the whole stream.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_quartile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_quartile: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub r_bar: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub r_matrix: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_params: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demo: Option<DemoSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub bayes_final_mean: [f64; 3],
    pub phe_final_mean: [f64; 3],
    pub ogd_final: [f64; 3],
    /// Largest error at a recurrence step, per method.
    pub ogd_max_recurrence_error: f64,
    pub bayes_max_recurrence_error: f64,
    pub phe_max_recurrence_error: f64,
}

/// Everything a run produced, before anything is written to disk.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub log: Option<MetricsLog>,
    pub model: Option<ModelState>,
    pub demo: Option<AlternatingTraces>,
    pub smoothed: Option<Vec<(usize, f64, f64)>>,
    pub seconds: f64,
}

/// Loads the configured dataset, resolving its path against `base_dir`.
pub fn load_dataset(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Dataset> {
    if cfg.kind == ExperimentKind::Bench {
        let bench = cfg.bench.as_ref().ok_or_else(|| Error::config("bench", "missing"))?;
        return rating_stream(bench);
    }
    let data = cfg.data.as_ref().ok_or_else(|| Error::config("data", "missing"))?;
    let path = ExperimentConfig::resolve(base_dir, &data.path);
    if !path.exists() {
        return Err(Error::data(format!("dataset {} not found", path.display())));
    }
    ingest_csv(&path, &data.schema())
}

pub fn param_report(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ParamReport> {
    let spec = cfg.encoder_config()?.spec;
    let vocab_size = match cfg.vocab_size {
        Some(v) => v,
        None => load_dataset(cfg, base_dir)?.total_vocabulary(),
    };
    let phe = phe_param_count(&spec);
    let pee = pee_param_count(vocab_size, spec.embed_dim());
    Ok(ParamReport {
        phe,
        pee,
        vocab_size,
        embed_dim: spec.embed_dim(),
        compression_ratio: (phe as f64 / pee as f64 * 100.0).round() / 100.0,
    })
}

fn layout_for(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<FeatureLayout> {
    Ok(FeatureLayout {
        numeric_dim: dataset.schema.numeric_columns().len(),
        columns: dataset.schema.categorical_columns(),
        embed_dim: cfg.encoder_config()?.spec.embed_dim(),
        product: cfg.encoder.product_features,
    })
}

fn new_model(cfg: &ExperimentConfig, dataset: &Dataset, rng: &mut crate::rng::SeededRng) -> Result<ModelState> {
    let head = cfg.head.ok_or_else(|| Error::config("head", "missing"))?;
    let classes = dataset.class_labels.len();
    if matches!(head, crate::config::HeadConfig::CategoricalLinear) && classes < 2 {
        return Err(Error::data("a categorical head needs a class target with at least two labels"));
    }
    ModelState::new(cfg.model, &cfg.encoder_config()?, layout_for(cfg, dataset)?, head.kind(classes), rng)
}

fn quartiles(log: &MetricsLog) -> (Option<f64>, Option<f64>) {
    let n = log.steps.len();
    if n == 0 {
        return (None, None);
    }
    let q = n.div_ceil(4);
    let mean = |s: &[crate::harness::StepMetric]| {
        let w: usize = s.iter().map(|m| m.n).sum();
        s.iter().map(|m| m.value * m.n as f64).sum::<f64>() / w.max(1) as f64
    };
    (Some(mean(&log.steps[..q])), Some(mean(&log.steps[n - q..])))
}

fn stream_steps(cfg: &ExperimentConfig, records: &[StreamRecord]) -> Vec<Vec<StreamRecord>> {
    let stream = cfg.stream.clone().unwrap_or_default();
    if stream.step_by_timestamp {
        let mut out: Vec<Vec<StreamRecord>> = Vec::new();
        for r in records {
            match out.last_mut() {
                Some(b) if b[0].timestamp == r.timestamp => b.push(r.clone()),
                _ => out.push(vec![r.clone()]),
            }
        }
        return out;
    }
    batches(records, stream.step_size.unwrap_or(cfg.train.batch_size))
}

fn run_online(cfg: &ExperimentConfig, mut dataset: Dataset) -> Result<(MetricsLog, ModelState)> {
    let stream = cfg.stream.clone().unwrap_or_default();
    let ordered = dataset.records.iter().any(|r| r.timestamp.is_some());
    if ordered {
        dataset.sort_by_timestamp();
    }
    let split_seed = stream.split_seed.unwrap_or_else(|| derive_seed(cfg.seed, 2));
    let (init_idx, rest_idx) = match stream.init_before {
        Some(t) => {
            let n = dataset.records.partition_point(|r| r.timestamp.is_some_and(|ts| ts < t));
            ((0..n).collect(), (n..dataset.records.len()).collect())
        }
        None => init_split(dataset.records.len(), stream.init_fraction, split_seed, ordered),
    };
    let mut init: Vec<StreamRecord> = init_idx.iter().map(|&i| dataset.records[i].clone()).collect();
    let mut rest: Vec<StreamRecord> = rest_idx.iter().map(|&i| dataset.records[i].clone()).collect();
    if init.is_empty() || rest.is_empty() {
        return Err(Error::data("initial split and stream must both be nonempty"));
    }
    let norm = Normalizer::fit(&dataset.schema, &init);
    norm.apply(&mut init);
    norm.apply(&mut rest);

    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut model = new_model(cfg, &dataset, &mut rng)?;
    let initial_losses = model.fit_initial(&init, &cfg.train, &mut rng)?;
    if let Some(cols) = &stream.update_columns {
        let mask = model.layout().columns.iter().map(|c| cols.contains(c)).collect();
        model.set_trainable_columns(Some(mask))?;
    }
    let opts = StreamOptions {
        epochs: cfg.model.online_epochs(cfg.train.epochs_online),
        mc_samples: cfg.train.mc_samples_predict,
        keep_losses: true,
    };
    let steps = stream_steps(cfg, &rest);
    let mut log = run_stream(&mut model, &steps, &cfg.train, &opts, &mut rng)?;
    let mut losses = initial_losses;
    losses.append(&mut log.losses);
    log.losses = losses;
    Ok((log, model))
}

fn run_groups(cfg: &ExperimentConfig, dataset: Dataset) -> Result<(MetricsLog, ModelState)> {
    let c = cfg.continual.as_ref().ok_or_else(|| Error::config("continual", "missing"))?;
    let column = dataset
        .schema
        .categorical_index(&c.column)
        .ok_or_else(|| Error::config("continual.column", "not a categorical column"))?;
    let split_seed = c.split_seed.unwrap_or_else(|| derive_seed(cfg.seed, 3));
    let groups = match &c.groups {
        Some(sets) => partition_by_items(&dataset, column, sets)?,
        None => partition_by_vocab(&dataset, column, c.n_groups, split_seed)?,
    };
    let mut splits: Vec<(Vec<StreamRecord>, Vec<StreamRecord>)> = groups
        .iter()
        .enumerate()
        .map(|(g, group)| group.train_test(c.train_fraction, derive_seed(split_seed, g as u64)))
        .collect();
    let norm = Normalizer::fit(&dataset.schema, &splits[0].0);
    for (train, test) in &mut splits {
        norm.apply(train);
        norm.apply(test);
    }
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut model = new_model(cfg, &dataset, &mut rng)?;
    let opts = StreamOptions {
        epochs: cfg.model.online_epochs(cfg.train.epochs_online),
        mc_samples: cfg.train.mc_samples_predict,
        keep_losses: true,
    };
    let log = run_continual(&mut model, &splits, &cfg.train, &opts, &mut rng)?;
    Ok((log, model))
}

fn demo_summary(t: &AlternatingTraces) -> DemoSummary {
    let rec = t.recurrence_steps();
    let max_at = |trace: &[f64]| rec.iter().map(|&s| trace[s]).fold(0.0, f64::max);
    DemoSummary {
        bayes_final_mean: t.bayes_final_mean,
        phe_final_mean: t.phe_final_mean,
        ogd_final: t.ogd_final,
        ogd_max_recurrence_error: max_at(&t.ogd),
        bayes_max_recurrence_error: max_at(&t.bayes),
        phe_max_recurrence_error: max_at(&t.phe),
    }
}

/// Runs the experiment in memory.
pub fn execute(cfg: &ExperimentConfig, base_dir: &Path) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut summary = Summary {
        name: cfg.name.clone(),
        kind: cfg.kind,
        model: cfg.model,
        seed: cfg.seed,
        metric: None,
        steps: 0,
        records: 0,
        cumulative: None,
        first_quartile: None,
        last_quartile: None,
        r_bar: Vec::new(),
        r_matrix: Vec::new(),
        embedding_params: None,
        demo: None,
    };
    if cfg.kind == ExperimentKind::Demo {
        let demo_cfg = cfg.demo.clone().unwrap_or_else(|| DemoConfig {
            seed: cfg.seed,
            ..DemoConfig::default()
        });
        let traces = alternating_demo(&demo_cfg)?;
        summary.steps = traces.schedule.len();
        summary.records = traces.schedule.len();
        summary.demo = Some(demo_summary(&traces));
        return Ok(RunResult {
            summary,
            log: None,
            model: None,
            demo: Some(traces),
            smoothed: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let dataset = load_dataset(cfg, base_dir)?;
    let (log, model) = match cfg.kind {
        ExperimentKind::OnlineStream | ExperimentKind::Bench => run_online(cfg, dataset)?,
        ExperimentKind::ContinualGroups => run_groups(cfg, dataset)?,
        ExperimentKind::Demo => unreachable!(),
    };
    let (q1, q4) = quartiles(&log);
    summary.metric = Some(log.metric);
    summary.steps = log.steps.len();
    summary.records = log.steps.iter().map(|s| s.n).sum();
    summary.cumulative = Some(log.cumulative());
    summary.first_quartile = q1;
    summary.last_quartile = q4;
    summary.r_bar = log.r_bar();
    summary.r_matrix = log.r_matrix.clone();
    summary.embedding_params = Some(model.embedding_param_count());
    let smoothed = cfg.stream.as_ref().and_then(|s| s.smoothing_bandwidth).map(|bw| {
        let values: Vec<f64> = log.steps.iter().map(|s| s.value).collect();
        let sm = smooth_gaussian(&values, bw);
        log.steps.iter().zip(values).zip(sm).map(|((s, v), m)| (s.step, v, m)).collect()
    });
    Ok(RunResult {
        summary,
        log: Some(log),
        model: Some(model),
        demo: None,
        smoothed,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every artifact of `result` into `out_dir` and returns the paths.
///
/// Wall time goes to `timing.json` alone so the other files are
/// reproducible byte for byte.
pub fn write_outputs(result: &RunResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut mark = |name: &str| written.push(out_dir.join(name));

    let mut w = create(out_dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, &result.summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    mark("summary.json");

    let mut w = create(out_dir, "timing.json")?;
    serde_json::to_writer(&mut w, &serde_json::json!({ "wall_seconds": result.seconds }))?;
    w.write_all(b"\n")?;
    w.flush()?;
    mark("timing.json");

    if let Some(log) = &result.log {
        let mut w = create(out_dir, "metrics.jsonl")?;
        log.write_steps_jsonl(&mut w)?;
        w.flush()?;
        mark("metrics.jsonl");
        let mut w = create(out_dir, "losses.jsonl")?;
        log.write_losses_jsonl(&mut w)?;
        w.flush()?;
        mark("losses.jsonl");
    }
    if let Some(sm) = &result.smoothed {
        let mut out = csv::Writer::from_writer(create(out_dir, "smoothed.csv")?);
        out.write_record(["step", "value", "smoothed"])?;
        for (s, v, m) in sm {
            out.write_record([s.to_string(), v.to_string(), m.to_string()])?;
        }
        out.flush()?;
        mark("smoothed.csv");
    }
    if let Some(model) = &result.model {
        checkpoint::save(model, &out_dir.join("checkpoint.json"))?;
        mark("checkpoint.json");
    }
    if let Some(t) = &result.demo {
        let mut w = create(out_dir, "demo.csv")?;
        t.write_csv(&mut w)?;
        w.flush()?;
        mark("demo.csv");
    }
    Ok(written)
}

/// Runs the experiment and writes its outputs to `out_dir`.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunResult> {
    let result = execute(cfg, base_dir)?;
    write_outputs(&result, out_dir)?;
    Ok(result)
}
