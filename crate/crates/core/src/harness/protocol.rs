use std::io::Write;

use serde::{Deserialize, Serialize};

use super::schema::StreamRecord;
use crate::baselines::ModelId;
use crate::error::Result;
use crate::inference::{LossRecord, ModelState, TrainConfig};
use crate::likelihoods::{Prediction, Target};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Fraction of argmax predictions equal to the class target.
    Accuracy,
    /// Mean absolute error of the predictive mean.
    Mae,
}

impl MetricKind {
    pub fn for_target(t: &Target) -> Self {
        match t {
            Target::Class(_) => MetricKind::Accuracy,
            Target::Real(_) | Target::Count(_) => MetricKind::Mae,
        }
    }
}

/// Per-record score: 0/1 correctness for classes, absolute error otherwise.
pub fn score(prediction: &Prediction, target: &Target) -> f64 {
    match target {
        Target::Class(c) => f64::from(u8::from(prediction.argmax() == Some(*c))),
        Target::Real(y) => (prediction.point() - y).abs(),
        Target::Count(y) => (prediction.point() - *y as f64).abs(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub model: ModelId,
    pub stage: usize,
    pub step: usize,
    pub metric: MetricKind,
    /// Mean score over the step's records.
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub model: ModelId,
    pub metric: MetricKind,
    pub steps: Vec<StepMetric>,
    /// `r_matrix[t][a]`: score on group `a`'s test split after training through group `t`.
    pub r_matrix: Vec<Vec<f64>>,
    #[serde(skip)]
    pub losses: Vec<LossRecord>,
}

impl MetricsLog {
    pub fn new(model: ModelId, metric: MetricKind) -> Self {
        Self {
            model,
            metric,
            steps: Vec::new(),
            r_matrix: Vec::new(),
            losses: Vec::new(),
        }
    }

    /// Record-weighted mean over all steps.
    pub fn cumulative(&self) -> f64 {
        let n: usize = self.steps.iter().map(|s| s.n).sum();
        if n == 0 {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.value * s.n as f64).sum::<f64>() / n as f64
    }

    /// Running record-weighted mean after each step.
    pub fn cumulative_series(&self) -> Vec<f64> {
        let (mut num, mut den) = (0.0, 0usize);
        self.steps
            .iter()
            .map(|s| {
                num += s.value * s.n as f64;
                den += s.n;
                num / den as f64
            })
            .collect()
    }

    /// `R_t = mean_{a <= t} R_{t,a}` for every completed group `t`.
    pub fn r_bar(&self) -> Vec<f64> {
        self.r_matrix.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect()
    }

    pub fn write_steps_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_losses_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for l in &self.losses {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOptions {
    /// Epochs of each online update.
    pub epochs: usize,
    pub mc_samples: usize,
    /// Keep the per-step loss trajectory in the log.
    pub keep_losses: bool,
}

fn evaluate(model: &ModelState, records: &[StreamRecord], samples: usize, rng: &mut SeededRng) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        total += score(&model.predict_mc(r, samples, rng)?, &r.target);
    }
    Ok(total / records.len().max(1) as f64)
}

/// Predict, score, then update, batch by batch. Scores are recorded before
/// the model sees the batch's targets.
pub fn run_stream(
    model: &mut ModelState,
    batches: &[Vec<StreamRecord>],
    cfg: &TrainConfig,
    opts: &StreamOptions,
    rng: &mut SeededRng,
) -> Result<MetricsLog> {
    let metric = batches
        .iter()
        .find_map(|b| b.first())
        .map_or(MetricKind::Accuracy, |r| MetricKind::for_target(&r.target));
    let mut log = MetricsLog::new(model.id(), metric);
    for (step, batch) in batches.iter().enumerate() {
        if batch.is_empty() {
            continue;
        }
        let value = evaluate(model, batch, opts.mc_samples, rng)?;
        log.steps.push(StepMetric {
            model: model.id(),
            stage: model.stage(),
            step,
            metric,
            value,
            n: batch.len(),
        });
        model.advance_stage_with(cfg.reset_optimizer);
        let losses = model.fit_online(batch, opts.epochs, cfg, rng)?;
        if opts.keep_losses {
            log.losses.extend(losses);
        }
    }
    Ok(log)
}

/// Trains on each group's training split in turn (initial fit on the first
/// group when the model is fresh, online updates afterwards) and scores all
/// groups seen so far on their test splits.
pub fn run_continual(
    model: &mut ModelState,
    groups: &[(Vec<StreamRecord>, Vec<StreamRecord>)],
    cfg: &TrainConfig,
    opts: &StreamOptions,
    rng: &mut SeededRng,
) -> Result<MetricsLog> {
    let metric = groups
        .iter()
        .find_map(|(tr, _)| tr.first())
        .map_or(MetricKind::Accuracy, |r| MetricKind::for_target(&r.target));
    let mut log = MetricsLog::new(model.id(), metric);
    for (t, (train, _)) in groups.iter().enumerate() {
        let losses = if model.stage() == 0 && t == 0 {
            model.fit_initial(train, cfg, rng)?
        } else {
            model.advance_stage_with(cfg.reset_optimizer);
            model.fit_online(train, opts.epochs, cfg, rng)?
        };
        if opts.keep_losses {
            log.losses.extend(losses);
        }
        let mut row = Vec::with_capacity(t + 1);
        for (_, test) in &groups[..=t] {
            row.push(evaluate(model, test, opts.mc_samples, rng)?);
        }
        let n = groups[t].1.len();
        log.steps.push(StepMetric {
            model: model.id(),
            stage: model.stage(),
            step: t,
            metric,
            value: row.iter().sum::<f64>() / row.len() as f64,
            n,
        });
        log.r_matrix.push(row);
    }
    Ok(log)
}
