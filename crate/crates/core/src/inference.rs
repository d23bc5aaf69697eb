//! Variational training and prediction.
//!
//! Stage 0 maximises the minibatch ELBO jointly over the variational tables
//! and the head parameters. Every later stage freezes the head, turns the
//! current posterior into the prior, and maximises the online ELBO on the new
//! data only. Deterministic models run through the same loop with the KL
//! terms absent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{Optimizer, OptimizerKind};
use crate::baselines::ModelId;
use crate::encoder::{EncoderConfig, Embedder, FeatureLayout, Indexer, ParamTable, Sampling, TableGrad};
use crate::error::{Error, Result};
use crate::gaussian_table::PriorSnapshot;
use crate::harness::StreamRecord;
use crate::likelihoods::{HeadKind, LikelihoodHead, Prediction};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_initial: usize,
    pub epochs_online: usize,
    pub mc_samples_train: usize,
    pub mc_samples_predict: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub optimizer: OptimizerKind,
    /// Multiplier on the KL terms (1 is the ELBO).
    pub kl_weight: f64,
    /// Fresh optimiser moments at every online stage.
    pub reset_optimizer: bool,
    /// Let online stages move the aggregation-weight table `W` as well as `E`.
    pub online_weight_table: bool,
    /// Overrides the likelihood rescaling count; defaults to the size of the
    /// data passed to a fit call.
    pub dataset_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 128,
            epochs_initial: 100,
            epochs_online: 15,
            mc_samples_train: 1,
            mc_samples_predict: 8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            optimizer: OptimizerKind::Adam,
            kl_weight: 1.0,
            reset_optimizer: true,
            online_weight_table: false,
            dataset_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        for (field, v) in [
            ("train.batch_size", self.batch_size),
            ("train.mc_samples_train", self.mc_samples_train),
            ("train.mc_samples_predict", self.mc_samples_predict),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta1", "Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::config("train.kl_weight", "must be finite and nonnegative"));
        }
        if self.dataset_size == Some(0) {
            return Err(Error::config("train.dataset_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the loss trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    #[serde(rename = "kl_E")]
    pub kl_e: f64,
    #[serde(rename = "kl_W")]
    pub kl_w: f64,
    pub nll: f64,
}

/// Gradients of the minibatch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub e: TableGrad,
    pub w: Option<TableGrad>,
    /// Present only while the head is trainable.
    pub theta: Option<Vec<f64>>,
}

/// Value of the minibatch loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub nll: f64,
    pub kl_e: f64,
    pub kl_w: f64,
}

/// Everything learned by one model: tables, priors, head and optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    id: ModelId,
    embedder: Embedder,
    prior_e: Option<PriorSnapshot>,
    prior_w: Option<PriorSnapshot>,
    head: LikelihoodHead,
    layout: FeatureLayout,
    stage: usize,
    trainable_columns: Option<Vec<bool>>,
    optimizer: Optimizer,
}

impl ModelState {
    pub fn new(
        id: ModelId,
        encoder: &EncoderConfig,
        layout: FeatureLayout,
        head: HeadKind,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if layout.embed_dim != encoder.spec.embed_dim() {
            return Err(Error::config("embed_dim", "feature layout and hash spec disagree"));
        }
        if layout.product && layout.columns.len() < 2 {
            return Err(Error::config("product_features", "needs at least two categorical columns"));
        }
        let embedder = if id.is_hashed() {
            Embedder::hashed(encoder, id.is_probabilistic(), rng)
        } else {
            Embedder::expandable(layout.embed_dim, id.is_probabilistic(), encoder.column_namespacing)
        };
        let head = LikelihoodHead::init(head, layout.feature_dim(), rng)?;
        Self::from_parts(id, embedder, head, layout)
    }

    /// Assembles a stage-0 model; probabilistic tables get `N(0, 1)` priors.
    pub fn from_parts(id: ModelId, embedder: Embedder, head: LikelihoodHead, layout: FeatureLayout) -> Result<Self> {
        if head.feature_dim() != layout.feature_dim() {
            return Err(Error::invalid("head input size does not match the feature layout"));
        }
        if layout.embed_dim != embedder.embed_dim() {
            return Err(Error::invalid("feature layout and embedder disagree on the embedding size"));
        }
        let standard = |t: &ParamTable| {
            t.is_probabilistic().then(|| PriorSnapshot::standard(t.rows(), t.cols()))
        };
        Ok(Self {
            id,
            prior_e: standard(embedder.e()),
            prior_w: embedder.w().and_then(standard),
            embedder,
            head,
            layout,
            stage: 0,
            trainable_columns: None,
            optimizer: Optimizer::adam(0.01),
        })
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn embedder_mut(&mut self) -> &mut Embedder {
        &mut self.embedder
    }

    pub fn head(&self) -> &LikelihoodHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut LikelihoodHead {
        &mut self.head
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn prior_e(&self) -> Option<&PriorSnapshot> {
        self.prior_e.as_ref()
    }

    pub fn prior_w(&self) -> Option<&PriorSnapshot> {
        self.prior_w.as_ref()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    /// Distinct items held by an expandable model.
    pub fn vocab_size(&self) -> Option<usize> {
        match self.embedder.index() {
            Indexer::Vocab(v) => Some(v.len()),
            Indexer::Hashed(_) => None,
        }
    }

    /// True when every table entry, prior and head weight is finite.
    pub fn is_finite(&self) -> bool {
        let prior_ok = |p: &Option<PriorSnapshot>| {
            p.as_ref()
                .is_none_or(|p| p.mu0().iter().chain(p.sigma0().iter()).all(|v| v.is_finite()))
        };
        self.embedder.e().is_finite()
            && self.embedder.w().is_none_or(ParamTable::is_finite)
            && prior_ok(&self.prior_e)
            && prior_ok(&self.prior_w)
            && self.head.theta().iter().all(|v| v.is_finite())
    }

    /// Embedding parameter count (means and scales for probabilistic tables).
    pub fn embedding_param_count(&self) -> usize {
        self.embedder.param_count()
    }

    /// Restricts online gradient flow to the marked categorical columns.
    pub fn set_trainable_columns(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.layout.columns.len() {
                return Err(Error::invalid("trainable mask must have one entry per categorical column"));
            }
        }
        self.trainable_columns = mask;
        Ok(())
    }

    /// Allocates rows for unseen items of an expandable model (no-op for
    /// hashed models). New probabilistic rows get `N(0, 1)` prior rows.
    pub fn register<'a>(&mut self, records: impl IntoIterator<Item = &'a StreamRecord>, rng: &mut SeededRng) {
        if !matches!(self.embedder.index(), Indexer::Vocab(_)) {
            return;
        }
        let mut added = 0;
        for r in records {
            for (column, value) in self.layout.columns.iter().zip(&r.categorical) {
                let key = self.embedder.key(column, value);
                added += self.embedder.register(&key, rng);
            }
        }
        if added > 0 {
            if let Some(p) = &self.prior_e {
                self.prior_e = Some(p.with_standard_rows(added));
            }
        }
    }

    fn head_trainable(&self) -> bool {
        self.stage == 0
    }

    /// Minibatch loss `-(N/|b|) sum log p + kl_weight (KL_E + KL_W)` and its
    /// gradients, with one reparametrised draw per distinct row per sample.
    pub fn loss_and_grad(
        &self,
        batch: &[&StreamRecord],
        dataset_size: usize,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<(LossParts, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty minibatch"));
        }
        let samples = if self.embedder.is_probabilistic() { cfg.mc_samples_train } else { 1 };
        let sampling = if self.embedder.is_probabilistic() { Sampling::Sample } else { Sampling::Mean };
        let scale = dataset_size as f64 / (batch.len() * samples) as f64;
        let mut ge = self.embedder.e().zero_grad();
        let mut gw = self.embedder.w().map(ParamTable::zero_grad);
        let mut gtheta = self.head_trainable().then(|| vec![0.0; self.head.theta().len()]);
        let mask = if self.stage > 0 { self.trainable_columns.as_deref() } else { None };
        let mut nll = 0.0;
        for _ in 0..samples {
            let mut pass = self.embedder.begin_pass(sampling);
            for record in batch {
                let (features, traces) = self.embedder.encode_record(&self.layout, &mut pass, record, rng)?;
                let (ll, dtheta, dfeat) = self.head.grad(&features, &record.target)?;
                nll -= scale * ll;
                if let Some(g) = gtheta.as_mut() {
                    g.iter_mut().zip(&dtheta).for_each(|(a, b)| *a -= scale * b);
                }
                let upstream: Vec<f64> = dfeat.iter().map(|v| -scale * v).collect();
                self.embedder
                    .backprop_record(&self.layout, &mut pass, &features, &traces, &upstream, mask);
            }
            self.embedder.finish(&pass, &mut ge, gw.as_mut());
        }
        let mut kl_e = 0.0;
        let mut kl_w = 0.0;
        if let (ParamTable::Gaussian(t), Some(p)) = (self.embedder.e(), &self.prior_e) {
            kl_e = t.accumulate_kl_grad(p, cfg.kl_weight, &mut ge.mu, &mut ge.rho)?;
        }
        if let (Some(ParamTable::Gaussian(t)), Some(p), Some(g)) = (self.embedder.w(), &self.prior_w, gw.as_mut()) {
            kl_w = t.accumulate_kl_grad(p, cfg.kl_weight, &mut g.mu, &mut g.rho)?;
        }
        let parts = LossParts {
            loss: nll + cfg.kl_weight * (kl_e + kl_w),
            nll,
            kl_e,
            kl_w,
        };
        Ok((
            parts,
            Gradients {
                e: ge,
                w: gw,
                theta: gtheta,
            },
        ))
    }

    fn apply(&mut self, grads: &Gradients, update_w: bool) {
        let train_head = self.head_trainable();
        let (e, w) = self.embedder.tables_mut();
        let mut params: Vec<Option<&mut [f64]>> = e.buffers_mut().into_iter().map(Some).collect();
        let mut gs: Vec<Option<&[f64]>> = grads.e.buffers().into_iter().map(Some).collect();
        if let (Some(w), Some(gw)) = (w, &grads.w) {
            for (p, g) in w.buffers_mut().into_iter().zip(gw.buffers()) {
                params.push(update_w.then_some(p));
                gs.push(update_w.then_some(g));
            }
        }
        match (&grads.theta, train_head) {
            (Some(g), true) => {
                params.push(Some(self.head.theta_mut()));
                gs.push(Some(g));
            }
            _ => {
                params.push(None);
                gs.push(None);
            }
        }
        self.optimizer.step(params, gs);
    }

    fn sync_optimizer(&mut self, cfg: &TrainConfig) {
        if self.optimizer.kind != cfg.optimizer {
            self.optimizer = match cfg.optimizer {
                OptimizerKind::Adam => Optimizer::adam(cfg.learning_rate),
                OptimizerKind::Sgd => Optimizer::sgd(cfg.learning_rate),
            };
        }
        self.optimizer.lr = cfg.learning_rate;
        self.optimizer.beta1 = cfg.beta1;
        self.optimizer.beta2 = cfg.beta2;
        self.optimizer.eps = cfg.adam_eps;
    }

    fn fit(
        &mut self,
        data: &[StreamRecord],
        epochs: usize,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<LossRecord>> {
        cfg.validate()?;
        if data.is_empty() || epochs == 0 {
            return Ok(Vec::new());
        }
        self.sync_optimizer(cfg);
        self.register(data, rng);
        let n = cfg.dataset_size.unwrap_or(data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut log = Vec::new();
        let mut step = 0;
        for epoch in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&StreamRecord> = chunk.iter().map(|&i| &data[i]).collect();
                let (parts, grads) = self.loss_and_grad(&batch, n, cfg, rng)?;
                if !parts.loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss {} at stage {}, epoch {epoch}, step {step} (nll {}, kl_E {}, kl_W {})",
                        parts.loss, self.stage, parts.nll, parts.kl_e, parts.kl_w
                    )));
                }
                self.apply(&grads, self.stage == 0 || cfg.online_weight_table);
                if !self.embedder.e().is_finite() || self.embedder.w().is_some_and(|w| !w.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite table entry after stage {}, epoch {epoch}, step {step}",
                        self.stage
                    )));
                }
                log.push(LossRecord {
                    stage: self.stage,
                    epoch,
                    step,
                    loss: parts.loss,
                    kl_e: parts.kl_e,
                    kl_w: parts.kl_w,
                    nll: parts.nll,
                });
                step += 1;
            }
        }
        Ok(log)
    }

    /// Joint fit of tables and head for `cfg.epochs_initial` epochs.
    pub fn fit_initial(&mut self, data: &[StreamRecord], cfg: &TrainConfig, rng: &mut SeededRng) -> Result<Vec<LossRecord>> {
        if self.stage != 0 {
            return Err(Error::invalid("fit_initial is only valid at stage 0"));
        }
        self.fit(data, cfg.epochs_initial, cfg, rng)
    }

    /// Freezes the head, snapshots the posterior as the next prior and resets
    /// the optimiser moments.
    pub fn advance_stage(&mut self) {
        self.advance_stage_with(true);
    }

    /// As [`advance_stage`](Self::advance_stage), optionally keeping the
    /// optimiser moments.
    pub fn advance_stage_with(&mut self, reset_optimizer: bool) {
        if let ParamTable::Gaussian(t) = self.embedder.e() {
            self.prior_e = Some(t.snapshot());
        }
        if let Some(ParamTable::Gaussian(t)) = self.embedder.w() {
            self.prior_w = Some(t.snapshot());
        }
        if reset_optimizer {
            self.optimizer.reset();
        }
        self.stage += 1;
    }

    /// Online update on `data` for `epochs` epochs; only the tables move.
    pub fn fit_online(
        &mut self,
        data: &[StreamRecord],
        epochs: usize,
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<Vec<LossRecord>> {
        if self.stage == 0 {
            return Err(Error::invalid("fit_online needs advance_stage first"));
        }
        self.fit(data, epochs, cfg, rng)
    }

    /// Features for `record` with every table at its mean.
    pub fn features_mean(&self, record: &StreamRecord) -> Result<Vec<f64>> {
        let mut pass = self.embedder.begin_pass(Sampling::Mean);
        let mut rng = crate::rng::seeded(0);
        Ok(self.embedder.encode_record(&self.layout, &mut pass, record, &mut rng)?.0)
    }

    /// Monte-Carlo predictive: the average of `samples` per-draw predictions.
    /// Deterministic models use a single pass.
    pub fn predict_mc(&self, record: &StreamRecord, samples: usize, rng: &mut SeededRng) -> Result<Prediction> {
        if !self.embedder.is_probabilistic() {
            return self.head.predict(&self.features_mean(record)?);
        }
        if samples == 0 {
            return Err(Error::invalid("need at least one Monte-Carlo sample"));
        }
        let mut acc: Option<Prediction> = None;
        for _ in 0..samples {
            let mut pass = self.embedder.begin_pass(Sampling::Sample);
            let (features, _) = self.embedder.encode_record(&self.layout, &mut pass, record, rng)?;
            let p = self.head.predict(&features)?;
            acc = Some(match (acc, p) {
                (None, p) => p,
                (Some(Prediction::Probabilities(mut a)), Prediction::Probabilities(b)) => {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    Prediction::Probabilities(a)
                }
                (Some(Prediction::Mean(a)), Prediction::Mean(b)) => Prediction::Mean(a + b),
                _ => unreachable!("a head always returns the same prediction kind"),
            });
        }
        let s = samples as f64;
        Ok(match acc.expect("samples >= 1") {
            Prediction::Probabilities(a) => Prediction::Probabilities(a.into_iter().map(|x| x / s).collect()),
            Prediction::Mean(m) => Prediction::Mean(m / s),
        })
    }
}
