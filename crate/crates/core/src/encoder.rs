//! Stochastic item embeddings: `K` table lookups combined by an assembly
//! function, and record-level feature assembly.
//!
//! A forward pass draws each distinct table row at most once ([`Pass`]);
//! every item in the pass that touches that row reuses the same sample, and
//! gradients are accumulated per drawn row before being scattered back to
//! `mu` and `rho`.

use serde::{Deserialize, Serialize};

use crate::baselines::{DeterministicTable, VocabMap};
use crate::error::{Error, Result};
use crate::gaussian_table::{sigmoid, GaussianTable};
use crate::harness::StreamRecord;
use crate::hashing::{HashSpec, Signature};
use crate::rng::{fill_standard_normal, SeededRng};

/// Separator between a column name and its value in namespaced item keys.
pub const NAMESPACE_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// `sum_k W[h_W(s), k] * E[h_k(s)]` with a learned weight table.
    #[default]
    WeightedSum,
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub spec: HashSpec,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_true")]
    pub column_namespacing: bool,
}

fn default_true() -> bool {
    true
}

impl EncoderConfig {
    pub fn new(spec: HashSpec) -> Self {
        Self {
            spec,
            aggregation: Aggregation::WeightedSum,
            column_namespacing: true,
        }
    }
}

/// The string that is hashed (or looked up) for `value` in `column`.
pub fn item_key(column: &str, value: &str, namespacing: bool) -> String {
    if namespacing {
        format!("{column}{NAMESPACE_SEPARATOR}{value}")
    } else {
        value.to_string()
    }
}

/// Borrowed view of a table that rows can be drawn from.
#[derive(Debug, Clone, Copy)]
pub enum TableRef<'a> {
    Gaussian(&'a GaussianTable),
    Point(&'a DeterministicTable),
}

impl TableRef<'_> {
    pub fn rows(&self) -> usize {
        match self {
            TableRef::Gaussian(t) => t.rows(),
            TableRef::Point(t) => t.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            TableRef::Gaussian(t) => t.cols(),
            TableRef::Point(t) => t.cols(),
        }
    }
}

/// A trainable table: variational Gaussian or deterministic point values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamTable {
    Gaussian(GaussianTable),
    Point(DeterministicTable),
}

impl ParamTable {
    pub fn view(&self) -> TableRef<'_> {
        match self {
            ParamTable::Gaussian(t) => TableRef::Gaussian(t),
            ParamTable::Point(t) => TableRef::Point(t),
        }
    }

    pub fn rows(&self) -> usize {
        self.view().rows()
    }

    pub fn cols(&self) -> usize {
        self.view().cols()
    }

    pub fn is_probabilistic(&self) -> bool {
        matches!(self, ParamTable::Gaussian(_))
    }

    pub fn param_count(&self) -> usize {
        match self {
            ParamTable::Gaussian(t) => t.param_count(),
            ParamTable::Point(t) => t.param_count(),
        }
    }

    pub fn mean_row(&self, row: usize) -> &[f64] {
        match self {
            ParamTable::Gaussian(t) => t.mu_row(row),
            ParamTable::Point(t) => t.row(row),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ParamTable::Gaussian(t) => t.is_finite(),
            ParamTable::Point(t) => t.values().iter().all(|v| v.is_finite()),
        }
    }

    pub fn zero_grad(&self) -> TableGrad {
        let n = self.rows() * self.cols();
        TableGrad {
            mu: vec![0.0; n],
            rho: if self.is_probabilistic() { vec![0.0; n] } else { Vec::new() },
        }
    }

    /// Parameter buffers in a fixed order (`mu`, `rho` or just the values).
    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ParamTable::Gaussian(t) => {
                let (mu, rho) = t.buffers_mut();
                vec![mu, rho]
            }
            ParamTable::Point(t) => vec![t.values_mut()],
        }
    }
}

/// Dense gradient for one table; `rho` is empty for point tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGrad {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl TableGrad {
    pub fn buffers(&self) -> Vec<&[f64]> {
        if self.rho.is_empty() {
            vec![&self.mu]
        } else {
            vec![&self.mu, &self.rho]
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mu.iter_mut().chain(self.rho.iter_mut()).for_each(|g| *g *= s);
    }
}

/// How rows are realised in a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Use the mean (noise identically zero).
    Mean,
    /// Draw `mu + sigma * eps` once per distinct row.
    Sample,
}

const NO_SLOT: usize = usize::MAX;

/// Rows drawn from one table during one forward pass.
#[derive(Debug, Clone)]
pub struct Draws {
    cols: usize,
    slot_of: Vec<usize>,
    rows: Vec<usize>,
    noise: Vec<f64>,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl Draws {
    pub fn new(table: TableRef<'_>) -> Self {
        Self {
            cols: table.cols(),
            slot_of: vec![NO_SLOT; table.rows()],
            rows: Vec::new(),
            noise: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn slot(&mut self, table: TableRef<'_>, row: usize, sampling: Sampling, rng: &mut SeededRng) -> usize {
        if self.slot_of[row] != NO_SLOT {
            return self.slot_of[row];
        }
        let slot = self.rows.len();
        self.slot_of[row] = slot;
        self.rows.push(row);
        let start = self.values.len();
        self.noise.resize(start + self.cols, 0.0);
        self.values.resize(start + self.cols, 0.0);
        self.grads.resize(start + self.cols, 0.0);
        let noise = &mut self.noise[start..];
        let out = &mut self.values[start..];
        match table {
            TableRef::Gaussian(t) => {
                if sampling == Sampling::Sample {
                    fill_standard_normal(rng, noise);
                }
                t.sample_row_into(row, noise, out);
            }
            TableRef::Point(t) => out.copy_from_slice(t.row(row)),
        }
        slot
    }

    fn value(&self, slot: usize) -> &[f64] {
        &self.values[slot * self.cols..(slot + 1) * self.cols]
    }

    /// Distinct rows drawn so far, in first-use order.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Standard-normal noise used for `row`, if it was drawn.
    pub fn noise_of(&self, row: usize) -> Option<&[f64]> {
        let slot = *self.slot_of.get(row)?;
        (slot != NO_SLOT).then(|| &self.noise[slot * self.cols..(slot + 1) * self.cols])
    }

    /// Sampled value of `row`, if it was drawn.
    pub fn value_of(&self, row: usize) -> Option<&[f64]> {
        let slot = *self.slot_of.get(row)?;
        (slot != NO_SLOT).then(|| self.value(slot))
    }

    fn add_grad(&mut self, slot: usize, g: &[f64], scale: f64) {
        for (a, b) in self.grads[slot * self.cols..(slot + 1) * self.cols].iter_mut().zip(g) {
            *a += scale * b;
        }
    }

    /// Adds the accumulated sample gradients into `grad` via the
    /// reparametrisation `d mu = g`, `d rho = g * eps * sigmoid(rho)`.
    pub fn scatter(&self, table: TableRef<'_>, grad: &mut TableGrad) {
        let c = self.cols;
        for (slot, &row) in self.rows.iter().enumerate() {
            for j in 0..c {
                let g = self.grads[slot * c + j];
                grad.mu[row * c + j] += g;
                if let TableRef::Gaussian(t) = table {
                    grad.rho[row * c + j] += g * self.noise[slot * c + j] * sigmoid(t.rho()[row * c + j]);
                }
            }
        }
    }
}

/// Per-pass draw caches for `E` and (optionally) `W`.
#[derive(Debug, Clone)]
pub struct Pass {
    pub sampling: Sampling,
    pub e: Draws,
    pub w: Option<Draws>,
}

/// Which drawn rows produced one item embedding, for backpropagation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemTrace {
    slots: Vec<usize>,
    w_slot: Option<usize>,
    weights: Vec<f64>,
}

fn embed_signature(
    aggregation: Aggregation,
    sig: &Signature,
    e: TableRef<'_>,
    w: Option<TableRef<'_>>,
    pass: &mut Pass,
    rng: &mut SeededRng,
) -> (Vec<f64>, ItemTrace) {
    let k_count = sig.rows.len();
    let slots: Vec<usize> = sig.rows.iter().map(|&r| pass.e.slot(e, r, pass.sampling, rng)).collect();
    let (w_slot, weights) = match (aggregation, w, pass.w.as_mut()) {
        (Aggregation::WeightedSum, Some(w), Some(draws)) => {
            let s = draws.slot(w, sig.weight_row, pass.sampling, rng);
            (Some(s), draws.value(s).to_vec())
        }
        (Aggregation::Mean, ..) => (None, vec![1.0 / k_count as f64; k_count]),
        _ => (None, vec![1.0; k_count]),
    };
    let mut out = vec![0.0; e.cols()];
    for (&slot, &wk) in slots.iter().zip(&weights) {
        for (o, v) in out.iter_mut().zip(pass.e.value(slot)) {
            *o += wk * v;
        }
    }
    (out, ItemTrace { slots, w_slot, weights })
}

fn backprop_trace(pass: &mut Pass, trace: &ItemTrace, g: &[f64]) {
    for (k, (&slot, &wk)) in trace.slots.iter().zip(&trace.weights).enumerate() {
        if let (Some(ws), Some(draws)) = (trace.w_slot, pass.w.as_mut()) {
            let dw: f64 = g.iter().zip(pass.e.value(slot)).map(|(a, b)| a * b).sum();
            draws.grads[ws * draws.cols + k] += dw;
        }
        pass.e.add_grad(slot, g, wk);
    }
}

/// Result of [`encode`]: the sampled embedding plus the draws needed to
/// propagate a gradient back to both tables.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub embedding: Vec<f64>,
    pub signature: Signature,
    pub pass: Pass,
    trace: ItemTrace,
}

impl Encoded {
    /// Gradients w.r.t. `(mu, rho)` of `E` and `W` for an upstream gradient
    /// `g` on the embedding.
    pub fn backprop(&mut self, e: &GaussianTable, w: &GaussianTable, g: &[f64]) -> (TableGrad, TableGrad) {
        let e_ref = TableRef::Gaussian(e);
        let w_ref = TableRef::Gaussian(w);
        backprop_trace(&mut self.pass, &self.trace, g);
        let mut ge = ParamTable::Gaussian(e.clone()).zero_grad();
        let mut gw = ParamTable::Gaussian(w.clone()).zero_grad();
        self.pass.e.scatter(e_ref, &mut ge);
        if let Some(d) = &self.pass.w {
            d.scatter(w_ref, &mut gw);
        }
        (ge, gw)
    }
}

fn check_tables(cfg: &EncoderConfig, e: &GaussianTable, w: &GaussianTable) -> Result<()> {
    let s = &cfg.spec;
    if (e.rows(), e.cols()) != (s.bucket_count(), s.embed_dim())
        || (w.rows(), w.cols()) != (s.weight_buckets(), s.num_hashes())
    {
        return Err(Error::invalid("table shapes do not match the hash spec"));
    }
    Ok(())
}

/// Samples one embedding for `item` (the item key, already namespaced).
pub fn encode(
    cfg: &EncoderConfig,
    e: &GaussianTable,
    w: &GaussianTable,
    item: &str,
    rng: &mut SeededRng,
) -> Result<Encoded> {
    encode_with(cfg, e, w, item, Sampling::Sample, rng)
}

/// The embedding with all noise at zero.
pub fn encode_mean(cfg: &EncoderConfig, e: &GaussianTable, w: &GaussianTable, item: &str) -> Result<Vec<f64>> {
    let mut rng = crate::rng::seeded(0);
    Ok(encode_with(cfg, e, w, item, Sampling::Mean, &mut rng)?.embedding)
}

fn encode_with(
    cfg: &EncoderConfig,
    e: &GaussianTable,
    w: &GaussianTable,
    item: &str,
    sampling: Sampling,
    rng: &mut SeededRng,
) -> Result<Encoded> {
    check_tables(cfg, e, w)?;
    let signature = cfg.spec.hash_signature(item);
    let mut pass = Pass {
        sampling,
        e: Draws::new(TableRef::Gaussian(e)),
        w: Some(Draws::new(TableRef::Gaussian(w))),
    };
    let (embedding, trace) = embed_signature(
        cfg.aggregation,
        &signature,
        TableRef::Gaussian(e),
        Some(TableRef::Gaussian(w)),
        &mut pass,
        rng,
    );
    Ok(Encoded {
        embedding,
        signature,
        pass,
        trace,
    })
}

/// Maps item keys to rows: hashing for bounded tables, a growing dictionary
/// for expandable ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indexer {
    Hashed(HashSpec),
    Vocab(VocabMap),
}

/// Layout of the feature vector fed to the likelihood head:
/// `[numeric..., emb(col_1), ..., emb(col_n), emb(col_1) * emb(col_2)]`,
/// where the elementwise product is present only in product mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub numeric_dim: usize,
    pub columns: Vec<String>,
    pub embed_dim: usize,
    pub product: bool,
}

impl FeatureLayout {
    pub fn feature_dim(&self) -> usize {
        self.numeric_dim + self.embed_dim * (self.columns.len() + usize::from(self.product))
    }
}

/// Embedding tables plus the indexing scheme that addresses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    aggregation: Aggregation,
    namespacing: bool,
    index: Indexer,
    e: ParamTable,
    w: Option<ParamTable>,
}

impl Embedder {
    /// Bounded hashed tables; `W` exists only for weighted-sum aggregation.
    pub fn hashed(cfg: &EncoderConfig, probabilistic: bool, rng: &mut SeededRng) -> Self {
        let s = &cfg.spec;
        let make = |rows, cols, rng: &mut SeededRng| {
            if probabilistic {
                ParamTable::Gaussian(GaussianTable::init(rows, cols, rng))
            } else {
                ParamTable::Point(DeterministicTable::init(rows, cols, rng))
            }
        };
        let e = make(s.bucket_count(), s.embed_dim(), rng);
        let w = (cfg.aggregation == Aggregation::WeightedSum).then(|| make(s.weight_buckets(), s.num_hashes(), rng));
        Self {
            aggregation: cfg.aggregation,
            namespacing: cfg.column_namespacing,
            index: Indexer::Hashed(cfg.spec.clone()),
            e,
            w,
        }
    }

    /// One private row per distinct item, grown on first sight.
    pub fn expandable(embed_dim: usize, probabilistic: bool, namespacing: bool) -> Self {
        let e = if probabilistic {
            ParamTable::Gaussian(GaussianTable::constant(0, embed_dim, 0.0, 1.0))
        } else {
            ParamTable::Point(DeterministicTable::zeros(0, embed_dim))
        };
        Self {
            aggregation: Aggregation::Sum,
            namespacing,
            index: Indexer::Vocab(VocabMap::default()),
            e,
            w: None,
        }
    }

    pub fn from_parts(
        aggregation: Aggregation,
        namespacing: bool,
        index: Indexer,
        e: ParamTable,
        w: Option<ParamTable>,
    ) -> Result<Self> {
        if let Indexer::Hashed(spec) = &index {
            if e.rows() != spec.bucket_count() || e.cols() != spec.embed_dim() {
                return Err(Error::invalid("E does not match the hash spec"));
            }
            match (&w, aggregation) {
                (Some(w), Aggregation::WeightedSum)
                    if w.rows() == spec.weight_buckets() && w.cols() == spec.num_hashes() => {}
                (None, Aggregation::Sum | Aggregation::Mean) => {}
                _ => return Err(Error::invalid("W does not match the aggregation and hash spec")),
            }
        }
        Ok(Self {
            aggregation,
            namespacing,
            index,
            e,
            w,
        })
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn namespacing(&self) -> bool {
        self.namespacing
    }

    pub fn index(&self) -> &Indexer {
        &self.index
    }

    pub fn e(&self) -> &ParamTable {
        &self.e
    }

    pub fn w(&self) -> Option<&ParamTable> {
        self.w.as_ref()
    }

    pub fn e_mut(&mut self) -> &mut ParamTable {
        &mut self.e
    }

    pub fn w_mut(&mut self) -> Option<&mut ParamTable> {
        self.w.as_mut()
    }

    pub fn tables_mut(&mut self) -> (&mut ParamTable, Option<&mut ParamTable>) {
        (&mut self.e, self.w.as_mut())
    }

    pub fn embed_dim(&self) -> usize {
        self.e.cols()
    }

    pub fn is_probabilistic(&self) -> bool {
        self.e.is_probabilistic()
    }

    pub fn param_count(&self) -> usize {
        self.e.param_count() + self.w.as_ref().map_or(0, ParamTable::param_count)
    }

    pub fn key(&self, column: &str, value: &str) -> String {
        item_key(column, value, self.namespacing)
    }

    /// Rows addressed by `key`; `None` for an item an expandable table has not seen.
    pub fn signature(&self, key: &str) -> Option<Signature> {
        match &self.index {
            Indexer::Hashed(spec) => Some(spec.hash_signature(key)),
            Indexer::Vocab(v) => v.get(key).map(|row| Signature {
                rows: vec![row],
                weight_row: 0,
            }),
        }
    }

    /// Allocates a row for an unseen item of an expandable table. Returns the
    /// number of rows added (0 or 1).
    pub fn register(&mut self, key: &str, rng: &mut SeededRng) -> usize {
        match (&mut self.index, &mut self.e) {
            (Indexer::Vocab(v), table) => {
                let before = v.len();
                crate::baselines::ee_lookup_or_grow(v, table, key, rng);
                v.len() - before
            }
            (Indexer::Hashed(_), _) => 0,
        }
    }

    pub fn begin_pass(&self, sampling: Sampling) -> Pass {
        Pass {
            sampling,
            e: Draws::new(self.e.view()),
            w: self.w.as_ref().map(|w| Draws::new(w.view())),
        }
    }

    /// Embedding of one item key; unseen expandable items embed to zero.
    pub fn embed(&self, pass: &mut Pass, key: &str, rng: &mut SeededRng) -> (Vec<f64>, ItemTrace) {
        match self.signature(key) {
            Some(sig) => embed_signature(
                self.aggregation,
                &sig,
                self.e.view(),
                self.w.as_ref().map(ParamTable::view),
                pass,
                rng,
            ),
            None => (vec![0.0; self.embed_dim()], ItemTrace::default()),
        }
    }

    pub fn backprop(&self, pass: &mut Pass, trace: &ItemTrace, g: &[f64]) {
        backprop_trace(pass, trace, g);
    }

    /// Scatters the pass's sample gradients into `(dE, dW)`.
    pub fn finish(&self, pass: &Pass, ge: &mut TableGrad, gw: Option<&mut TableGrad>) {
        pass.e.scatter(self.e.view(), ge);
        if let (Some(d), Some(w), Some(gw)) = (&pass.w, &self.w, gw) {
            d.scatter(w.view(), gw);
        }
    }

    /// Builds the head input for `record` and the traces of its categorical items.
    pub fn encode_record(
        &self,
        layout: &FeatureLayout,
        pass: &mut Pass,
        record: &StreamRecord,
        rng: &mut SeededRng,
    ) -> Result<(Vec<f64>, Vec<ItemTrace>)> {
        if record.numeric.len() != layout.numeric_dim || record.categorical.len() != layout.columns.len() {
            return Err(Error::data("record does not match the feature layout"));
        }
        let d = self.embed_dim();
        let mut features = Vec::with_capacity(layout.feature_dim());
        features.extend_from_slice(&record.numeric);
        let mut traces = Vec::with_capacity(layout.columns.len());
        for (column, value) in layout.columns.iter().zip(&record.categorical) {
            let (emb, trace) = self.embed(pass, &self.key(column, value), rng);
            features.extend_from_slice(&emb);
            traces.push(trace);
        }
        if layout.product {
            let base = layout.numeric_dim;
            for j in 0..d {
                features.push(features[base + j] * features[base + d + j]);
            }
        }
        Ok((features, traces))
    }

    /// Backpropagates a feature gradient into the pass. Columns with
    /// `trainable[c] == false` receive no gradient.
    pub fn backprop_record(
        &self,
        layout: &FeatureLayout,
        pass: &mut Pass,
        features: &[f64],
        traces: &[ItemTrace],
        g_features: &[f64],
        trainable: Option<&[bool]>,
    ) {
        let d = self.embed_dim();
        let base = layout.numeric_dim;
        let mut g_emb: Vec<Vec<f64>> = (0..traces.len())
            .map(|c| g_features[base + c * d..base + (c + 1) * d].to_vec())
            .collect();
        if layout.product {
            let off = base + traces.len() * d;
            for j in 0..d {
                let g = g_features[off + j];
                g_emb[0][j] += g * features[base + d + j];
                g_emb[1][j] += g * features[base + j];
            }
        }
        for (c, (trace, g)) in traces.iter().zip(&g_emb).enumerate() {
            if trainable.is_none_or(|t| t[c]) {
                backprop_trace(pass, trace, g);
            }
        }
    }
}
