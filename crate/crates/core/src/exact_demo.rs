//! The three-bucket linear-Gaussian model: item `X = 0` hashes to rows
//! `(0, 1)`, item `X = 1` to rows `(1, 2)`, and `f(X) = a_X . e` with
//! `a_0 = (1, 1, 0)`, `a_1 = (0, 1, 1)`, targets `y(0) = 1`, `y(1) = -1`.
//!
//! Online gradient descent on this model forgets item 0 while it fits item 1
//! through the shared row; exact conjugate Bayesian updating does not, and
//! its posterior is independent of the data order.

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::ModelId;
use crate::encoder::{Aggregation, EncoderConfig, Embedder, FeatureLayout, ParamTable};
use crate::error::{Error, Result};
use crate::harness::StreamRecord;
use crate::hashing::HashSpec;
use crate::inference::{ModelState, TrainConfig};
use crate::likelihoods::{HeadKind, LikelihoodHead, Target};
use crate::rng::{derive_seed, seeded};

pub const DESIGN: [[f64; 3]; 2] = [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]];
pub const TARGETS: [f64; 2] = [1.0, -1.0];
/// Rows hit by each item, in hash order.
pub const LAYOUT: [[usize; 2]; 2] = [[0, 1], [1, 2]];
/// Item strings used when the demo runs through the hashed encoder.
pub const ITEMS: [&str; 2] = ["x0", "x1"];
pub const COLUMN: &str = "item";
const DIVERGENCE: f64 = 1e6;

pub fn predict(e: &[f64; 3], x: usize) -> f64 {
    e[LAYOUT[x][0]] + e[LAYOUT[x][1]]
}

/// `n` zeros followed by `n` ones.
pub fn blocked_schedule(n: usize) -> Vec<usize> {
    std::iter::repeat_n(0, n).chain(std::iter::repeat_n(1, n)).collect()
}

/// `cycles` repetitions of `repeats` zeros then `repeats` ones.
pub fn alternating_schedule(repeats: usize, cycles: usize) -> Vec<usize> {
    (0..cycles).flat_map(|_| blocked_schedule(repeats)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OgdTrace {
    /// `states[t]` is `e` before step `t`; the last entry is the final state.
    pub states: Vec<[f64; 3]>,
    pub final_predictions: [f64; 2],
}

impl OgdTrace {
    pub fn final_state(&self) -> [f64; 3] {
        *self.states.last().expect("trace holds the initial state")
    }
}

/// OGD on the squared loss `(f(X) - Y)^2 / 2` from `init`, with `Y = y(X)`.
pub fn ogd_run(eta: f64, schedule: &[usize], init: [f64; 3]) -> Result<OgdTrace> {
    let mut e = init;
    let mut states = Vec::with_capacity(schedule.len() + 1);
    states.push(e);
    for (t, &x) in schedule.iter().enumerate() {
        if x > 1 {
            return Err(Error::invalid(format!("demo item {x} does not exist")));
        }
        let residual = predict(&e, x) - TARGETS[x];
        for &row in &LAYOUT[x] {
            e[row] -= eta * residual;
        }
        if e.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
            return Err(Error::Numerical(format!("OGD diverged at step {t} with eta {eta}")));
        }
        states.push(e);
    }
    Ok(OgdTrace {
        final_predictions: [predict(&e, 0), predict(&e, 1)],
        states,
    })
}

/// Gaussian belief over `e`, kept in information form
/// (`precision`, `shift = precision * mean`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    precision: Matrix3<f64>,
    shift: Vector3<f64>,
}

impl GaussianBelief {
    pub fn standard() -> Self {
        Self {
            precision: Matrix3::identity(),
            shift: Vector3::zeros(),
        }
    }

    pub fn from_moments(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self> {
        let precision = Cholesky::new(covariance)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
            .inverse();
        Ok(Self {
            shift: precision * mean,
            precision,
        })
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::U3>> {
        Cholesky::new(self.precision).ok_or_else(|| Error::Numerical("precision lost positive definiteness".into()))
    }

    pub fn mean(&self) -> Result<Vector3<f64>> {
        Ok(self.cholesky()?.solve(&self.shift))
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        Ok(self.cholesky()?.inverse())
    }

    pub fn precision(&self) -> &Matrix3<f64> {
        &self.precision
    }
}

/// Conjugate update with the observation `y = a_x . e + N(0, sigma_obs^2)`.
pub fn bayes_update(belief: &GaussianBelief, x: usize, y: f64, sigma_obs: f64) -> Result<GaussianBelief> {
    if !(sigma_obs > 0.0) {
        return Err(Error::invalid("observation noise must be positive"));
    }
    if x > 1 {
        return Err(Error::invalid(format!("demo item {x} does not exist")));
    }
    let a = Vector3::from(DESIGN[x]);
    let info = 1.0 / (sigma_obs * sigma_obs);
    let next = GaussianBelief {
        precision: belief.precision + a * a.transpose() * info,
        shift: belief.shift + a * (y * info),
    };
    next.cholesky()?;
    Ok(next)
}

/// Posterior after all `data` at once, from the stacked design.
pub fn bayes_batch(belief: &GaussianBelief, data: &[(usize, f64)], sigma_obs: f64) -> Result<GaussianBelief> {
    if !(sigma_obs > 0.0) {
        return Err(Error::invalid("observation noise must be positive"));
    }
    let rows: Vec<f64> = data.iter().flat_map(|&(x, _)| DESIGN[x]).collect();
    let a = nalgebra::DMatrix::from_row_slice(data.len(), 3, &rows);
    let y = nalgebra::DVector::from_iterator(data.len(), data.iter().map(|&(_, y)| y));
    let info = 1.0 / (sigma_obs * sigma_obs);
    let ata = a.transpose() * &a * info;
    let aty = a.transpose() * y * info;
    let next = GaussianBelief {
        precision: belief.precision + ata.fixed_view::<3, 3>(0, 0),
        shift: belief.shift + aty.fixed_view::<3, 1>(0, 0),
    };
    next.cholesky()?;
    Ok(next)
}

/// Spread of final beliefs (exact Bayes) and final states (OGD) across
/// orderings of the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub permutations: usize,
    pub bayes_mean_spread: f64,
    pub bayes_cov_spread: f64,
    pub ogd_spread: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs sequential Bayes and OGD (step `eta`, from zero) under
/// `n_permutations` seeded orderings of `data` and reports the largest
/// pairwise deviation of the final results.
pub fn permutation_invariance_check(
    data: &[(usize, f64)],
    n_permutations: usize,
    sigma_obs: f64,
    eta: f64,
    seed: u64,
) -> Result<PermutationReport> {
    let mut rng = seeded(seed);
    let mut means = Vec::new();
    let mut covs = Vec::new();
    let mut ogd = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for p in 0..n_permutations {
        if p > 0 {
            order.shuffle(&mut rng);
        }
        let mut belief = GaussianBelief::standard();
        let mut e = [0.0; 3];
        for &i in &order {
            let (x, y) = data[i];
            belief = bayes_update(&belief, x, y, sigma_obs)?;
            let residual = predict(&e, x) - y;
            for &row in &LAYOUT[x] {
                e[row] -= eta * residual;
            }
        }
        means.push(belief.mean()?.as_slice().to_vec());
        covs.push(belief.covariance()?.as_slice().to_vec());
        ogd.push(e.to_vec());
    }
    let spread = |v: &[Vec<f64>]| {
        let mut worst: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                worst = worst.max(max_abs_diff(&v[i], &v[j]));
            }
        }
        worst
    };
    Ok(PermutationReport {
        permutations: n_permutations,
        bayes_mean_spread: spread(&means),
        bayes_cov_spread: spread(&covs),
        ogd_spread: spread(&ogd),
    })
}

/// A hash spec with `B = 3`, `K = 2`, `d = 1`, `P = 1` whose seeds reproduce
/// [`LAYOUT`] for the namespaced demo items. Found by a deterministic search.
pub fn demo_hash_spec() -> HashSpec {
    let keys: Vec<String> = ITEMS.iter().map(|i| crate::encoder::item_key(COLUMN, i, true)).collect();
    let mut seeds = Vec::new();
    for k in 0..2 {
        let probe = |s: u64| {
            let spec = HashSpec::with_seeds(3, 1, 1, 1, vec![s, s ^ 1]).expect("valid probe");
            (0..2).all(|x| spec.hash_item(0, &keys[x]).expect("k = 0") == LAYOUT[x][k])
        };
        seeds.push((0u64..).find(|&s| !seeds.contains(&s) && probe(s)).expect("search terminates"));
    }
    let w_seed = (0u64..).find(|s| !seeds.contains(s)).expect("free seed");
    seeds.push(w_seed);
    HashSpec::with_seeds(3, 2, 1, 1, seeds).expect("distinct seeds")
}

/// One demo record for item `x`.
pub fn demo_record(x: usize) -> StreamRecord {
    StreamRecord {
        categorical: vec![ITEMS[x].to_string()],
        numeric: Vec::new(),
        target: Target::Real(TARGETS[x]),
        timestamp: None,
    }
}

/// The demo model on the library stack: three Gaussian buckets, sum
/// aggregation, and the fixed identity head `y ~ N(f, sigma_obs^2)`.
/// With `probabilistic == false` it is the deterministic (Ada) counterpart.
pub fn demo_model(probabilistic: bool, sigma_obs: f64, seed: u64) -> Result<ModelState> {
    let spec = demo_hash_spec();
    let enc = EncoderConfig {
        spec,
        aggregation: Aggregation::Sum,
        column_namespacing: true,
    };
    let mut rng = seeded(seed);
    let embedder = Embedder::hashed(&enc, probabilistic, &mut rng);
    let layout = FeatureLayout {
        numeric_dim: 0,
        columns: vec![COLUMN.to_string()],
        embed_dim: 1,
        product: false,
    };
    let head = LikelihoodHead::from_theta(HeadKind::GaussianLinear { sigma_y: sigma_obs }, 1, vec![1.0, 0.0])?;
    let id = if probabilistic { ModelId::Phe } else { ModelId::FastAda };
    let mut model = ModelState::from_parts(id, embedder, head, layout)?;
    model.advance_stage();
    Ok(model)
}

/// Replaces the demo model's table with explicit values (means only for a
/// deterministic model).
pub fn set_demo_table(model: &mut ModelState, e: [f64; 3]) {
    match model.embedder_mut().e_mut() {
        ParamTable::Point(t) => t.values_mut().copy_from_slice(&e),
        ParamTable::Gaussian(t) => t.mu_mut().copy_from_slice(&e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub repeats: usize,
    pub cycles: usize,
    /// OGD step size.
    pub eta: f64,
    pub sigma_obs: f64,
    /// Adam settings and per-step epochs of the variational model.
    pub phe_learning_rate: f64,
    pub phe_epochs: usize,
    pub mc_samples_train: usize,
    pub mc_samples_predict: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            cycles: 5,
            eta: 0.1,
            sigma_obs: 0.01,
            phe_learning_rate: 0.01,
            phe_epochs: 300,
            mc_samples_train: 1,
            mc_samples_predict: 8,
            seed: 0,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.cycles == 0 {
            return Err(Error::config("demo.repeats", "repeats and cycles must be at least 1"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("demo.eta", "must be finite and nonnegative"));
        }
        if !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return Err(Error::config("demo.sigma_obs", "must be positive"));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.phe_learning_rate,
            batch_size: 1,
            mc_samples_train: self.mc_samples_train,
            mc_samples_predict: self.mc_samples_predict,
            ..TrainConfig::default()
        }
    }
}

/// Errors `|f(X_t) - y(X_t)|` of each method, measured before the update at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingTraces {
    pub schedule: Vec<usize>,
    pub ogd: Vec<f64>,
    pub bayes: Vec<f64>,
    pub phe: Vec<f64>,
    pub bayes_final_mean: [f64; 3],
    pub phe_final_mean: [f64; 3],
    pub ogd_final: [f64; 3],
}

impl AlternatingTraces {
    /// Steps at which the item changes (excluding step 0).
    pub fn switch_steps(&self) -> Vec<usize> {
        (1..self.schedule.len()).filter(|&t| self.schedule[t] != self.schedule[t - 1]).collect()
    }

    /// Switch steps at which the arriving item has been seen before.
    pub fn recurrence_steps(&self) -> Vec<usize> {
        self.switch_steps().into_iter().filter(|&t| self.schedule[..t].contains(&self.schedule[t])).collect()
    }

    /// `(step, model, error)` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "model", "error"])?;
        for t in 0..self.schedule.len() {
            for (name, trace) in [("ogd", &self.ogd), ("bayes", &self.bayes), ("phe", &self.phe)] {
                out.write_record([t.to_string(), name.to_string(), trace[t].to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs OGD, exact Bayes and the variational model on the alternating stream.
pub fn alternating_demo(cfg: &DemoConfig) -> Result<AlternatingTraces> {
    cfg.validate()?;
    let schedule = alternating_schedule(cfg.repeats, cfg.cycles);
    let ogd_trace = ogd_run(cfg.eta, &schedule, [0.0; 3])?;
    let ogd = schedule
        .iter()
        .enumerate()
        .map(|(t, &x)| (predict(&ogd_trace.states[t], x) - TARGETS[x]).abs())
        .collect();

    let mut belief = GaussianBelief::standard();
    let mut bayes = Vec::with_capacity(schedule.len());
    for &x in &schedule {
        let mean = belief.mean()?;
        bayes.push((Vector3::from(DESIGN[x]).dot(&mean) - TARGETS[x]).abs());
        belief = bayes_update(&belief, x, TARGETS[x], cfg.sigma_obs)?;
    }
    let bm = belief.mean()?;

    let mut model = demo_model(true, cfg.sigma_obs, derive_seed(cfg.seed, 1))?;
    let train = cfg.train_config();
    let batches: Vec<Vec<StreamRecord>> = schedule.iter().map(|&x| vec![demo_record(x)]).collect();
    let opts = crate::harness::StreamOptions {
        epochs: cfg.phe_epochs,
        mc_samples: cfg.mc_samples_predict,
        keep_losses: false,
    };
    let mut rng = seeded(derive_seed(cfg.seed, 2));
    let log = crate::harness::run_stream(&mut model, &batches, &train, &opts, &mut rng)?;
    let phe = log.steps.iter().map(|s| s.value).collect();
    let ParamTable::Gaussian(table) = model.embedder().e() else {
        unreachable!("demo model is probabilistic")
    };
    let mu = table.mu();
    Ok(AlternatingTraces {
        schedule,
        ogd,
        bayes,
        phe,
        bayes_final_mean: [bm[0], bm[1], bm[2]],
        phe_final_mean: [mu[0], mu[1], mu[2]],
        ogd_final: ogd_trace.final_state(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_size_keeps_init() {
        let t = ogd_run(0.0, &blocked_schedule(20), [0.3, -0.2, 0.1]).unwrap();
        assert!(t.states.iter().all(|s| *s == [0.3, -0.2, 0.1]));
    }

    #[test]
    fn phase_one_keeps_first_rows_equal() {
        let t = ogd_run(0.05, &blocked_schedule(500), [0.0; 3]).unwrap();
        for s in &t.states[..=500] {
            assert_eq!(s[0], s[1]);
            assert_eq!(s[2], 0.0);
        }
        let mid = t.states[500];
        assert!((mid[0] + mid[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn phase_two_difference_is_invariant() {
        let t = ogd_run(0.05, &blocked_schedule(200), [0.0; 3]).unwrap();
        for w in t.states[200..].windows(2) {
            assert!(((w[1][1] - w[1][2]) - (w[0][1] - w[0][2])).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_reported() {
        assert!(matches!(ogd_run(2.0, &blocked_schedule(200), [0.0; 3]), Err(Error::Numerical(_))));
    }

    #[test]
    fn one_observation_posterior() {
        let b = bayes_update(&GaussianBelief::standard(), 0, 1.0, 1.0).unwrap();
        let m = b.mean().unwrap();
        for (got, want) in m.iter().zip([1.0 / 3.0, 1.0 / 3.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uninformative_observation() {
        let prior = bayes_update(&GaussianBelief::standard(), 1, -1.0, 0.5).unwrap();
        let next = bayes_update(&prior, 0, 1.0, 1e6).unwrap();
        assert!((next.mean().unwrap() - prior.mean().unwrap()).amax() < 1e-9);
        assert!((next.covariance().unwrap() - prior.covariance().unwrap()).amax() < 1e-9);
    }

    #[test]
    fn sequential_equals_batch() {
        let data: Vec<(usize, f64)> = (0..30).map(|i| (i % 2, TARGETS[i % 2] + 0.01 * i as f64)).collect();
        let mut seq = GaussianBelief::standard();
        for &(x, y) in &data {
            seq = bayes_update(&seq, x, y, 0.3).unwrap();
        }
        let batch = bayes_batch(&GaussianBelief::standard(), &data, 0.3).unwrap();
        assert!((seq.mean().unwrap() - batch.mean().unwrap()).amax() < 1e-10);
        assert!((seq.covariance().unwrap() - batch.covariance().unwrap()).amax() < 1e-10);
    }

    #[test]
    fn single_permutation_has_no_spread() {
        let data = [(0, 1.0), (1, -1.0)];
        let r = permutation_invariance_check(&data, 1, 0.1, 0.1, 0).unwrap();
        assert_eq!((r.bayes_mean_spread, r.bayes_cov_spread, r.ogd_spread), (0.0, 0.0, 0.0));
    }

    #[test]
    fn demo_spec_reproduces_layout() {
        let spec = demo_hash_spec();
        for x in 0..2 {
            let key = crate::encoder::item_key(COLUMN, ITEMS[x], true);
            assert_eq!(spec.hash_signature(&key).rows, LAYOUT[x].to_vec());
        }
    }

    #[test]
    fn sgd_on_the_library_stack_is_the_ogd_recursion() {
        let schedule = alternating_schedule(10, 3);
        let eta = 0.1;
        let oracle = ogd_run(eta, &schedule, [0.02, -0.05, 0.07]).unwrap();
        let mut model = demo_model(false, 1.0, 0).unwrap();
        set_demo_table(&mut model, [0.02, -0.05, 0.07]);
        let cfg = TrainConfig {
            learning_rate: eta,
            batch_size: 1,
            optimizer: crate::adam::OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let mut rng = seeded(0);
        for (t, &x) in schedule.iter().enumerate() {
            model.fit_online(&[demo_record(x)], 1, &cfg, &mut rng).unwrap();
            let ParamTable::Point(e) = model.embedder().e() else { unreachable!() };
            assert_eq!(e.values(), &oracle.states[t + 1][..], "step {t}");
        }
    }
}
