//! Random instance generation, seeded head-to-head trials, the accumulated
//! error performance index and per-instance rankings.
//!
//! Seeding: every instance `i` of an experiment with base seed `b` uses a
//! ChaCha8 generator seeded with `b` on stream `2i` for generation and on
//! stream `2i + 1` for transition sampling. Each algorithm receives its own
//! copy of the sampling stream, so all algorithms see the same transitions.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{GtdError, Result};
use crate::exact::{self, EvalProblem};
use crate::instance::Instance;
use crate::learner::{AlgorithmSpec, LearnerState};
use crate::mdp::{Features, Mdp, Policy};

/// Redraws allowed before [`generate_instance`] gives up.
pub const MAX_GENERATION_ATTEMPTS: usize = 100;
/// Relative tolerance under which two performance indices tie.
pub const TIE_TOL: f64 = 1e-12;

/// A size that is either fixed or drawn uniformly from an inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeSpec {
    Fixed(usize),
    Range(usize, usize),
}

impl SizeSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            SizeSpec::Fixed(n) => n,
            SizeSpec::Range(lo, hi) => rng.random_range(lo..=hi),
        }
    }

    fn min(&self) -> usize {
        match *self {
            SizeSpec::Fixed(n) | SizeSpec::Range(n, _) => n,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            SizeSpec::Fixed(n) => n > 0,
            SizeSpec::Range(lo, hi) => lo > 0 && lo <= hi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRule {
    Fixed(usize),
    /// `max(1, round(|S| / 10))`.
    TenthOfStates,
}

impl FeatureRule {
    pub fn features_for(&self, n_states: usize) -> usize {
        match *self {
            FeatureRule::Fixed(q) => q,
            FeatureRule::TenthOfStates => ((n_states as f64 / 10.0).round() as usize).max(1),
        }
    }
}

/// Random instance law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub n_states: SizeSpec,
    pub n_actions: SizeSpec,
    pub n_features: FeatureRule,
    pub gamma: f64,
    /// Rewards with magnitude at or below this are zeroed.
    pub reward_sparsify_threshold: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    /// 100 states, 10 actions, 10 features, γ = 0.9, threshold 0.2.
    fn default() -> Self {
        Self {
            n_states: SizeSpec::Fixed(100),
            n_actions: SizeSpec::Fixed(10),
            n_features: FeatureRule::Fixed(10),
            gamma: 0.9,
            reward_sparsify_threshold: 0.2,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// States in {3..100}, actions in {2..30}, features ≈ |S|/10.
    pub fn ranged(seed: u64) -> Self {
        Self {
            n_states: SizeSpec::Range(3, 100),
            n_actions: SizeSpec::Range(2, 30),
            n_features: FeatureRule::TenthOfStates,
            seed,
            ..Self::default()
        }
    }

    /// Fixed sizes with the default reward law and discount.
    pub fn fixed(n_states: usize, n_actions: usize, n_features: usize, seed: u64) -> Self {
        Self {
            n_states: SizeSpec::Fixed(n_states),
            n_actions: SizeSpec::Fixed(n_actions),
            n_features: FeatureRule::Fixed(n_features),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_states.is_valid() || !self.n_actions.is_valid() {
            return Err(GtdError::InvalidInput("state and action ranges must be non-empty and positive".into()));
        }
        if let FeatureRule::Fixed(q) = self.n_features {
            if q == 0 || q > self.n_states.min() {
                return Err(GtdError::InvalidInput(format!("{q} features cannot be full rank for the state range")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(GtdError::InvalidInput(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.reward_sparsify_threshold) {
            return Err(GtdError::InvalidInput("reward threshold must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Generation stream for instance `index`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index);
    rng
}

/// Sampling stream for instance `index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index + 1);
    rng
}

fn stochastic_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> nalgebra::DMatrix<f64> {
    // 1 - u lies in (0, 1], so every entry is strictly positive.
    let mut m = nalgebra::DMatrix::from_fn(rows, cols, |_, _| 0.0);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = 1.0 - rng.random::<f64>();
        }
        let total: f64 = m.row(i).sum();
        m.row_mut(i).scale_mut(1.0 / total);
    }
    m
}

/// Draws one instance. Random numbers are consumed in this order: sizes,
/// transition rows (row-major over `(s, a)`), rewards, target policy,
/// behavior policy, features. Instances failing validation or the
/// conditioning guard are redrawn from the continuing stream.
pub fn generate_instance<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Result<Instance> {
    config.validate()?;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let ns = config.n_states.draw(rng);
        let na = config.n_actions.draw(rng);
        let q = config.n_features.features_for(ns).min(ns);

        let transition = stochastic_rows(ns * na, ns, rng);
        let mut reward = nalgebra::DMatrix::zeros(ns * na, ns);
        for i in 0..ns * na {
            for j in 0..ns {
                let r = 2.0 * rng.random::<f64>() - 1.0;
                reward[(i, j)] = if r.abs() <= config.reward_sparsify_threshold { 0.0 } else { r };
            }
        }
        let target = Policy::new(stochastic_rows(ns, na, rng));
        let behavior = Policy::new(stochastic_rows(ns, na, rng));
        let mut phi = nalgebra::DMatrix::zeros(ns, q);
        for i in 0..ns {
            for j in 0..q {
                phi[(i, j)] = 2.0 * rng.random::<f64>() - 1.0;
            }
        }

        let inst = Instance {
            mdp: Mdp::new(ns, na, transition, reward, config.gamma)?,
            target,
            behavior,
            features: Features::new(phi)?,
        };
        if inst.problem().is_ok() {
            return Ok(inst);
        }
    }
    Err(GtdError::GenerationExhausted(MAX_GENERATION_ATTEMPTS))
}

/// Initial iterate of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zero,
    /// Independent `N(0, scale²)` entries for θ₀ and λ₀ from a dedicated stream.
    Gaussian {
        scale: f64,
        seed: u64,
    },
}

impl Init {
    pub fn state(&self, q: usize) -> LearnerState {
        match *self {
            Init::Zero => LearnerState::zeros(q),
            Init::Gaussian { scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = |_, _| scale * rng.sample::<f64, _>(StandardNormal);
                let theta = DVector::from_fn(q, &mut draw);
                let lambda = DVector::from_fn(q, &mut draw);
                LearnerState::new(theta, lambda)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    /// Number of updates; errors are accumulated for `k = 0..=tau`.
    pub tau: u64,
    /// Stride of the recorded trace (0 keeps only the end points).
    pub record_every: u64,
    pub init: Init,
}

impl TrialConfig {
    pub fn new(tau: u64, record_every: u64) -> Self {
        Self { tau, record_every, init: Init::Zero }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub k: u64,
    /// `‖θ_k − θ*‖₂`.
    pub error: f64,
    pub mspbe: f64,
}

/// Strided error record plus the full running error sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTrace {
    pub recorded: Vec<TracePoint>,
    /// `Σ_k ‖θ_k − θ*‖₂` over every visited iterate.
    pub error_sum: f64,
    pub diverged: bool,
    pub final_state: LearnerState,
}

fn error_norm(theta: &DVector<f64>, theta_star: &DVector<f64>) -> f64 {
    theta.iter().zip(theta_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Runs `spec` for `trial.tau` steps on samples drawn from `rng`.
///
/// Divergence (a non-finite iterate) stops the trial and is recorded in the
/// trace rather than returned as an error.
pub fn run_trial<R: Rng + ?Sized>(
    problem: &EvalProblem,
    spec: &AlgorithmSpec,
    trial: &TrialConfig,
    rng: &mut R,
) -> Result<ErrorTrace> {
    spec.validate()?;
    let theta_star = exact::theta_star(problem)?;
    let features = problem.features();
    let gamma = problem.gamma();
    let sampler = problem.sampler();

    let mut state = trial.init.state(problem.q());
    let record = |state: &LearnerState, error: f64| -> Result<TracePoint> {
        Ok(TracePoint { k: state.k, error, mspbe: exact::mspbe(problem, &state.theta)? })
    };

    let first = error_norm(&state.theta, &theta_star);
    let mut trace = ErrorTrace {
        recorded: vec![record(&state, first)?],
        error_sum: first,
        diverged: false,
        final_state: state.clone(),
    };

    for k in 1..=trial.tau {
        let sample = sampler.sample(rng);
        match spec.step_in_place(&mut state, &sample, features, gamma) {
            Ok(()) => {}
            Err(GtdError::NonFinite { .. }) => {
                trace.diverged = true;
                trace.error_sum = f64::INFINITY;
                break;
            }
            Err(e) => return Err(e),
        }
        let error = error_norm(&state.theta, &theta_star);
        trace.error_sum += error;
        if (trial.record_every > 0 && k % trial.record_every == 0) || k == trial.tau {
            trace.recorded.push(record(&state, error)?);
        }
    }
    trace.final_state = state;
    Ok(trace)
}

/// `Σ_{k=0}^{τ} ‖θ_k − θ*‖ / 1000`; `+∞` for a diverged trial.
pub fn performance_index(trace: &ErrorTrace) -> f64 {
    if trace.diverged {
        f64::INFINITY
    } else {
        trace.error_sum / 1000.0
    }
}

/// Positions of `indices` sorted best-first. Near-equal values (within
/// [`TIE_TOL`] relative) keep their input order.
pub fn rank_order(indices: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (indices[i], indices[j]);
        let near = a.is_finite() && b.is_finite() && (a - b).abs() <= TIE_TOL * a.abs().max(b.abs());
        if a == b || near {
            std::cmp::Ordering::Equal
        } else {
            a.total_cmp(&b)
        }
    });
    order
}

/// `counts[algo][rank]` over all instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingTable {
    pub names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n_instances: u64,
}

impl RankingTable {
    pub fn new(names: Vec<String>) -> Self {
        let n = names.len();
        Self { names, counts: vec![vec![0; n]; n], n_instances: 0 }
    }

    /// Adds one instance's best-first ordering of algorithm positions.
    pub fn add(&mut self, order: &[usize]) {
        for (rank, &algo) in order.iter().enumerate() {
            self.counts[algo][rank] += 1;
        }
        self.n_instances += 1;
    }

    pub fn count(&self, algo: usize, rank: usize) -> u64 {
        self.counts[algo][rank]
    }

    /// Rows and columns both sum to the instance count.
    pub fn is_consistent(&self) -> bool {
        let n = self.names.len();
        let rows_ok = self.counts.iter().all(|row| row.iter().sum::<u64>() == self.n_instances);
        let cols_ok = (0..n).all(|r| self.counts.iter().map(|row| row[r]).sum::<u64>() == self.n_instances);
        rows_ok && cols_ok
    }
}

/// Everything recorded for one instance of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub index: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_features: usize,
    pub indices: Vec<f64>,
    pub diverged: Vec<bool>,
    /// Algorithm positions, best first.
    pub order: Vec<usize>,
    /// Per-algorithm traces, kept only on request.
    pub traces: Option<Vec<ErrorTrace>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub table: RankingTable,
    pub instances: Vec<InstanceResult>,
}

/// Generates instance `index` and runs every spec on the shared sample stream.
pub fn run_instance(
    config: &GenConfig,
    specs: &[AlgorithmSpec],
    index: u64,
    trial: &TrialConfig,
    keep_traces: bool,
) -> Result<InstanceResult> {
    let inst = generate_instance(config, &mut instance_rng(config.seed, index))?;
    let problem = inst.problem()?;
    let mut traces = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut rng = sample_rng(config.seed, index);
        traces.push(run_trial(&problem, spec, trial, &mut rng)?);
    }
    let indices: Vec<f64> = traces.iter().map(performance_index).collect();
    Ok(InstanceResult {
        index,
        n_states: inst.mdp.n_states(),
        n_actions: inst.mdp.n_actions(),
        n_features: inst.features.q(),
        order: rank_order(&indices),
        diverged: traces.iter().map(|t| t.diverged).collect(),
        indices,
        traces: keep_traces.then_some(traces),
    })
}

/// Runs `n_instances` independent instances in parallel and merges their
/// rankings in instance order.
pub fn run_experiment(
    config: &GenConfig,
    specs: &[AlgorithmSpec],
    n_instances: u64,
    trial: &TrialConfig,
    keep_traces: bool,
) -> Result<Experiment> {
    if specs.len() < 2 {
        return Err(GtdError::InvalidInput("ranking needs at least two algorithms".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    config.validate()?;
    let instances = (0..n_instances)
        .into_par_iter()
        .map(|i| run_instance(config, specs, i, trial, keep_traces))
        .collect::<Result<Vec<_>>>()?;
    let mut table = RankingTable::new(specs.iter().map(AlgorithmSpec::name).collect());
    for res in &instances {
        table.add(&res.order);
    }
    Ok(Experiment { table, instances })
}

/// Ranking counts only, with zero initialisation and no stored traces.
pub fn rank_experiment(
    config: &GenConfig,
    specs: &[AlgorithmSpec],
    n_instances: u64,
    tau: u64,
) -> Result<RankingTable> {
    Ok(run_experiment(config, specs, n_instances, &TrialConfig::new(tau, 0), false)?.table)
}
