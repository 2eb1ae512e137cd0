//! Finite MDPs, policies, linear features and i.i.d. off-policy transition sampling.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{GtdError, Result};
use crate::linalg;

/// Tolerance on probability row sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Relative singular-value cutoff for the feature rank test.
pub const RANK_TOL: f64 = 1e-10;
/// Stationary masses at or below this are treated as zero.
const POSITIVITY_TOL: f64 = 1e-14;

/// A finite discounted MDP.
///
/// `transition` and `reward` are stored with one row per `(s, a)` pair
/// (row index `s * n_actions + a`) and one column per successor state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
}

impl Mdp {
    /// Builds an MDP after checking shapes. Stochasticity and the discount
    /// range are checked by [`validate_mdp`].
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(GtdError::InvalidInput("MDP needs at least one state and one action".into()));
        }
        let rows = n_states * n_actions;
        for (name, m) in [("transition", &transition), ("reward", &reward)] {
            if m.nrows() != rows || m.ncols() != n_states {
                return Err(GtdError::ShapeMismatch(format!(
                    "{name} tensor is {}x{}, expected {rows}x{n_states}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { n_states, n_actions, transition, reward, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `P(s' | s, a)`.
    #[inline]
    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a, s_next)]
    }

    /// `r(s, a, s')`.
    #[inline]
    pub fn r(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.reward[(s * self.n_actions + a, s_next)]
    }

    /// Transition tensor, one row per `(s, a)`.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// Reward tensor, one row per `(s, a)`.
    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }
}

/// Stochastic policy `π(a|s)` stored as an `|S| x |A|` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64) }
    }

    /// Always picks `action`.
    pub fn deterministic(n_states: usize, n_actions: usize, action: usize) -> Self {
        let mut probs = DMatrix::zeros(n_states, n_actions);
        probs.column_mut(action).fill(1.0);
        Self { probs }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

/// Feature matrix `Φ` (`|S| x q`), with a row-major copy for fast `φ(s)` access.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    phi: DMatrix<f64>,
    rows: Vec<f64>,
}

impl Features {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(GtdError::InvalidInput("feature matrix must be non-empty".into()));
        }
        let rows = phi.transpose().as_slice().to_vec();
        Ok(Self { phi, rows })
    }

    pub fn identity(n_states: usize) -> Self {
        Self::new(DMatrix::identity(n_states, n_states)).expect("non-empty identity")
    }

    /// Number of features `q`.
    pub fn q(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Feature vector `φ(s)`.
    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        let q = self.q();
        &self.rows[s * q..(s + 1) * q]
    }
}

/// One off-policy transition `(s, a, s', r, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub r: f64,
    /// Importance ratio `π(a|s) / β(a|s)`.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyRole {
    Target,
    Behavior,
}

impl fmt::Display for PolicyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyRole::Target => "target",
            PolicyRole::Behavior => "behavior",
        })
    }
}

/// A single violated modelling assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    TransitionRow { s: usize, a: usize, sum: f64 },
    NegativeTransition { s: usize, a: usize, s_next: usize },
    NonFiniteReward { s: usize, a: usize, s_next: usize },
    Discount(f64),
    PolicyRow { role: PolicyRole, s: usize, sum: f64 },
    NegativePolicy { role: PolicyRole, s: usize, a: usize },
    RankDeficient { rank: usize, q: usize },
    Coverage { s: usize, a: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::TransitionRow { s, a, sum } => {
                write!(f, "transition row ({s},{a}) sums to {sum}")
            }
            Violation::NegativeTransition { s, a, s_next } => {
                write!(f, "negative transition probability P({s_next}|{s},{a})")
            }
            Violation::NonFiniteReward { s, a, s_next } => {
                write!(f, "non-finite reward r({s},{a},{s_next})")
            }
            Violation::Discount(g) => write!(f, "discount {g} outside (0,1)"),
            Violation::PolicyRow { role, s, sum } => {
                write!(f, "{role} policy row {s} sums to {sum}")
            }
            Violation::NegativePolicy { role, s, a } => {
                write!(f, "{role} policy has negative probability at ({s},{a})")
            }
            Violation::RankDeficient { rank, q } => {
                write!(f, "feature matrix has rank {rank} < {q} columns")
            }
            Violation::Coverage { s, a } => {
                write!(f, "behavior never takes action {a} in state {s} but target does")
            }
        }
    }
}

/// Result of [`validate_mdp`]; empty means every assumption holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.violations.iter().any(pred)
    }

    /// Converts a non-empty report into an error.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        if let Some(&Violation::Coverage { s, a }) =
            self.violations.iter().find(|v| matches!(v, Violation::Coverage { .. }))
        {
            return Err(GtdError::CoverageViolation { state: s, action: a });
        }
        let msg = self.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        Err(GtdError::InvalidInput(msg))
    }
}

/// Checks stochasticity, the discount range, feature rank and behavior coverage.
pub fn validate_mdp(mdp: &Mdp, target: &Policy, behavior: &Policy, features: &Features) -> ValidationReport {
    let mut out = Vec::new();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());

    for (role, pol) in [(PolicyRole::Target, target), (PolicyRole::Behavior, behavior)] {
        if pol.n_states() != ns || pol.n_actions() != na {
            out.push(Violation::Shape(format!(
                "{role} policy is {}x{}, expected {ns}x{na}",
                pol.n_states(),
                pol.n_actions()
            )));
        }
    }
    if features.n_states() != ns {
        out.push(Violation::Shape(format!("feature matrix has {} rows, expected {ns}", features.n_states())));
    }
    if !out.is_empty() {
        return ValidationReport { violations: out };
    }

    if !(mdp.gamma() > 0.0 && mdp.gamma() < 1.0) {
        out.push(Violation::Discount(mdp.gamma()));
    }
    for s in 0..ns {
        for a in 0..na {
            let mut sum = 0.0;
            for s_next in 0..ns {
                let p = mdp.p(s, a, s_next);
                if !(p >= 0.0) {
                    out.push(Violation::NegativeTransition { s, a, s_next });
                }
                if !mdp.r(s, a, s_next).is_finite() {
                    out.push(Violation::NonFiniteReward { s, a, s_next });
                }
                sum += p;
            }
            if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                out.push(Violation::TransitionRow { s, a, sum });
            }
        }
    }
    for (role, pol) in [(PolicyRole::Target, target), (PolicyRole::Behavior, behavior)] {
        for s in 0..ns {
            let mut sum = 0.0;
            for a in 0..na {
                let p = pol.prob(s, a);
                if !(p >= 0.0) {
                    out.push(Violation::NegativePolicy { role, s, a });
                }
                sum += p;
            }
            if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                out.push(Violation::PolicyRow { role, s, sum });
            }
        }
    }

    let q = features.q();
    let rank = linalg::numerical_rank(features.matrix(), RANK_TOL);
    if rank < q {
        out.push(Violation::RankDeficient { rank, q });
    }

    for s in 0..ns {
        for a in 0..na {
            if target.prob(s, a) > 0.0 && behavior.prob(s, a) <= 0.0 {
                out.push(Violation::Coverage { s, a });
            }
        }
    }

    ValidationReport { violations: out }
}

fn check_policy_shape(mdp: &Mdp, policy: &Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(GtdError::ShapeMismatch(format!(
            "policy is {}x{}, MDP has {} states and {} actions",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// State-to-state transition matrix `P^π[s][s'] = Σ_a π(a|s) P(s'|s,a)`.
pub fn policy_transition(mdp: &Mdp, policy: &Policy) -> Result<DMatrix<f64>> {
    check_policy_shape(mdp, policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    Ok(DMatrix::from_fn(ns, ns, |s, s_next| (0..na).map(|a| policy.prob(s, a) * mdp.p(s, a, s_next)).sum()))
}

/// Expected one-step reward `R^π[s] = Σ_a Σ_s' π(a|s) P(s'|s,a) r(s,a,s')`.
pub fn expected_reward(mdp: &Mdp, policy: &Policy) -> Result<DVector<f64>> {
    check_policy_shape(mdp, policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    Ok(DVector::from_fn(ns, |s, _| {
        (0..na)
            .map(|a| {
                let inner: f64 = (0..ns).map(|s_next| mdp.p(s, a, s_next) * mdp.r(s, a, s_next)).sum();
                policy.prob(s, a) * inner
            })
            .sum()
    }))
}

fn stationary_residual(p: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    let lhs = p.tr_mul(d);
    (lhs - d).amax()
}

/// Unique stationary distribution `d` with `dᵀP = dᵀ`, `Σd = 1`, `d > 0`.
///
/// Solved directly from `(Pᵀ - I) d = 0` with the last equation replaced by
/// the normalisation; power iteration is only used if the direct solution
/// misses the `1e-12` residual.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 || !p.is_square() {
        return Err(GtdError::ShapeMismatch(format!("transition matrix is {}x{}", p.nrows(), p.ncols())));
    }
    let mut system = p.transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;

    let lu = system.clone().lu();
    let mut d = lu
        .solve(&rhs)
        .filter(|d| d.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GtdError::NonErgodic("more than one recurrent class".into()))?;
    // One round of iterative refinement.
    let r = &rhs - &system * &d;
    if let Some(corr) = lu.solve(&r) {
        d += corr;
    }
    if linalg::condition_number(&system) > 1e14 {
        return Err(GtdError::NonErgodic("stationary system is numerically singular".into()));
    }

    if stationary_residual(p, &d) > 1e-12 {
        d = power_iteration(p, &d);
    }
    let total: f64 = d.iter().sum();
    d /= total;

    if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| !(**v > POSITIVITY_TOL)) {
        return Err(GtdError::NonErgodic(format!("state {i} has stationary mass {v:e}")));
    }
    let res = stationary_residual(p, &d);
    if res > 1e-12 {
        return Err(GtdError::NonErgodic(format!("stationary residual {res:e} above 1e-12")));
    }
    Ok(d)
}

fn power_iteration(p: &DMatrix<f64>, start: &DVector<f64>) -> DVector<f64> {
    let mut d = start.map(|v| v.max(0.0));
    let total: f64 = d.iter().sum();
    if total > 0.0 {
        d /= total;
    } else {
        d.fill(1.0 / p.nrows() as f64);
    }
    for _ in 0..100_000 {
        let next = p.tr_mul(&d);
        let delta = (&next - &d).amax();
        d = next;
        if delta <= 1e-15 {
            break;
        }
    }
    d
}

/// Index of the first entry whose running sum exceeds `u`; falls back to the
/// last positive entry when rounding leaves the total just below `u`.
fn draw_index(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws one i.i.d. transition: `s ~ d_beta`, `a ~ β(·|s)`, `s' ~ P(·|s,a)`.
///
/// Consumes exactly three `f64` uniforms from `rng`, in that order.
pub fn sample_transition<R: Rng + ?Sized>(
    mdp: &Mdp,
    d_beta: &DVector<f64>,
    behavior: &Policy,
    target: &Policy,
    rng: &mut R,
) -> Result<TransitionSample> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if d_beta.len() != ns {
        return Err(GtdError::ShapeMismatch(format!("d_beta has length {}, expected {ns}", d_beta.len())));
    }
    check_policy_shape(mdp, behavior)?;
    check_policy_shape(mdp, target)?;
    let s = draw_index(d_beta.iter().copied(), rng.random::<f64>());
    let a = draw_index((0..na).map(|a| behavior.prob(s, a)), rng.random::<f64>());
    let s_next = draw_index((0..ns).map(|t| mdp.p(s, a, t)), rng.random::<f64>());
    let b = behavior.prob(s, a);
    if b <= 0.0 {
        return Err(GtdError::CoverageViolation { state: s, action: a });
    }
    Ok(TransitionSample { s, a, s_next, r: mdp.r(s, a, s_next), rho: target.prob(s, a) / b })
}

/// Precomputed cumulative tables for fast repeated sampling.
///
/// Produces exactly the same samples as [`sample_transition`] for the same
/// random stream.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    n_states: usize,
    n_actions: usize,
    state_cdf: Vec<f64>,
    action_cdf: Vec<f64>,
    next_cdf: Vec<f64>,
    state_last: usize,
    action_last: Vec<usize>,
    next_last: Vec<usize>,
    rho: Vec<f64>,
    reward: Vec<f64>,
}

fn cumulative(probs: impl Iterator<Item = f64>, out: &mut Vec<f64>) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        out.push(acc);
    }
    last
}

impl TransitionSampler {
    pub fn new(mdp: &Mdp, d_beta: &DVector<f64>, behavior: &Policy, target: &Policy) -> Result<Self> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        if d_beta.len() != ns {
            return Err(GtdError::ShapeMismatch(format!("d_beta has length {}, expected {ns}", d_beta.len())));
        }
        check_policy_shape(mdp, behavior)?;
        check_policy_shape(mdp, target)?;

        let mut state_cdf = Vec::with_capacity(ns);
        let state_last = cumulative(d_beta.iter().copied(), &mut state_cdf);
        let mut action_cdf = Vec::with_capacity(ns * na);
        let mut action_last = Vec::with_capacity(ns);
        let mut rho = Vec::with_capacity(ns * na);
        for s in 0..ns {
            action_last.push(cumulative((0..na).map(|a| behavior.prob(s, a)), &mut action_cdf));
            for a in 0..na {
                let b = behavior.prob(s, a);
                rho.push(if b > 0.0 { target.prob(s, a) / b } else { f64::NAN });
            }
        }
        let mut next_cdf = Vec::with_capacity(ns * na * ns);
        let mut next_last = Vec::with_capacity(ns * na);
        let mut reward = Vec::with_capacity(ns * na * ns);
        for s in 0..ns {
            for a in 0..na {
                next_last.push(cumulative((0..ns).map(|t| mdp.p(s, a, t)), &mut next_cdf));
                reward.extend((0..ns).map(|t| mdp.r(s, a, t)));
            }
        }
        Ok(Self {
            n_states: ns,
            n_actions: na,
            state_cdf,
            action_cdf,
            next_cdf,
            state_last,
            action_last,
            next_last,
            rho,
            reward,
        })
    }

    #[inline]
    fn pick(cdf: &[f64], last: usize, u: f64) -> usize {
        let i = cdf.partition_point(|&c| c <= u);
        if i < cdf.len() {
            i
        } else {
            last
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionSample {
        let (ns, na) = (self.n_states, self.n_actions);
        let s = Self::pick(&self.state_cdf, self.state_last, rng.random::<f64>());
        let a = Self::pick(&self.action_cdf[s * na..(s + 1) * na], self.action_last[s], rng.random::<f64>());
        let row = s * na + a;
        let s_next = Self::pick(&self.next_cdf[row * ns..(row + 1) * ns], self.next_last[row], rng.random::<f64>());
        TransitionSample { s, a, s_next, r: self.reward[row * ns + s_next], rho: self.rho[row] }
    }
}
