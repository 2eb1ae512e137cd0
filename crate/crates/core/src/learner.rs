//! Single-step stochastic updates for GTD2, GTD3, GTD4 and GTD5.
//!
//! Every family shares the primal correction `(φ − γρφ')(φᵀλ)` and the dual
//! TD term `δφ`; the families differ only in the damping applied to each block:
//!
//! | family | θ damping          | λ damping              |
//! |--------|--------------------|------------------------|
//! | GTD2   | none               | `(φᵀλ)φ`  or `λ`       |
//! | GTD3   | `(φᵀθ)φ` or `θ`    | none                   |
//! | GTD4   | `(φᵀθ)φ` or `θ`    | `σ(φᵀλ)φ` or `σλ`      |
//! | GTD5   | `(φᵀθ)φ` or `θ`    | `σλ`                   |
//!
//! The second form in each cell is the identity-metric variant.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{GtdError, Result};
use crate::mdp::{Features, TransitionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Gtd2,
    Gtd3,
    Gtd4,
    Gtd5,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gtd2, Family::Gtd3, Family::Gtd4, Family::Gtd5];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gtd2 => "gtd2",
            Family::Gtd3 => "gtd3",
            Family::Gtd4 => "gtd4",
            Family::Gtd5 => "gtd5",
        }
    }

    /// Whether the family uses a σ schedule.
    pub fn uses_sigma(self) -> bool {
        matches!(self, Family::Gtd4 | Family::Gtd5)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = GtdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gtd2" => Ok(Family::Gtd2),
            "gtd3" => Ok(Family::Gtd3),
            "gtd4" => Ok(Family::Gtd4),
            "gtd5" => Ok(Family::Gtd5),
            other => Err(GtdError::InvalidInput(format!("unknown algorithm family '{other}'"))),
        }
    }
}

/// Metric of a quadratic regulariser: `xᵀΦᵀDΦx` or `xᵀx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    FeatureWeighted,
    Identity,
}

/// Step-size or σ sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `c` at every step.
    Constant(f64),
    /// `c / (k + c)`.
    Hyperbolic(f64),
}

impl Schedule {
    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(GtdError::InvalidInput(format!("constant schedule needs finite c >= 0, got {c}")));
        }
        Ok(Schedule::Constant(c))
    }

    pub fn hyperbolic(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(GtdError::InvalidInput(format!("hyperbolic schedule needs finite c > 0, got {c}")));
        }
        Ok(Schedule::Hyperbolic(c))
    }

    #[inline]
    pub fn value(&self, k: u64) -> f64 {
        schedule_value(self, k)
    }
}

/// Value of `schedule` at iteration `k`.
#[inline]
pub fn schedule_value(schedule: &Schedule, k: u64) -> f64 {
    match *schedule {
        Schedule::Constant(c) => c,
        Schedule::Hyperbolic(c) => c / (k as f64 + c),
    }
}

/// A fully specified learner: family, regulariser metrics and schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmSpec {
    pub family: Family,
    /// Metric of the θ damping (GTD3/4/5; ignored by GTD2).
    pub primal_metric: Metric,
    /// Metric of the λ damping (GTD2/4; GTD5 requires `Identity`; ignored by GTD3).
    pub dual_metric: Metric,
    pub alpha: Schedule,
    /// Used only by GTD4 and GTD5.
    pub sigma: Schedule,
}

impl AlgorithmSpec {
    /// Default metrics for `family`: feature-weighted everywhere except the
    /// identity λ damping that defines GTD5.
    pub fn new(family: Family, alpha: Schedule, sigma: Schedule) -> Self {
        let dual_metric = if family == Family::Gtd5 { Metric::Identity } else { Metric::FeatureWeighted };
        Self { family, primal_metric: Metric::FeatureWeighted, dual_metric, alpha, sigma }
    }

    /// `α_k = 5/(k+5)` and `σ_k = 100/(k+100)`, the schedules of the comparison study.
    pub fn reference(family: Family) -> Self {
        Self::new(family, Schedule::Hyperbolic(5.0), Schedule::Hyperbolic(100.0))
    }

    pub fn with_primal_metric(mut self, metric: Metric) -> Self {
        self.primal_metric = metric;
        self
    }

    pub fn with_dual_metric(mut self, metric: Metric) -> Self {
        self.dual_metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::Gtd5 && self.dual_metric != Metric::Identity {
            return Err(GtdError::InvalidInput(
                "GTD5 is GTD4 with identity λ damping; dual_metric must be Identity".into(),
            ));
        }
        Ok(())
    }

    /// Short label such as `gtd4` or `gtd2-id`.
    pub fn name(&self) -> String {
        let mut name = self.family.as_str().to_string();
        let primal_id = self.family != Family::Gtd2 && self.primal_metric == Metric::Identity;
        let dual_id = matches!(self.family, Family::Gtd2 | Family::Gtd4) && self.dual_metric == Metric::Identity;
        match (primal_id, dual_id) {
            (true, true) => name.push_str("-id"),
            (true, false) => name.push_str("-idp"),
            (false, true) => name.push_str("-idd"),
            (false, false) => {}
        }
        name
    }

    pub(crate) fn damping(&self, sigma: f64) -> Damping {
        let primal = match self.family {
            Family::Gtd2 => None,
            _ => Some(self.primal_metric),
        };
        let dual = match self.family {
            Family::Gtd2 => Some((self.dual_metric, 1.0)),
            Family::Gtd3 => None,
            Family::Gtd4 => Some((self.dual_metric, sigma)),
            Family::Gtd5 => Some((Metric::Identity, sigma)),
        };
        Damping { primal, dual }
    }

    /// Advances `state` by one step using `α_k` and `σ_k` at `k = state.k`.
    pub fn step_in_place(
        &self,
        state: &mut LearnerState,
        sample: &TransitionSample,
        features: &Features,
        gamma: f64,
    ) -> Result<()> {
        let alpha = self.alpha.value(state.k);
        let sigma = if self.family.uses_sigma() { self.sigma.value(state.k) } else { 0.0 };
        apply(state, sample, features, gamma, alpha, self.damping(sigma))
    }
}

/// Primal/dual iterate and iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: DVector<f64>,
    pub lambda: DVector<f64>,
    pub k: u64,
}

impl LearnerState {
    pub fn zeros(q: usize) -> Self {
        Self { theta: DVector::zeros(q), lambda: DVector::zeros(q), k: 0 }
    }

    pub fn new(theta: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { theta, lambda, k: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.lambda.iter()).all(|v| v.is_finite())
    }

    /// `(θ, λ)` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        let q = self.theta.len();
        DVector::from_fn(2 * q, |i, _| if i < q { self.theta[i] } else { self.lambda[i - q] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Damping {
    pub primal: Option<Metric>,
    /// Metric and weight of the λ damping.
    pub dual: Option<(Metric, f64)>,
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Importance-corrected TD error `ρr + γρφ(s')ᵀθ − φ(s)ᵀθ`.
pub fn td_error(sample: &TransitionSample, theta: &DVector<f64>, features: &Features, gamma: f64) -> f64 {
    let theta = theta.as_slice();
    let rho = sample.rho;
    rho * sample.r + gamma * rho * dot(features.row(sample.s_next), theta) - dot(features.row(sample.s), theta)
}

/// Per-sample quantities shared by every coordinate of one update.
pub(crate) struct StepTerms<'a> {
    phi: &'a [f64],
    phi_next: &'a [f64],
    gamma_rho: f64,
    phi_lambda: f64,
    phi_theta: f64,
    delta: f64,
    damping: Damping,
}

impl<'a> StepTerms<'a> {
    pub(crate) fn new(
        theta: &[f64],
        lambda: &[f64],
        sample: &TransitionSample,
        features: &'a Features,
        gamma: f64,
        damping: Damping,
    ) -> Self {
        let phi = features.row(sample.s);
        let phi_next = features.row(sample.s_next);
        let rho = sample.rho;
        let phi_theta = dot(phi, theta);
        let delta = rho * sample.r + gamma * rho * dot(phi_next, theta) - phi_theta;
        Self { phi, phi_next, gamma_rho: gamma * rho, phi_lambda: dot(phi, lambda), phi_theta, delta, damping }
    }

    /// Unscaled increments `(Δθ_i, Δλ_i)` for coordinate `i`.
    #[inline]
    pub(crate) fn component(&self, i: usize, theta_i: f64, lambda_i: f64) -> (f64, f64) {
        let phi_i = self.phi[i];
        let mut d_theta = (phi_i - self.gamma_rho * self.phi_next[i]) * self.phi_lambda;
        match self.damping.primal {
            Some(Metric::FeatureWeighted) => d_theta -= phi_i * self.phi_theta,
            Some(Metric::Identity) => d_theta -= theta_i,
            None => {}
        }
        let mut d_lambda = self.delta * phi_i;
        match self.damping.dual {
            Some((Metric::FeatureWeighted, w)) => d_lambda -= w * self.phi_lambda * phi_i,
            Some((Metric::Identity, w)) => d_lambda -= w * lambda_i,
            None => {}
        }
        (d_theta, d_lambda)
    }
}

fn check_shapes(state: &LearnerState, q: usize) -> Result<()> {
    if state.theta.len() != q || state.lambda.len() != q {
        return Err(GtdError::ShapeMismatch(format!(
            "learner state has lengths ({}, {}), features have q = {q}",
            state.theta.len(),
            state.lambda.len()
        )));
    }
    Ok(())
}

pub(crate) fn apply(
    state: &mut LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    damping: Damping,
) -> Result<()> {
    let q = features.q();
    check_shapes(state, q)?;
    let theta = state.theta.as_mut_slice();
    let lambda = state.lambda.as_mut_slice();
    let terms = StepTerms::new(theta, lambda, sample, features, gamma, damping);
    for i in 0..q {
        let (d_theta, d_lambda) = terms.component(i, theta[i], lambda[i]);
        theta[i] += alpha * d_theta;
        lambda[i] += alpha * d_lambda;
    }

    let k = state.k;
    state.k += 1;
    if state.is_finite() {
        Ok(())
    } else {
        Err(GtdError::NonFinite { k })
    }
}

/// Adds `weight · (Δθ, Δλ)` for one sample into `acc` (stacked `(θ, λ)` layout).
pub(crate) fn accumulate_increment(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    damping: Damping,
    weight: f64,
    acc: &mut [f64],
) -> Result<()> {
    let q = features.q();
    check_shapes(state, q)?;
    let (theta, lambda) = (state.theta.as_slice(), state.lambda.as_slice());
    let terms = StepTerms::new(theta, lambda, sample, features, gamma, damping);
    for i in 0..q {
        let (d_theta, d_lambda) = terms.component(i, theta[i], lambda[i]);
        acc[i] += weight * d_theta;
        acc[q + i] += weight * d_lambda;
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(GtdError::InvalidInput(format!("step size must be finite and non-negative, got {alpha}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GtdError::InvalidInput(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    Ok(())
}

fn stepped(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    damping: Damping,
) -> Result<LearnerState> {
    check_alpha(alpha)?;
    let mut next = state.clone();
    apply(&mut next, sample, features, gamma, alpha, damping)?;
    Ok(next)
}

/// GTD2: `θ⁺ = θ + α(φ − γρφ')(φᵀλ)`, `λ⁺ = λ + α(δ − φᵀλ)φ`.
///
/// With `dual = Identity` the dual update is `λ⁺ = λ + α(δφ − λ)`.
pub fn gtd2_step(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    dual: Metric,
) -> Result<LearnerState> {
    stepped(state, sample, features, gamma, alpha, Damping { primal: None, dual: Some((dual, 1.0)) })
}

/// GTD3: `θ⁺ = θ + α[(φ − γρφ')(φᵀλ) − φ(φᵀθ)]`, `λ⁺ = λ + αδφ`.
///
/// With `primal = Identity` the `φ(φᵀθ)` term becomes `θ`.
pub fn gtd3_step(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    primal: Metric,
) -> Result<LearnerState> {
    stepped(state, sample, features, gamma, alpha, Damping { primal: Some(primal), dual: None })
}

/// GTD4: GTD3's primal update with `λ⁺ = λ + α(δ − σφᵀλ)φ`.
#[allow(clippy::too_many_arguments)]
pub fn gtd4_step(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    sigma: f64,
    primal: Metric,
    dual: Metric,
) -> Result<LearnerState> {
    check_sigma(sigma)?;
    stepped(state, sample, features, gamma, alpha, Damping { primal: Some(primal), dual: Some((dual, sigma)) })
}

/// GTD5: GTD3's primal update with `λ⁺ = λ + α(δφ − σλ)`.
pub fn gtd5_step(
    state: &LearnerState,
    sample: &TransitionSample,
    features: &Features,
    gamma: f64,
    alpha: f64,
    sigma: f64,
    primal: Metric,
) -> Result<LearnerState> {
    check_sigma(sigma)?;
    stepped(
        state,
        sample,
        features,
        gamma,
        alpha,
        Damping { primal: Some(primal), dual: Some((Metric::Identity, sigma)) },
    )
}
