//! Continuous-time primal-dual gradient dynamics `ẋ = Mx + c` behind each
//! learner: drift matrices, the exact mean stochastic increment, Hurwitz and
//! Lyapunov checks, and a fixed-step RK4 integrator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GtdError, Result};
use crate::exact::{self, EvalProblem};
use crate::learner::{self, AlgorithmSpec, Family, LearnerState, Metric};
use crate::linalg;
use crate::mdp::TransitionSample;

/// Spectral abscissae at or above this count as not stable.
pub const STABILITY_THRESHOLD: f64 = -1e-12;

/// Affine drift `f(x) = Mx + c` over the stacked state `x = (θ, λ)`.
///
/// `m` alone is the linear part that governs the scaled limit `f_∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub fixed_point: DVector<f64>,
    pub family: Family,
    pub sigma: f64,
}

impl SystemMatrices {
    pub fn q(&self) -> usize {
        self.c.len() / 2
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x + &self.c
    }
}

fn regulariser(problem: &EvalProblem, metric: Metric) -> DMatrix<f64> {
    match metric {
        Metric::FeatureWeighted => problem.c_mat().clone(),
        Metric::Identity => DMatrix::identity(problem.q(), problem.q()),
    }
}

/// Assembles `M = [[−R_θ, −Aᵀ], [A, −R_λ]]` and `c = (0, b)` for `spec` at a fixed `sigma`.
pub fn system_matrices(problem: &EvalProblem, spec: &AlgorithmSpec, sigma: f64) -> Result<SystemMatrices> {
    spec.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GtdError::InvalidInput(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let q = problem.q();
    let damping = spec.damping(sigma);
    let mut m = DMatrix::zeros(2 * q, 2 * q);
    if let Some(metric) = damping.primal {
        m.view_mut((0, 0), (q, q)).copy_from(&-regulariser(problem, metric));
    }
    m.view_mut((0, q), (q, q)).copy_from(&-problem.a_mat().transpose());
    m.view_mut((q, 0), (q, q)).copy_from(problem.a_mat());
    if let Some((metric, weight)) = damping.dual {
        m.view_mut((q, q), (q, q)).copy_from(&(regulariser(problem, metric) * -weight));
    }
    let mut c = DVector::zeros(2 * q);
    c.rows_mut(q, q).copy_from(problem.b_vec());
    let fixed_point = linalg::solve(&m, &-&c, "drift matrix M")?;
    Ok(SystemMatrices { m, c, fixed_point, family: spec.family, sigma })
}

/// Closed-form equilibrium where one is known: `(θ*, 0)` for GTD2,
/// `(θ*, −A⁻ᵀR_θθ*)` for GTD3 and `(θ̂_σ, λ̂_σ)` for feature-weighted GTD4.
/// Returns `None` for the remaining variants.
pub fn analytic_fixed_point(problem: &EvalProblem, spec: &AlgorithmSpec, sigma: f64) -> Result<Option<DVector<f64>>> {
    let q = problem.q();
    let stack = |theta: DVector<f64>, lambda: DVector<f64>| {
        DVector::from_fn(2 * q, |i, _| if i < q { theta[i] } else { lambda[i - q] })
    };
    Ok(match spec.family {
        Family::Gtd2 => Some(stack(exact::theta_star(problem)?, DVector::zeros(q))),
        Family::Gtd3 => {
            let theta = exact::theta_star(problem)?;
            let lambda = match spec.primal_metric {
                Metric::FeatureWeighted => exact::lambda_star(problem)?,
                Metric::Identity => linalg::solve(&problem.a_mat().transpose(), &-&theta, "Aᵀ")?,
            };
            Some(stack(theta, lambda))
        }
        Family::Gtd4
            if spec.primal_metric == Metric::FeatureWeighted && spec.dual_metric == Metric::FeatureWeighted =>
        {
            Some(stack(exact::theta_hat_sigma(problem, sigma)?, exact::lambda_hat_sigma(problem, sigma)?))
        }
        _ => None,
    })
}

/// Exact mean stochastic increment at `(θ, λ)`, enumerating every
/// `(s, a, s')` with weight `d_β(s)β(a|s)P(s'|s,a)` and applying the
/// learner's own update rule with unit step size.
pub fn expected_update(
    problem: &EvalProblem,
    spec: &AlgorithmSpec,
    sigma: f64,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    spec.validate()?;
    let q = problem.q();
    let state = LearnerState::new(theta.clone(), lambda.clone());
    let damping = spec.damping(sigma);
    let (mdp, behavior, target) = (problem.mdp(), problem.behavior(), problem.target());
    let d = problem.d_beta();
    let mut acc = vec![0.0; 2 * q];
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let b = behavior.prob(s, a);
            if b <= 0.0 {
                continue;
            }
            let rho = target.prob(s, a) / b;
            for s_next in 0..mdp.n_states() {
                let weight = d[s] * b * mdp.p(s, a, s_next);
                if weight == 0.0 {
                    continue;
                }
                let sample = TransitionSample { s, a, s_next, r: mdp.r(s, a, s_next), rho };
                learner::accumulate_increment(
                    &state,
                    &sample,
                    problem.features(),
                    problem.gamma(),
                    damping,
                    weight,
                    &mut acc,
                )?;
            }
        }
    }
    Ok(DVector::from_vec(acc))
}

/// Spectral abscissa of a drift matrix and the resulting verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub is_stable: bool,
    /// Largest real part over the spectrum.
    pub spectral_abscissa: f64,
}

/// Hurwitz test: stable iff every eigenvalue has real part below `-1e-12`.
pub fn hurwitz_check(m: &DMatrix<f64>) -> Result<Stability> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(GtdError::ShapeMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| GtdError::Analysis("Schur decomposition did not converge".into()))?;
    let spectral_abscissa = schur.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !spectral_abscissa.is_finite() {
        return Err(GtdError::Analysis("non-finite eigenvalue".into()));
    }
    Ok(Stability { is_stable: spectral_abscissa < STABILITY_THRESHOLD, spectral_abscissa })
}

/// Largest observed `dV/dt = 2(x − x̂)ᵀM(x − x̂)` for `V = ‖x − x̂‖²` over
/// `n_points` Gaussian displacements from the equilibrium.
///
/// Only the σ-damped families (GTD4, GTD5) with `sigma > 0` qualify.
pub fn lyapunov_decrease_check<R: Rng + ?Sized>(
    problem: &EvalProblem,
    spec: &AlgorithmSpec,
    sigma: f64,
    n_points: usize,
    rng: &mut R,
) -> Result<f64> {
    if !spec.family.uses_sigma() || !(sigma > 0.0) {
        return Err(GtdError::InvalidInput("Lyapunov check needs GTD4/GTD5 with sigma > 0".into()));
    }
    let sys = system_matrices(problem, spec, sigma)?;
    let n = sys.m.nrows();
    let mut max_rate = f64::NEG_INFINITY;
    for _ in 0..n_points {
        let dx = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        max_rate = max_rate.max(lyapunov_rate(&sys, &dx));
    }
    Ok(max_rate)
}

/// `dV/dt` at displacement `dx` from the equilibrium.
pub fn lyapunov_rate(sys: &SystemMatrices, dx: &DVector<f64>) -> f64 {
    2.0 * dx.dot(&(&sys.m * dx))
}

/// Sampled solution of `ẋ = Mx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Largest admissible fixed step, `0.5 / ‖M‖₂`.
pub fn max_stable_dt(sys: &SystemMatrices) -> f64 {
    let norm = linalg::spectral_norm(&sys.m);
    if norm == 0.0 {
        f64::INFINITY
    } else {
        0.5 / norm
    }
}

fn rk4_step(sys: &SystemMatrices, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = sys.drift(x);
    let k2 = sys.drift(&(x + &k1 * (0.5 * h)));
    let k3 = sys.drift(&(x + &k2 * (0.5 * h)));
    let k4 = sys.drift(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Classical fourth-order Runge–Kutta with fixed step `dt` up to `t_end`
/// (the last step is shortened to land on `t_end`).
///
/// Records the initial state, every `record_every`-th step (0 disables
/// intermediate samples) and the final state.
pub fn integrate_pdgd(
    sys: &SystemMatrices,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
    record_every: usize,
) -> Result<Trajectory> {
    if x0.len() != sys.c.len() {
        return Err(GtdError::ShapeMismatch(format!("x0 has length {}, system has {}", x0.len(), sys.c.len())));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(GtdError::InvalidInput(format!("need dt > 0 and finite t_end >= 0, got dt={dt}, t_end={t_end}")));
    }
    let bound = max_stable_dt(sys);
    if dt > bound {
        return Err(GtdError::DtTooLarge { dt, bound });
    }

    let mut traj = Trajectory { times: vec![0.0], states: vec![x0.clone()] };
    let mut x = x0.clone();
    let full_steps = (t_end / dt).floor() as u64;
    for i in 1..=full_steps {
        x = rk4_step(sys, &x, dt);
        if record_every > 0 && i % record_every as u64 == 0 {
            traj.times.push(i as f64 * dt);
            traj.states.push(x.clone());
        }
    }
    let t_done = full_steps as f64 * dt;
    let rest = t_end - t_done;
    if rest > 1e-12 * dt {
        x = rk4_step(sys, &x, rest);
    }
    if traj.times.last() != Some(&t_end) {
        traj.times.push(t_end);
        traj.states.push(x);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::build_problem;
    use crate::mdp::{Features, Mdp, Policy};

    fn scalar_system(m: f64, c: f64) -> SystemMatrices {
        SystemMatrices {
            m: DMatrix::from_element(1, 1, m),
            c: DVector::from_element(1, c),
            fixed_point: DVector::from_element(1, -c / m),
            family: Family::Gtd2,
            sigma: 0.0,
        }
    }

    fn small_problem() -> EvalProblem {
        let p = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.3, 0.7, 0.2, 0.8, 0.6, 0.4]);
        let r = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.5, 0.0, 2.0, 0.3, -0.3]);
        let mdp = Mdp::new(2, 2, p, r, 0.9).unwrap();
        let target = Policy::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]));
        build_problem(&mdp, &target, &Policy::uniform(2, 2), &Features::identity(2)).unwrap()
    }

    #[test]
    fn negative_identity_is_stable() {
        let st = hurwitz_check(&-DMatrix::<f64>::identity(3, 3)).unwrap();
        assert!(st.is_stable);
        assert!((st.spectral_abscissa + 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_is_marginal() {
        let st = hurwitz_check(&DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert!(!st.is_stable);
        assert!(st.spectral_abscissa.abs() < 1e-14);
    }

    #[test]
    fn hurwitz_rejects_non_square() {
        assert!(hurwitz_check(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scalar_exponential_relaxation() {
        let sys = scalar_system(-1.0, 1.0);
        let traj = integrate_pdgd(&sys, &DVector::zeros(1), 0.01, 5.0, 0).unwrap();
        assert!((traj.last()[0] - (1.0 - (-5.0f64).exp())).abs() < 1e-8);
        assert_eq!(*traj.times.last().unwrap(), 5.0);
    }

    #[test]
    fn fixed_point_is_invariant() {
        let pb = small_problem();
        let sys = system_matrices(&pb, &AlgorithmSpec::reference(Family::Gtd3), 0.0).unwrap();
        let dt = max_stable_dt(&sys);
        let traj = integrate_pdgd(&sys, &sys.fixed_point, dt, 50.0, 10).unwrap();
        for x in &traj.states {
            assert!((x - &sys.fixed_point).amax() < 1e-12);
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let sys = scalar_system(-4.0, 0.0);
        assert!(matches!(integrate_pdgd(&sys, &DVector::zeros(1), 0.2, 1.0, 0), Err(GtdError::DtTooLarge { .. })));
    }

    #[test]
    fn gtd2_block_layout_and_fixed_point() {
        let pb = small_problem();
        let sys = system_matrices(&pb, &AlgorithmSpec::reference(Family::Gtd2), 0.0).unwrap();
        assert!(sys.m.view((0, 0), (2, 2)).iter().all(|v| *v == 0.0));
        assert_eq!(sys.m.view((2, 2), (2, 2)).clone_owned(), -pb.c_mat());
        assert!(sys.fixed_point.rows(2, 2).amax() < 1e-12);
    }

    #[test]
    fn gtd4_sigma_zero_matches_gtd3() {
        let pb = small_problem();
        let g3 = system_matrices(&pb, &AlgorithmSpec::reference(Family::Gtd3), 0.0).unwrap();
        let g4 = system_matrices(&pb, &AlgorithmSpec::reference(Family::Gtd4), 0.0).unwrap();
        assert_eq!(g3.m, g4.m);
    }

    #[test]
    fn gtd2_theta_drift_vanishes_without_dual() {
        let pb = small_problem();
        let spec = AlgorithmSpec::reference(Family::Gtd2);
        let upd = expected_update(&pb, &spec, 0.0, &DVector::from_vec(vec![0.7, -2.0]), &DVector::zeros(2)).unwrap();
        assert!(upd.rows(0, 2).amax() < 1e-15);
    }

    #[test]
    fn lyapunov_needs_sigma_family() {
        let pb = small_problem();
        let mut rng = rand::rng();
        assert!(lyapunov_decrease_check(&pb, &AlgorithmSpec::reference(Family::Gtd3), 1.0, 10, &mut rng).is_err());
        assert!(lyapunov_decrease_check(&pb, &AlgorithmSpec::reference(Family::Gtd4), 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn lyapunov_rate_is_zero_at_equilibrium() {
        let pb = small_problem();
        let sys = system_matrices(&pb, &AlgorithmSpec::reference(Family::Gtd4), 1.0).unwrap();
        assert_eq!(lyapunov_rate(&sys, &DVector::zeros(4)), 0.0);
    }
}
