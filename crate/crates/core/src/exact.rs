//! Closed-form policy-evaluation quantities: the core matrices `A`, `b`, `C`,
//! `E`, the weighted projection, MSBE/MSPBE and the saddle points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GtdError, Result};
use crate::linalg;
use crate::mdp::{self, Features, Mdp, Policy, TransitionSampler};

/// Instances with `cond(A)` (or `cond(C)`) above this are rejected.
pub const COND_LIMIT: f64 = 1e10;

/// One off-policy evaluation instance with every derived matrix materialised.
///
/// With `D = diag(d_β)`:
/// `A = ΦᵀD(γP^π − I)Φ`, `b = ΦᵀDR^π`, `C = ΦᵀDΦ`, `E = C (Aᵀ)⁻¹ C`.
#[derive(Debug, Clone)]
pub struct EvalProblem {
    mdp: Mdp,
    target: Policy,
    behavior: Policy,
    features: Features,
    p_pi: DMatrix<f64>,
    r_pi: DVector<f64>,
    d_beta: DVector<f64>,
    a_mat: DMatrix<f64>,
    b_vec: DVector<f64>,
    c_mat: DMatrix<f64>,
    e_mat: DMatrix<f64>,
    c_chol: Cholesky<f64, Dyn>,
    cond_a: f64,
    sampler: TransitionSampler,
}

/// Validates the instance and assembles every matrix the learners and the
/// analysis routines need.
pub fn build_problem(mdp: &Mdp, target: &Policy, behavior: &Policy, features: &Features) -> Result<EvalProblem> {
    mdp::validate_mdp(mdp, target, behavior, features).into_result()?;

    let p_pi = mdp::policy_transition(mdp, target)?;
    let r_pi = mdp::expected_reward(mdp, target)?;
    let p_beta = mdp::policy_transition(mdp, behavior)?;
    let d_beta = mdp::stationary_distribution(&p_beta)?;

    let phi = features.matrix();
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    // ΦᵀD, scaling column s of Φᵀ by d(s).
    let mut phi_t_d = phi.transpose();
    for (s, mut col) in phi_t_d.column_iter_mut().enumerate() {
        col *= d_beta[s];
    }
    let c_mat = &phi_t_d * phi;
    let bellman = &p_pi * gamma - DMatrix::identity(n, n);
    let a_mat = &phi_t_d * (bellman * phi);
    let b_vec = &phi_t_d * &r_pi;

    let cond_c = linalg::condition_number(&c_mat);
    if !(cond_c <= COND_LIMIT) {
        return Err(GtdError::Degenerate(format!("cond(C) = {cond_c:e} exceeds {COND_LIMIT:e}")));
    }
    let cond_a = linalg::condition_number(&a_mat);
    if !(cond_a <= COND_LIMIT) {
        return Err(GtdError::Degenerate(format!("cond(A) = {cond_a:e} exceeds {COND_LIMIT:e}")));
    }
    // Symmetrise away round-off before factoring.
    let c_sym = (&c_mat + c_mat.transpose()) * 0.5;
    let c_chol = Cholesky::new(c_sym).ok_or_else(|| GtdError::Degenerate("C is not positive definite".into()))?;
    let e_mat = &c_mat * linalg::solve_matrix(&a_mat.transpose(), &c_mat, "Aᵀ")?;
    let sampler = TransitionSampler::new(mdp, &d_beta, behavior, target)?;

    Ok(EvalProblem {
        mdp: mdp.clone(),
        target: target.clone(),
        behavior: behavior.clone(),
        features: features.clone(),
        p_pi,
        r_pi,
        d_beta,
        a_mat,
        b_vec,
        c_mat,
        e_mat,
        c_chol,
        cond_a,
        sampler,
    })
}

impl EvalProblem {
    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    pub fn behavior(&self) -> &Policy {
        &self.behavior
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    /// Number of features.
    pub fn q(&self) -> usize {
        self.features.q()
    }

    pub fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    pub fn p_pi(&self) -> &DMatrix<f64> {
        &self.p_pi
    }

    pub fn r_pi(&self) -> &DVector<f64> {
        &self.r_pi
    }

    pub fn d_beta(&self) -> &DVector<f64> {
        &self.d_beta
    }

    pub fn d_mat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.d_beta)
    }

    pub fn a_mat(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn b_vec(&self) -> &DVector<f64> {
        &self.b_vec
    }

    pub fn c_mat(&self) -> &DMatrix<f64> {
        &self.c_mat
    }

    pub fn e_mat(&self) -> &DMatrix<f64> {
        &self.e_mat
    }

    /// 2-norm condition number of `A`.
    pub fn cond_a(&self) -> f64 {
        self.cond_a
    }

    pub fn sampler(&self) -> &TransitionSampler {
        &self.sampler
    }

    /// `C⁻¹ v` through the cached Cholesky factor.
    pub fn solve_c(&self, v: &DVector<f64>) -> DVector<f64> {
        self.c_chol.solve(v)
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.q() {
            return Err(GtdError::ShapeMismatch(format!("theta has length {}, expected {}", theta.len(), self.q())));
        }
        Ok(())
    }
}

/// `Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD`, the `D`-weighted projection onto the feature span.
pub fn projection_matrix(problem: &EvalProblem) -> DMatrix<f64> {
    let phi = problem.features().matrix();
    let mut phi_t_d = phi.transpose();
    for (s, mut col) in phi_t_d.column_iter_mut().enumerate() {
        col *= problem.d_beta[s];
    }
    let mut coef = phi_t_d;
    problem.c_chol.solve_mut(&mut coef);
    phi * coef
}

/// Bellman residual `R^π + γP^πΦθ − Φθ`.
pub fn bellman_residual(problem: &EvalProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    problem.check_theta(theta)?;
    let v = problem.features().matrix() * theta;
    Ok(&problem.r_pi + (&problem.p_pi * &v) * problem.gamma() - v)
}

/// Mean-square Bellman error `½‖R^π + γP^πΦθ − Φθ‖²_D`.
pub fn msbe(problem: &EvalProblem, theta: &DVector<f64>) -> Result<f64> {
    let res = bellman_residual(problem, theta)?;
    Ok(0.5 * res.iter().zip(problem.d_beta.iter()).map(|(r, d)| d * r * r).sum::<f64>())
}

/// Mean-square projected Bellman error, evaluated as `½(Aθ + b)ᵀC⁻¹(Aθ + b)`.
pub fn mspbe(problem: &EvalProblem, theta: &DVector<f64>) -> Result<f64> {
    problem.check_theta(theta)?;
    let g = &problem.a_mat * theta + &problem.b_vec;
    let w = problem.solve_c(&g);
    Ok((0.5 * g.dot(&w)).max(0.0))
}

/// Gradient of [`mspbe`]: `AᵀC⁻¹(Aθ + b)`.
pub fn mspbe_gradient(problem: &EvalProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    problem.check_theta(theta)?;
    let g = &problem.a_mat * theta + &problem.b_vec;
    Ok(problem.a_mat.tr_mul(&problem.solve_c(&g)))
}

/// The unique MSPBE minimiser `θ* = −A⁻¹b`.
pub fn theta_star(problem: &EvalProblem) -> Result<DVector<f64>> {
    linalg::solve(&problem.a_mat, &-&problem.b_vec, "A")
}

/// Dual point `λ* = (Aᵀ)⁻¹ C A⁻¹ b`, equivalently `−(Aᵀ)⁻¹ C θ*`.
pub fn lambda_star(problem: &EvalProblem) -> Result<DVector<f64>> {
    let theta = theta_star(problem)?;
    linalg::solve(&problem.a_mat.transpose(), &-(&problem.c_mat * theta), "Aᵀ")
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GtdError::InvalidInput(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    Ok(())
}

/// Primal coordinate of the σ-regularised saddle point, `−(A + σE)⁻¹ b`.
pub fn theta_hat_sigma(problem: &EvalProblem, sigma: f64) -> Result<DVector<f64>> {
    check_sigma(sigma)?;
    let shifted = &problem.a_mat + &problem.e_mat * sigma;
    if linalg::condition_number(&shifted) > 1.0 / f64::EPSILON {
        return Err(GtdError::Degenerate(format!("A + {sigma}·E is numerically singular")));
    }
    linalg::solve(&shifted, &-&problem.b_vec, "A + σE")
}

/// Dual coordinate of the σ-regularised saddle point.
///
/// Taken from the primal stationarity condition `Cθ + Aᵀλ = 0` at
/// `θ = θ̂_σ`, so `λ̂_σ = −(Aᵀ)⁻¹ C θ̂_σ`. At σ = 0 this is `λ*`.
pub fn lambda_hat_sigma(problem: &EvalProblem, sigma: f64) -> Result<DVector<f64>> {
    let theta = theta_hat_sigma(problem, sigma)?;
    linalg::solve(&problem.a_mat.transpose(), &-(&problem.c_mat * theta), "Aᵀ")
}
