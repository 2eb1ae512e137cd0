//! Independent dense oracles and instance helpers shared by the integration tests.
//!
//! Everything here is recomputed from the raw model (`P`, `R`, `π`, `β`, `Φ`)
//! with explicit loops and inverses, never through the library's own
//! assembly code.
#![allow(dead_code)]

use gtd_core::harness::{generate_instance, instance_rng, GenConfig};
use gtd_core::{DMatrix, DVector, EvalProblem, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random instance: 3–20 states, 2–4 actions, 1–5 features.
pub fn small_instance(seed: u64) -> (Instance, EvalProblem) {
    let mut sizes = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ns = sizes.random_range(3..=20);
    let na = sizes.random_range(2..=4);
    let q = sizes.random_range(1..=ns.min(5));
    sized_instance(ns, na, q, seed)
}

pub fn sized_instance(ns: usize, na: usize, q: usize, seed: u64) -> (Instance, EvalProblem) {
    let inst = generate_instance(&GenConfig::fixed(ns, na, q, seed), &mut instance_rng(seed, 0)).unwrap();
    let pb = inst.problem().unwrap();
    (inst, pb)
}

pub fn gaussian(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Dense model quantities built directly from the instance by triple loops.
pub struct Oracle {
    pub p_pi: DMatrix<f64>,
    pub r_pi: DVector<f64>,
    pub d: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub gamma: f64,
}

impl Oracle {
    pub fn new(inst: &Instance) -> Self {
        let (ns, na) = (inst.mdp.n_states(), inst.mdp.n_actions());
        let mut p_pi = DMatrix::zeros(ns, ns);
        let mut r_pi = DVector::zeros(ns);
        let mut p_beta = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for a in 0..na {
                for t in 0..ns {
                    let p = inst.mdp.p(s, a, t);
                    p_pi[(s, t)] += inst.target.prob(s, a) * p;
                    p_beta[(s, t)] += inst.behavior.prob(s, a) * p;
                    r_pi[s] += inst.target.prob(s, a) * p * inst.mdp.r(s, a, t);
                }
            }
        }
        // (I − Pᵀ + 11ᵀ) d = 1 characterises the stationary law of an ergodic chain.
        let m = DMatrix::identity(ns, ns) - p_beta.transpose() + DMatrix::from_element(ns, ns, 1.0);
        let d = m.qr().solve(&DVector::from_element(ns, 1.0)).unwrap();

        let phi = inst.features.matrix().clone();
        let dm = DMatrix::from_diagonal(&d);
        let gamma = inst.mdp.gamma();
        let a = phi.transpose() * &dm * (&p_pi * gamma - DMatrix::identity(ns, ns)) * &phi;
        let b = phi.transpose() * &dm * &r_pi;
        let c = phi.transpose() * &dm * &phi;
        Self { p_pi, r_pi, d, phi, a, b, c, gamma }
    }

    pub fn q(&self) -> usize {
        self.phi.ncols()
    }

    pub fn theta_star(&self) -> DVector<f64> {
        -self.a.clone().try_inverse().unwrap() * &self.b
    }

    pub fn e(&self) -> DMatrix<f64> {
        &self.c * self.a.transpose().try_inverse().unwrap() * &self.c
    }

    /// `½‖Π(TΦθ) − Φθ‖²_D` with the projection formed explicitly.
    pub fn mspbe_projected(&self, theta: &DVector<f64>) -> f64 {
        let ns = self.d.len();
        let dm = DMatrix::from_diagonal(&self.d);
        let proj = &self.phi * self.c.clone().try_inverse().unwrap() * self.phi.transpose() * &dm;
        let v = &self.phi * theta;
        let tv = &self.r_pi + &self.p_pi * &v * self.gamma;
        let diff = &proj * tv - &v;
        0.5 * (0..ns).map(|s| self.d[s] * diff[s] * diff[s]).sum::<f64>()
    }

    /// Drift `[[−Rθ, −Aᵀ], [A, −Rλ]] x + (0, b)` from explicit blocks.
    pub fn drift(&self, r_theta: &DMatrix<f64>, r_lambda: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        let q = self.q();
        let theta = x.rows(0, q).into_owned();
        let lambda = x.rows(q, q).into_owned();
        let top = -(r_theta * &theta) - self.a.transpose() * &lambda;
        let bottom = &self.a * &theta - r_lambda * &lambda + &self.b;
        DVector::from_iterator(2 * q, top.iter().chain(bottom.iter()).copied())
    }
}

pub fn max_abs_diff(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_m(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
