//! Gradient temporal-difference learning for off-policy policy evaluation
//! with linear features.
//!
//! * [`mdp`]: finite MDPs, policies, features and i.i.d. transition sampling.
//! * [`exact`]: model-based oracles (`θ*`, `λ*`, `θ̂_σ`, MSBE, MSPBE, projection).
//! * [`learner`]: the GTD2–GTD5 stochastic updates and their schedules.
//! * [`pdgd`]: the continuous-time primal-dual dynamics behind each learner.
//! * [`harness`]: random instances, seeded trials and rankings.

// `!(x <= limit)` is used on purpose throughout so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod harness;
pub mod instance;
pub mod learner;
pub mod linalg;
pub mod mdp;
pub mod pdgd;
pub mod report;

pub use error::{GtdError, Result};
pub use exact::{build_problem, EvalProblem};
pub use harness::{ErrorTrace, GenConfig, RankingTable, TrialConfig};
pub use instance::Instance;
pub use learner::{AlgorithmSpec, Family, LearnerState, Metric, Schedule};
pub use mdp::{Features, Mdp, Policy, TransitionSample};
pub use pdgd::{Stability, SystemMatrices};

pub use nalgebra::{DMatrix, DVector};
