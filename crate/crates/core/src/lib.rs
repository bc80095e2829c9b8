//! Mollified boosted density estimation.
//!
//! Learns an exponential-family density `Q_T = Q_0 exp(<θ, c> - φ)` whose
//! sufficient statistics `c_t` are bounded neural classifiers, with the
//! geometric schedule `θ_t = (ε/(ε + 4 log 2))^t` keeping `Q_T / Q_0`
//! inside `[e^{-ε/2}, e^{ε/2}]`. Sampling from any such density is
//! ε-integrally private: the guarantee holds for every pair of input
//! datasets, not only neighbouring ones.
//!
//! Modules:
//! - [`targets`]: ground-truth mixtures, the base measure, mollification.
//! - [`weak_learner`]: the per-round classifier and its advantages.
//! - [`booster`]: the boosting loop and the resulting model.
//! - [`sampler`]: random-walk Metropolis–Hastings and the budget ledger.
//! - [`metrics`]: NLL, KL, mode coverage, restricted mass and KL.
//! - [`theory`]: bound calculators and numerical checks of the guarantees.
//! - [`cli`]: the experiment harness behind the `mbde` binary.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod booster;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod targets;
pub mod theory;
pub mod weak_learner;

pub use booster::{boost, theta_schedule, BoostConfig, MollifiedDensity, ThetaSchedule};
pub use error::{Error, Result};
pub use sampler::{mh_sample, McmcConfig, PrivacyLedger};
pub use targets::{BaseDensity, Dataset, ExactSampler, LogDensity, TargetDensity};
pub use weak_learner::{Classifier, TrainConfig, WlaReport};
