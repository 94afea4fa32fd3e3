//! Transition probability estimation in (partially) non-Markov multi-state
//! models: Aalen-Johansen, landmark Aalen-Johansen and the hybrid landmark
//! estimator that landmarks only selected transitions, with log-rank based
//! Markov tests, bootstrap inference, a frailty simulator and a simulation
//! study harness.
//!
//! States are zero-based indices into a [`StateSpace`]; labels appear only at
//! the I/O boundary.

pub mod aggregate;
pub mod error;
pub mod eval;
pub mod estimators;
pub mod hazard;
pub mod history;
pub mod inference;
pub mod io;
pub mod markov_test;
pub mod rng;
pub mod sim;
pub mod space;
pub mod step;

pub use aggregate::{build_aggregated, AggregatedProcesses};
pub use error::{MsmError, Result};
pub use estimators::{
    aalen_johansen, haj, lmaj, state_occupation, state_occupation_curve, EstimatorKind, EstimatorSpec,
    TransitionProbabilityResult,
};
pub use hazard::{nelson_aalen, product_integral, CumulativeHazardMatrix};
pub use history::{landmark_subset, EventHistory, Jump};
pub use space::{StateSpace, Transition};
pub use step::StepFunction;
pub use inference::{bootstrap_ci, greenwood_se, BootstrapConfig, ConfidenceBand};
pub use markov_test::{grid_test, logrank_point, select_nonmarkov, MarkovTestReport};
pub use sim::{FrailtyModel, FrailtyModelSpec};
