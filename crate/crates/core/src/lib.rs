//! Federated continual learning with elastic anchor transfer.
//!
//! Simulated clients each learn a sequence of regression tasks and exchange
//! only parameters and diagonal Fisher estimates. The crate contains the
//! small MLP and its gradients, the quadratic anchor penalties, the round
//! and task engine for twelve training regimes, scenario generation, and
//! the performance-matrix metrics.

pub mod algorithm;
pub mod config;
pub mod engine;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod numeric;
pub mod penalty;
pub mod scenario;
pub mod seed;

pub use algorithm::{Aggregation, AlgorithmSpec, Dropout, Family, Lambdas, RoundSchedule};
pub use config::{ExperimentConfig, ScenarioSource};
pub use engine::{run_experiment, RunOutput};
pub use error::{FclError, Result};
pub use metrics::{amse, bwt, fwt, PerformanceMatrix};
pub use numeric::{Activation, FisherDiagonal, LabeledSet, MlpSpec, ParameterVector};
pub use scenario::{Scenario, ScenarioConfig};
