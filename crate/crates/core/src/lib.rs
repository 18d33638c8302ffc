//! Federated-learning simulation with covert model poisoning attacks.

pub mod aggregation;
pub mod attacks;
pub mod datakit;
pub mod engine;
pub mod error;
pub mod models;
pub mod numkit;

pub use aggregation::{AggregationOutcome, AggregationRule, ClientUpdate};
pub use engine::{run_experiment, ExperimentConfig, MetricsReport};
pub use error::{Error, Result};
pub use models::{Dataset, Labels, ModelKind, ModelSpec, TrainConfig};
pub use numkit::{BoxDomain, ParamVector, SimRng};
