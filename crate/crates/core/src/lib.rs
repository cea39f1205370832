//! Dynamic assignment of sequentially arriving items to capacity-constrained
//! agents.
//!
//! Items arrive one at a time, each with a cost vector over agents, and must be
//! assigned before the next arrives. The minimum-risk rules estimate, from a
//! historical pool of cost vectors, how much each candidate assignment is
//! expected to cost the rest of the cohort, and pick the smallest.

pub mod backtest;
pub mod batch;
pub mod data;
pub mod error;
pub mod lap;
pub mod mechanisms;
pub mod predictor;
pub mod session;
pub mod stochastic;
pub mod synthetic;

pub use data::{Cohort, Direction};
pub use error::{Error, Result};
pub use lap::{AgentPool, Assignment, CostMatrix};
pub use mechanisms::{DynamicState, Mechanism, MechanismConfig, Recommendation};
pub use stochastic::{DrawStream, HistoricalPool, QuantileTable};
