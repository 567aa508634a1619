#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dbo;
pub mod driver;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod sampling;
pub mod sparse;

pub use dbo::{DboDerivative, DboState};
pub use driver::{RunConfig, RunOutcome};
pub use error::{Error, Result};
pub use integrate::{Mode, StepReport};
pub use linalg::{Matrix, QuadratureWeights, Vector};
pub use models::{LinearModel, Model};
pub use sampling::{Sampler, SelectionResult};
pub use sparse::{LowRankRhs, RankController};
