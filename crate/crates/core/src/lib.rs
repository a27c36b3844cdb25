//! Multi-task continuous emotion regression.
//!
//! Framed speech and body-motion features are fused at the input, passed
//! through a shared 1-D convolution and max-pool, and regressed per task by
//! a GRU → dense → linear branch. Networks are trained with concordance
//! (CCC), Pearson (PCC) or squared-error losses combined as a weighted
//! multi-task objective.

pub mod data;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod task;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, ParseErrorKind, Result};
pub use losses::{LossKind, MtlObjective};
pub use metrics::{ccc, pcc, sliding_ccc, TaskTrace, TraceSet};
pub use params::ParameterSet;
pub use task::Task;
pub use tensor::{Tape, Tensor, Var};
