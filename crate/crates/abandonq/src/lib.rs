//! Ground truth and explicit bounds for heavily overloaded queues with
//! abandonment: the single-server M/M/1+M chain and join-the-shortest-queue
//! (JSQ) load balancing.
//!
//! The crate pairs every closed-form bound with an independent numerical
//! truth (exact birth-death solves, truncated JSQ solves, event simulation,
//! quantile-coupling Wasserstein distances) so the harness can check that
//! the bounds actually sandwich the truth.

pub mod error;
pub mod gaussian_numerics;
pub mod harness;
pub mod jsq_bounds;
pub mod jsq_engine;
pub mod model_core;
pub mod report;
pub mod ssq_bounds;
pub mod ssq_exact;
pub mod stein_certificate;
pub mod wasserstein_metrics;

pub use error::{Error, Result};
pub use model_core::QueueParams;
pub use report::{BoundReport, Regime};
