//! Error-bound theory and the statistical verification protocol.

pub mod bench;
pub mod bound;
pub mod report;
pub mod special;
pub mod stats;
pub mod sweep;

pub use bench::{speed_benchmark, SpeedReport};
pub use bound::{loss_upper_bound, significant_bit_probability, BoundSpec, Probability, Threshold};
pub use report::{ReportThresholds, VerificationReport};
pub use special::{erf, erf_inv};
pub use stats::{histogram, mae, residual_stats, residuals, HistogramBin, ResidualStats};
pub use sweep::{data_requirement_sweep, SweepPoint};
