//! Direction-aware reinforcement learning toolkit for grounding events in
//! videos.
//!
//! The crate scores grounding responses on forward and reversed videos,
//! computes group-relative policy optimization quantities, runs a
//! difficulty-aware curriculum, evaluates R1@m / mIoU / directionality
//! discrepancy, and ships a tabular policy simulator that exercises the whole
//! training loop without a vision-language model.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod curriculum;
pub mod error;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod policysim;
pub mod reward;
pub mod span;

pub use error::{Error, Result};
pub use grpo::{GrpoConfig, Response, ResponseGroup};
pub use metrics::{EvalRecord, MetricReport};
pub use reward::{ParsedResponse, RewardBreakdown};
pub use span::{Direction, EventCategory, EventSample, Prediction, TimeSpan, VideoMeta};
