//! Mass start race toolkit: race logs and scoring, drafting exposure metrics,
//! random-intercept mixed models, and the skater's dilemma simulator.

// `!(x > y)` is used on purpose throughout: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod racelog;
pub mod metrics;
pub mod stats;
pub mod dilemma;
pub mod parallel;
