// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod domain;
pub mod experiment;
pub mod latency;
pub mod pic_fw;
pub mod proto;
pub mod sched;
pub mod sim;
