//! Burn wound reconstruction and measurement.

// Range checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod clinical;
pub mod features;
pub mod image;
pub mod longitudinal;
pub mod mapping;
pub mod mesh;
pub mod metrics;
pub mod quality;
pub mod reconstruction;
pub mod report;
pub mod store;
pub mod synthetic;
pub mod units;
