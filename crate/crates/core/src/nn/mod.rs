//! Layers assembled from the graph ops, and the parameter store they read.
//!
//! Layers hold only names and hyperparameters. Values live in a
//! [`ParamStore`], so one layer description works with any executor and
//! either precision.

mod layers;
mod params;

pub use layers::{global_avg_pool, Act, BatchNorm, Conv, ConvBn, MobileNetBlock, MobileNetBlockSpec, BN_EPS};
pub use params::{Entry, Init, ParamStore, Role, Run};
