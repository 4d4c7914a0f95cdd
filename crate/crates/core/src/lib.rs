//! Trace-driven cluster simulator and control-plane library for CXL memory
//! pooling. Models slice-granular pool ownership, prediction-driven
//! local/pool VM memory splits, and QoS mitigation, and replays VM traces
//! through a deterministic event engine to quantify DRAM savings.

pub mod control_plane;
pub mod pool_hw;
pub mod predictors;
pub mod simulator;
pub mod trace;
