//! H-AODV: metric-bearing discovery, pipe maintenance and route switching.

pub mod clique;
pub mod metrics;
pub mod pipe;

pub use metrics::{compute_il_route, rreq_admission, select_route, CostWeights, RouteMetrics};
pub use pipe::{PipeGraph, Topology};
