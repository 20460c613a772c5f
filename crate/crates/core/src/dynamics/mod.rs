//! Single-trajectory dynamics: Hamiltonian flow, Poisson alarms, coin flips
//! and momentum kicks.

mod elliptic;
mod flow;
mod sampler;
mod simulate;
mod state;

pub use flow::{flow, flow_segment, FlowMethod, FlowParams, Segment, SegmentOptions};
pub use sampler::{HalfTable, KickSampler, QUANTILE_CELLS};
pub use simulate::*;
pub use state::PhaseState;
