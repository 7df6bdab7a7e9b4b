//! Two-stage execution of `x · Ŵ`: a decoder role expands bitmap tiles into
//! a bounded ring while a compute role multiplies them.

mod engine;
mod ring;

pub use engine::{
    bench, pipelined_forward, pipelined_matmul, pipelined_matmul_with_hooks, BenchReport, NoHooks, PipelineConfig,
    PipelineHooks,
};
pub use ring::{RingStats, TileData};
