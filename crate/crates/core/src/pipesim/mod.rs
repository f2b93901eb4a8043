//! Cycle-counting simulator of the hardware pipeline.
//!
//! Blocks (signal memory, convolution engines, fused processing blocks, the
//! classifier and the scoreboard) each hold their own parameters and pass
//! feature maps over self-timed handshake links. Values are computed with
//! the same fixed-point primitives as the quantized model, so a pipeline run
//! reproduces the quantized forward pass bit for bit; timing depends only on
//! shapes and resource allocation.

mod alloc;
mod conv;
mod fused;
mod plan;
mod timing;

use thiserror::Error;

pub use alloc::{allocate_resources, verify_allocation, Allocation, AllocationConfig, BlockBudget};
pub use conv::{simulate_conv_block, ConvKernels, MACS_PER_ENGINE};
pub use fused::{simulate_fused_block, FusedParams, FusedTail};
pub use plan::{
    run_pipeline, BlockConfig, BlockKind, BlockParams, DenseParams, Pipeline, PipelineConfig,
    PipelinePlan, PipelineRun,
};
pub use timing::{
    calibrate_handshake, simulate_timing, BlockTrace, CycleTrace, HandshakeState, TimingBlock,
    TARGET_DELAY_CYCLES,
};

#[derive(Debug, Error)]
pub enum PipeError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("{block}: {detail}")]
    Config { block: String, detail: String },
    #[error("model is not in projected, quantized form: {0}")]
    Topology(String),
    #[error("handshake deadlock at cycle {cycle}: link {link} stalled ({detail})")]
    Deadlock {
        cycle: u64,
        link: String,
        detail: String,
    },
    #[error("frequency must be positive, got {0}")]
    Frequency(f64),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seconds taken by `cycles` clock cycles at `frequency_hz`.
pub fn cycles_to_time(cycles: u64, frequency_hz: f64) -> Result<f64, PipeError> {
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return Err(PipeError::Frequency(frequency_hz));
    }
    Ok(cycles as f64 / frequency_hz)
}

/// Microseconds taken by `cycles` clock cycles at `frequency_hz`.
pub fn cycles_to_micros(cycles: u64, frequency_hz: f64) -> Result<f64, PipeError> {
    cycles_to_time(cycles, frequency_hz)?;
    Ok(cycles as f64 * 1e6 / frequency_hz)
}
