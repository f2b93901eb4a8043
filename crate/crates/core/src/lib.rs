//! Deep spike detection toolkit.
//!
//! * [`fxp`]: saturating fixed-point scalars.
//! * [`model`]: the 66-sample 1-D CNN, training and fixed-point execution.
//! * [`compression`]: structured pruning, network projection, quantization
//!   and model selection.
//! * [`pipesim`]: cycle-counting simulator of the handshake-driven hardware
//!   pipeline.
//! * [`spikesort`]: recordings, detection, CNN channel selection and artefact
//!   removal, PCA + K-means sorting and the CAcc metric.

pub mod compression;
pub mod fxp;
pub mod model;
pub mod pipesim;
pub mod spikesort;
