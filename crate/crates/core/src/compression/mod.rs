//! Model compression: structured pruning, PCA network projection,
//! fixed-point quantization and the staged selection of the smallest model
//! that keeps its accuracy.

mod pipeline;
pub mod project;
pub mod prune;
pub mod quantize;
pub mod select;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, TrainConfig};

pub use pipeline::{compress, CompressionOutcome};
pub use project::{
    activation_pca, project_network, project_with_ranks, LayerPca, ProjectionOutcome,
};
pub use prune::{filter_importance, prune_structured, remove_filter, PruneCandidate, PruneOutcome};
pub use quantize::{calibrate_output_formats, quantize_model};
pub use select::{select_model, Selection, SweepEntry};

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid compression configuration: {0}")]
    Config(String),
    #[error("no candidate reaches the accuracy floor {floor}")]
    NoCandidate { floor: f64 },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    /// At most 30.
    pub max_prune_iters: usize,
    /// Filters removed from each pruned layer per iteration.
    pub filters_per_iter: usize,
    /// No layer is pruned below this many filters.
    pub min_filters: usize,
    /// Learnable-reduction targets tried for projection, each in `[0, 0.9]`.
    pub target_reductions: Vec<f64>,
    /// How many of the smallest pruned models are projected.
    pub projection_candidates: usize,
    pub min_bits: u32,
    pub max_bits: u32,
    pub accuracy_floor: f64,
    /// Largest tolerated accuracy drop from quantization.
    pub stability_margin: f64,
    pub fine_tune_epochs: usize,
    pub projection_fine_tune_epochs: usize,
    /// Training segments used for PCA and activation-range calibration.
    pub calibration_samples: usize,
    /// Recipe for every fine-tuning run; `max_epochs` is overridden.
    pub train: TrainConfig,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            max_prune_iters: 30,
            filters_per_iter: 2,
            min_filters: 10,
            target_reductions: vec![0.3, 0.6, 0.9],
            projection_candidates: 4,
            min_bits: 2,
            max_bits: 8,
            accuracy_floor: 0.99,
            stability_margin: 0.01,
            fine_tune_epochs: 2,
            projection_fine_tune_epochs: 5,
            calibration_samples: 512,
            train: TrainConfig::default(),
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), CompressionError> {
        let fail = |m: String| Err(CompressionError::Config(m));
        if self.max_prune_iters > 30 {
            return fail(format!(
                "max_prune_iters {} exceeds 30",
                self.max_prune_iters
            ));
        }
        if self.filters_per_iter == 0 || self.min_filters == 0 {
            return fail("filters_per_iter and min_filters must be at least 1".into());
        }
        if let Some(t) = self
            .target_reductions
            .iter()
            .find(|t| !(0.0..=0.9).contains(*t))
        {
            return fail(format!("target reduction {t} outside [0, 0.9]"));
        }
        if !(2..=8).contains(&self.min_bits)
            || !(2..=8).contains(&self.max_bits)
            || self.min_bits > self.max_bits
        {
            return fail(format!(
                "bit range {}..={} must lie in 2..=8",
                self.min_bits, self.max_bits
            ));
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor)
            || !(0.0..=1.0).contains(&self.stability_margin)
        {
            return fail("accuracy_floor and stability_margin must be fractions".into());
        }
        if self.calibration_samples == 0 {
            return fail("calibration_samples must be positive".into());
        }
        self.train.validate()?;
        Ok(())
    }

    pub(crate) fn fine_tune(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs.max(1),
            ..self.train
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Original,
    Pruned,
    Projected,
    Quantized,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Original => "original",
            Stage::Pruned => "pruned",
            Stage::Projected => "projected",
            Stage::Quantized => "quantized",
        }
    }
}

/// One evaluated model. `bits` is 32 for real-valued models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate: usize,
    pub stage: Stage,
    pub prune_iter: usize,
    pub projection_rate: Option<f64>,
    pub bits: u32,
    pub learnables: usize,
    pub memory_bytes: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub records: Vec<CandidateRecord>,
    pub warnings: Vec<String>,
    pub selected_candidate: Option<usize>,
    pub selected_bits: Option<u32>,
    pub unstable: bool,
}

impl CompressionReport {
    /// CSV with one row per record, optionally preceded by a `# comment`
    /// line.
    pub fn write_csv<W: Write>(
        &self,
        comment: Option<&str>,
        mut out: W,
    ) -> Result<(), CompressionError> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "candidate",
            "stage",
            "iter",
            "projection_rate",
            "learnables",
            "bytes",
            "bits",
            "accuracy",
            "val_accuracy",
            "flags",
        ])?;
        for r in &self.records {
            w.write_record([
                r.candidate.to_string(),
                r.stage.as_str().to_string(),
                r.prune_iter.to_string(),
                r.projection_rate.map(|p| p.to_string()).unwrap_or_default(),
                r.learnables.to_string(),
                r.memory_bytes.to_string(),
                r.bits.to_string(),
                format!("{:.6}", r.test_accuracy),
                format!("{:.6}", r.val_accuracy),
                r.flags.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CompressionError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
