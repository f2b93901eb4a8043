//! Deep spike detection harness: recordings, synthetic data, detection,
//! the two-CNN front end, PCA + K-means sorting and the CAcc metric.

pub mod convert;
pub mod corpus;
pub mod metrics;
pub mod recording;
pub mod segment;
pub mod sort;
pub mod synth;

use thiserror::Error;

pub use convert::{convert_wave_clus, sigma_from_name, WaveClusImport};
pub use corpus::{artefact_training_set, channel_training_set, CorpusConfig};
pub use metrics::{
    compute_cacc, downscale_factor, downscale_power, write_table_v, SortingMetrics, TableVRow,
};
pub use recording::{ingest_recording, GroundTruthEvent, Manifest, Recording, SYNTH_SAMPLE_RATE};
pub use segment::{
    artefact_dataset, channel_selection_dataset, decimate, detect_events, label_detections,
    noise_estimate, segment_for_channel_selection, to_dataset, DetectConfig, Segment, SegmentLabel,
    LABEL_ARTEFACT, LABEL_NEURAL, LABEL_NOISE, LABEL_NON_NEURAL, LABEL_SPIKE, PEAK_OFFSET,
};
pub use sort::{
    channel_select, cluster_segments, kmeans_cluster, neural_window_counts, pca_project,
    remove_artefacts, sort_recording, ChannelOutcome, KMeansResult, PcaResult, SortConfig,
    SortOutcome, SortedSpike, KMEANS_MAX_ITERS, KMEANS_RESTARTS,
};
pub use synth::{
    generate_synthetic, trough_index, ChannelKind, SynthConfig, TemplateBank, TEMPLATE_LEN,
};

#[derive(Debug, Error)]
pub enum SpikeError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("channel {channel}: sample file has {bytes} bytes, not a multiple of 4")]
    Truncated { channel: usize, bytes: usize },
    #[error(
        "channel {channel}: spike time {time} at position {position} is not after its predecessor"
    )]
    NonMonotonic {
        channel: usize,
        position: usize,
        time: usize,
    },
    #[error("channel {channel}: spike time {time} outside {len} samples")]
    OutOfRange {
        channel: usize,
        time: usize,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no truly detected spikes; CAcc undefined")]
    NoDetections,
    #[error("parse error in {file} line {line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
