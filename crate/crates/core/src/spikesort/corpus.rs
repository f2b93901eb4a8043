//! The built-in synthetic corpus used for training, compression and the
//! end-to-end sorting runs. Everything is regenerated from a seed.

use serde::{Deserialize, Serialize};

use crate::model::Dataset;

use super::segment::{artefact_dataset, channel_selection_dataset, to_dataset};
use super::synth::{generate_synthetic, ChannelKind, SynthConfig, TemplateBank};
use super::{Recording, SpikeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub bank: String,
    pub duration_s: f64,
    pub sigma_n: f64,
    pub artefact_rate_hz: f64,
    pub channels: Vec<ChannelKind>,
    /// Background windows drawn per labelled event.
    pub noise_per_event: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            bank: "easy1".into(),
            duration_s: 120.0,
            sigma_n: 0.05,
            artefact_rate_hz: 30.0,
            channels: vec![ChannelKind::Active],
            noise_per_event: 0.4,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    /// A multi-channel layout for channel selection: active and silent
    /// channels alternate.
    pub fn channel_selection(seed: u64) -> Self {
        Self {
            duration_s: 60.0,
            channels: (0..8)
                .map(|c| {
                    if c % 2 == 0 {
                        ChannelKind::Active
                    } else {
                        ChannelKind::Silent
                    }
                })
                .collect(),
            seed,
            ..Self::default()
        }
    }

    pub fn recording(&self) -> Result<Recording, SpikeError> {
        let bank = TemplateBank::named(&self.bank)
            .ok_or_else(|| SpikeError::Config(format!("unknown template bank {:?}", self.bank)))?;
        let cfg = SynthConfig {
            duration_s: self.duration_s,
            sigma_n: self.sigma_n,
            artefact_rate_hz: self.artefact_rate_hz,
            channels: self.channels.clone(),
            seed: self.seed,
            ..SynthConfig::default()
        };
        generate_synthetic(&bank, &cfg)
    }
}

/// Class-balanced spike / artefact / noise segments of `rec`.
pub fn artefact_training_set(rec: &Recording, noise_per_event: f64, seed: u64) -> Dataset {
    to_dataset(&artefact_dataset(rec, noise_per_event, seed), 3).balanced()
}

/// Class-balanced neural / non-neural channel-selection windows of `rec`.
pub fn channel_training_set(
    rec: &Recording,
    window: usize,
    downsample: usize,
) -> Result<Dataset, SpikeError> {
    Ok(to_dataset(&channel_selection_dataset(rec, window, downsample)?, 2).balanced())
}
