//! Multi-channel recordings and their on-disk container: one little-endian
//! `f32` file per channel plus `manifest.json` with the ground truth.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fxp::{quantize_slice, FxValue, QFormat};

use super::SpikeError;

/// 66 samples span 2.5 ms.
pub const SYNTH_SAMPLE_RATE: f64 = 26_400.0;

const MANIFEST: &str = "manifest.json";
const FORMAT_TAG: &str = "dsd-recording/1";

/// One labelled event. `time_index` is the sample of the negative peak.
/// Neurons use `class_id` 1..=3; artefacts carry `is_artefact` and class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub time_index: usize,
    pub class_id: u8,
    pub is_artefact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub sample_rate: f64,
    pub noise_sigma: f64,
    pub samples: Vec<Vec<f32>>,
    pub ground_truth: Vec<Vec<GroundTruthEvent>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    pub sigma_n: f64,
    pub spike_times: Vec<Vec<usize>>,
    pub class_ids: Vec<Vec<u8>>,
    pub artefact_flags: Vec<Vec<bool>>,
}

impl Recording {
    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self, channel: usize) -> usize {
        self.samples[channel].len()
    }

    pub fn channel_f64(&self, channel: usize) -> Vec<f64> {
        self.samples[channel].iter().map(|&v| v as f64).collect()
    }

    /// Samples of one channel in the 10-bit Q10.7 input format.
    pub fn channel_fixed(&self, channel: usize) -> Vec<FxValue> {
        quantize_slice(&self.channel_f64(channel), QFormat::sample())
    }

    /// Ground-truth neuron spikes (artefacts excluded) on one channel.
    pub fn spikes(&self, channel: usize) -> impl Iterator<Item = &GroundTruthEvent> {
        self.ground_truth[channel].iter().filter(|e| !e.is_artefact)
    }

    pub fn spike_count(&self) -> usize {
        (0..self.channel_count())
            .map(|c| self.spikes(c).count())
            .sum()
    }

    pub fn artefact_count(&self) -> usize {
        self.ground_truth
            .iter()
            .flatten()
            .filter(|e| e.is_artefact)
            .count()
    }

    /// Distinct neuron class ids over all channels.
    pub fn spike_classes(&self) -> BTreeSet<u8> {
        (0..self.channel_count())
            .flat_map(|c| self.spikes(c).map(|e| e.class_id))
            .collect()
    }

    /// Whether a channel carries at least one neuron spike.
    pub fn is_active(&self, channel: usize) -> bool {
        self.spikes(channel).next().is_some()
    }

    pub fn validate(&self) -> Result<(), SpikeError> {
        if !(self.sample_rate > 0.0) {
            return Err(SpikeError::Manifest(format!(
                "sample_rate {} must be positive",
                self.sample_rate
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SpikeError::Manifest(format!(
                "sigma_n {} must be non-negative",
                self.noise_sigma
            )));
        }
        if self.samples.len() != self.ground_truth.len() {
            return Err(SpikeError::Manifest(format!(
                "{} sample channels but {} ground-truth channels",
                self.samples.len(),
                self.ground_truth.len()
            )));
        }
        for (c, events) in self.ground_truth.iter().enumerate() {
            let len = self.samples[c].len();
            for (i, e) in events.iter().enumerate() {
                if i > 0 && e.time_index <= events[i - 1].time_index {
                    return Err(SpikeError::NonMonotonic {
                        channel: c,
                        position: i,
                        time: e.time_index,
                    });
                }
                if e.time_index >= len {
                    return Err(SpikeError::OutOfRange {
                        channel: c,
                        time: e.time_index,
                        len,
                    });
                }
                let class_ok = if e.is_artefact {
                    e.class_id == 0
                } else {
                    (1..=3).contains(&e.class_id)
                };
                if !class_ok {
                    return Err(SpikeError::Manifest(format!(
                        "channel {c}: event {i} has class id {} (artefact = {})",
                        e.class_id, e.is_artefact
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT_TAG.to_string(),
            sample_rate: self.sample_rate,
            channels: (0..self.channel_count())
                .map(|c| format!("ch{c:03}.f32"))
                .collect(),
            sigma_n: self.noise_sigma,
            spike_times: self
                .ground_truth
                .iter()
                .map(|ev| ev.iter().map(|e| e.time_index).collect())
                .collect(),
            class_ids: self
                .ground_truth
                .iter()
                .map(|ev| ev.iter().map(|e| e.class_id).collect())
                .collect(),
            artefact_flags: self
                .ground_truth
                .iter()
                .map(|ev| ev.iter().map(|e| e.is_artefact).collect())
                .collect(),
        }
    }

    /// Writes the container into `dir`, creating it if needed.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<(), SpikeError> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (file, samples) in manifest.channels.iter().zip(&self.samples) {
            let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(file), bytes)?;
        }
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Reads a recording container written by [`Recording::export`] or the
/// dataset converter.
pub fn ingest_recording(dir: impl AsRef<Path>) -> Result<Recording, SpikeError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| SpikeError::Manifest(e.to_string()))?;
    if m.format != FORMAT_TAG {
        return Err(SpikeError::Manifest(format!(
            "unknown format tag {:?}",
            m.format
        )));
    }
    let n = m.channels.len();
    for (name, len) in [
        ("spike_times", m.spike_times.len()),
        ("class_ids", m.class_ids.len()),
        ("artefact_flags", m.artefact_flags.len()),
    ] {
        if len != n {
            return Err(SpikeError::Manifest(format!(
                "{name} has {len} channels, expected {n}"
            )));
        }
    }
    let mut samples = Vec::with_capacity(n);
    let mut ground_truth = Vec::with_capacity(n);
    for c in 0..n {
        let bytes = fs::read(dir.join(&m.channels[c]))?;
        if bytes.len() % 4 != 0 {
            return Err(SpikeError::Truncated {
                channel: c,
                bytes: bytes.len(),
            });
        }
        samples.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect::<Vec<f32>>(),
        );
        let (t, k, a) = (&m.spike_times[c], &m.class_ids[c], &m.artefact_flags[c]);
        if t.len() != k.len() || t.len() != a.len() {
            return Err(SpikeError::Manifest(format!(
                "channel {c}: {} spike times, {} class ids, {} artefact flags",
                t.len(),
                k.len(),
                a.len()
            )));
        }
        ground_truth.push(
            (0..t.len())
                .map(|i| GroundTruthEvent {
                    time_index: t[i],
                    class_id: k[i],
                    is_artefact: a[i],
                })
                .collect(),
        );
    }
    let rec = Recording {
        sample_rate: m.sample_rate,
        noise_sigma: m.sigma_n,
        samples,
        ground_truth,
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Recording {
        Recording {
            sample_rate: SYNTH_SAMPLE_RATE,
            noise_sigma: 0.05,
            samples: vec![vec![0.25, -1.5, f32::MIN_POSITIVE, 3.0e-7], vec![0.0; 3]],
            ground_truth: vec![
                vec![
                    GroundTruthEvent {
                        time_index: 1,
                        class_id: 2,
                        is_artefact: false,
                    },
                    GroundTruthEvent {
                        time_index: 3,
                        class_id: 0,
                        is_artefact: true,
                    },
                ],
                vec![],
            ],
        }
    }

    #[test]
    fn export_ingest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny();
        rec.export(dir.path()).unwrap();
        let back = ingest_recording(dir.path()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.spike_count(), 1);
        assert_eq!(back.artefact_count(), 1);
    }

    #[test]
    fn truncated_sample_file() {
        let dir = tempfile::tempdir().unwrap();
        tiny().export(dir.path()).unwrap();
        fs::write(dir.path().join("ch001.f32"), [0u8; 7]).unwrap();
        assert!(matches!(
            ingest_recording(dir.path()),
            Err(SpikeError::Truncated {
                channel: 1,
                bytes: 7
            })
        ));
    }

    #[test]
    fn non_monotonic_times_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny();
        rec.export(dir.path()).unwrap();
        let mut m = rec.manifest();
        m.spike_times[0] = vec![3, 1];
        fs::write(
            dir.path().join(MANIFEST),
            serde_json::to_string(&m).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            ingest_recording(dir.path()),
            Err(SpikeError::NonMonotonic {
                channel: 0,
                position: 1,
                ..
            })
        ));
    }

    #[test]
    fn malformed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "{\"format\": 3}").unwrap();
        assert!(matches!(
            ingest_recording(dir.path()),
            Err(SpikeError::Manifest(_))
        ));
    }
}
