//! Import of the public Wave_Clus simulations.
//!
//! The distribution ships MATLAB files (`C_Easy1_noise005.mat` and similar)
//! holding `data` (one channel at 24 kHz), `spike_times` (1-based onset
//! samples) and `spike_class` (neuron 1..3). Export those three arrays as
//! whitespace- or comma-separated text, e.g. from MATLAB:
//!
//! ```text
//! writematrix(data', 'data.txt'); writematrix(spike_times{1}', 'spike_times.txt');
//! writematrix(spike_class{1}', 'spike_class.txt');
//! ```
//!
//! and convert them into a recording container. Onset times are shifted by
//! `peak_offset` and then snapped to the most negative sample within
//! `align_search` samples so that `time_index` marks the negative peak.
//! Class 0, or a 1 in the optional artefact-flag file, marks an artefact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::recording::{GroundTruthEvent, Recording};
use super::SpikeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveClusImport {
    pub data: PathBuf,
    pub spike_times: PathBuf,
    pub spike_class: PathBuf,
    pub artefact_flags: Option<PathBuf>,
    pub sample_rate: f64,
    /// Taken from a `noise<value>` token in the data file name when `None`.
    pub sigma_n: Option<f64>,
    pub one_based: bool,
    pub peak_offset: i64,
    pub align_search: usize,
}

impl WaveClusImport {
    pub fn new(data: PathBuf, spike_times: PathBuf, spike_class: PathBuf) -> Self {
        Self {
            data,
            spike_times,
            spike_class,
            artefact_flags: None,
            sample_rate: 24_000.0,
            sigma_n: None,
            one_based: true,
            peak_offset: 0,
            align_search: 20,
        }
    }
}

fn read_numbers(path: &Path) -> Result<Vec<f64>, SpikeError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
        {
            let v: f64 = tok.parse().map_err(|_| SpikeError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                detail: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(SpikeError::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    detail: format!("non-finite value {tok:?}"),
                });
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// `0.05` from names such as `C_Easy1_noise0.05` or `C_Easy1_noise005`
/// (Wave_Clus omits the decimal point).
pub fn sigma_from_name(name: &str) -> Option<f64> {
    let lower = name.to_ascii_lowercase();
    let rest = &lower[lower.find("noise")? + 5..];
    let digits: String = rest
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    if digits.contains('.') {
        digits.parse().ok()
    } else if digits.len() > 1 && digits.starts_with('0') {
        format!("0.{}", &digits[1..]).parse().ok()
    } else {
        digits.parse().ok()
    }
}

/// Builds a one-channel recording from text exports.
pub fn convert_wave_clus(import: &WaveClusImport) -> Result<Recording, SpikeError> {
    let data = read_numbers(&import.data)?;
    let times = read_numbers(&import.spike_times)?;
    let classes = read_numbers(&import.spike_class)?;
    let flags = match &import.artefact_flags {
        Some(p) => read_numbers(p)?,
        None => vec![0.0; times.len()],
    };
    if times.len() != classes.len() || times.len() != flags.len() {
        return Err(SpikeError::Manifest(format!(
            "{} spike times, {} classes, {} artefact flags",
            times.len(),
            classes.len(),
            flags.len()
        )));
    }
    let sigma_n = match import.sigma_n {
        Some(s) => s,
        None => import
            .data
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(sigma_from_name)
            .ok_or_else(|| {
                SpikeError::Manifest("sigma_n not given and not found in the file name".into())
            })?,
    };
    let base = if import.one_based { 1 } else { 0 };
    let mut events = Vec::with_capacity(times.len());
    for (i, ((&t, &k), &f)) in times.iter().zip(&classes).zip(&flags).enumerate() {
        if t.fract() != 0.0 || k.fract() != 0.0 || !(0.0..=3.0).contains(&k) {
            return Err(SpikeError::Parse {
                file: import.spike_class.display().to_string(),
                line: i + 1,
                detail: format!(
                    "spike time {t} / class {k} is not an integer time with class 0..=3"
                ),
            });
        }
        let onset = t as i64 - base + import.peak_offset;
        if onset < 0 || onset as usize >= data.len() {
            return Err(SpikeError::OutOfRange {
                channel: 0,
                time: onset.max(0) as usize,
                len: data.len(),
            });
        }
        let onset = onset as usize;
        let lo = onset.saturating_sub(import.align_search);
        let hi = (onset + import.align_search + 1).min(data.len());
        let mut peak = lo;
        for j in lo..hi {
            if data[j] < data[peak] {
                peak = j;
            }
        }
        let artefact = f != 0.0 || k == 0.0;
        events.push(GroundTruthEvent {
            time_index: peak,
            class_id: if artefact { 0 } else { k as u8 },
            is_artefact: artefact,
        });
    }
    events.sort_by_key(|e| e.time_index);
    let before = events.len();
    events.dedup_by_key(|e| e.time_index);
    if events.len() < before {
        log::warn!(
            "{} events share a peak with an earlier event and were dropped",
            before - events.len()
        );
    }
    let rec = Recording {
        sample_rate: import.sample_rate,
        noise_sigma: sigma_n,
        samples: vec![data.iter().map(|&v| v as f32).collect()],
        ground_truth: vec![events],
    };
    rec.validate()?;
    Ok(rec)
}
