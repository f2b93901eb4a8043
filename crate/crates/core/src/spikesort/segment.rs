//! 66-sample segments: decimated channel-selection windows and
//! threshold-detected, peak-aligned event windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fxp::{dequantize, quantize_slice, FxValue, QFormat};
use crate::model::{Dataset, SEGMENT_LEN};

use super::recording::Recording;
use super::SpikeError;

/// Position of the negative peak inside a detected window.
pub const PEAK_OFFSET: usize = 20;

pub const LABEL_SPIKE: usize = 0;
pub const LABEL_ARTEFACT: usize = 1;
pub const LABEL_NOISE: usize = 2;
pub const LABEL_NEURAL: usize = 0;
pub const LABEL_NON_NEURAL: usize = 1;

/// Label vocabulary of a segment set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    /// Channel selection: neural (0) or non-neural (1).
    Activity,
    /// Artefact removal: spike (0), artefact (1) or noise (2).
    Event,
}

impl SegmentLabel {
    pub fn class_count(self) -> usize {
        match self {
            SegmentLabel::Activity => 2,
            SegmentLabel::Event => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Samples in the 10-bit input format.
    pub samples: Vec<FxValue>,
    pub channel: usize,
    /// First recording sample covered by the window.
    pub origin: usize,
    pub label: Option<usize>,
}

impl Segment {
    pub fn from_real(values: &[f64], channel: usize, origin: usize) -> Self {
        Self {
            samples: quantize_slice(values, QFormat::sample()),
            channel,
            origin,
            label: None,
        }
    }

    pub fn real(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| dequantize(v)).collect()
    }

    /// Recording index of the aligned peak of a detected window.
    pub fn peak(&self) -> usize {
        self.origin + PEAK_OFFSET
    }
}

/// Labelled segments as a training set; unlabelled segments are skipped.
pub fn to_dataset(segments: &[Segment], class_count: usize) -> Dataset {
    let mut data = Dataset::new(class_count);
    for s in segments {
        if let Some(l) = s.label {
            data.push(s.real(), l);
        }
    }
    data
}

/// Reduces a window by `factor`: a 3-tap moving average (clamped at the
/// window edges) sampled every `factor` samples. `factor == 1` is the
/// identity.
pub fn decimate(window: &[f64], factor: usize) -> Vec<f64> {
    if factor <= 1 {
        return window.to_vec();
    }
    let n = window.len();
    (0..n / factor)
        .map(|i| {
            let c = i * factor;
            let prev = window[c.saturating_sub(1)];
            let next = window[(c + 1).min(n - 1)];
            (prev + window[c] + next) / 3.0
        })
        .collect()
}

/// Non-overlapping `window`-sample windows of one channel, each decimated by
/// `downsample`. A window is neural when a neuron spike peak falls inside
/// it. The tail shorter than a window is dropped.
pub fn segment_for_channel_selection(
    rec: &Recording,
    channel: usize,
    window: usize,
    downsample: usize,
) -> Result<Vec<Segment>, SpikeError> {
    if downsample == 0 || window == 0 || window % downsample != 0 {
        return Err(SpikeError::Config(format!(
            "window {window} is not a positive multiple of downsample {downsample}"
        )));
    }
    let x = rec.channel_f64(channel);
    let spikes: Vec<usize> = rec.spikes(channel).map(|e| e.time_index).collect();
    let mut out = Vec::with_capacity(x.len() / window);
    for start in (0..x.len() / window).map(|i| i * window) {
        let values = decimate(&x[start..start + window], downsample);
        let neural = spikes.iter().any(|&t| t >= start && t < start + window);
        let mut seg = Segment::from_real(&values, channel, start);
        seg.label = Some(if neural {
            LABEL_NEURAL
        } else {
            LABEL_NON_NEURAL
        });
        out.push(seg);
    }
    Ok(out)
}

/// Labelled channel-selection windows from every channel.
pub fn channel_selection_dataset(
    rec: &Recording,
    window: usize,
    downsample: usize,
) -> Result<Vec<Segment>, SpikeError> {
    let mut out = Vec::new();
    for c in 0..rec.channel_count() {
        out.extend(segment_for_channel_selection(rec, c, window, downsample)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Threshold in units of the robust noise estimate.
    pub threshold: f64,
    /// Crossings within this many samples of a detection are ignored.
    pub refractory: usize,
    /// The peak is searched this many samples from the crossing.
    pub peak_search: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            refractory: SEGMENT_LEN,
            peak_search: 16,
        }
    }
}

/// Robust noise estimate `median(|x|) / 0.6745`.
pub fn noise_estimate(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        (abs[n / 2 - 1] + abs[n / 2]) / 2.0
    };
    median / 0.6745
}

/// Negative threshold crossings of one channel, each returned as a window
/// whose sample `PEAK_OFFSET` is the local minimum following the crossing.
pub fn detect_events(rec: &Recording, channel: usize, cfg: &DetectConfig) -> Vec<Segment> {
    let x = rec.channel_f64(channel);
    let thr = cfg.threshold * noise_estimate(&x);
    let mut out = Vec::new();
    if !(thr > 0.0) {
        return out;
    }
    let mut next_allowed = 0usize;
    for t in 1..x.len() {
        if t < next_allowed || !(x[t] < -thr && x[t - 1] >= -thr) {
            continue;
        }
        let end = (t + cfg.peak_search).min(x.len());
        let peak = argmin(&x[t..end]) + t;
        next_allowed = t + cfg.refractory;
        if peak < PEAK_OFFSET || peak - PEAK_OFFSET + SEGMENT_LEN > x.len() {
            continue;
        }
        let start = peak - PEAK_OFFSET;
        out.push(Segment::from_real(
            &x[start..start + SEGMENT_LEN],
            channel,
            start,
        ));
    }
    out
}

fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[best] {
            best = i;
        }
    }
    best
}

/// Labels detected windows against ground truth: the nearest event within
/// `tolerance` samples of the peak decides spike or artefact; anything else
/// is noise.
pub fn label_detections(rec: &Recording, segments: &mut [Segment], tolerance: usize) {
    for s in segments.iter_mut() {
        let peak = s.peak();
        let nearest = rec.ground_truth[s.channel]
            .iter()
            .filter(|e| e.time_index.abs_diff(peak) <= tolerance)
            .min_by_key(|e| e.time_index.abs_diff(peak));
        s.label = Some(match nearest {
            Some(e) if e.is_artefact => LABEL_ARTEFACT,
            Some(_) => LABEL_SPIKE,
            None => LABEL_NOISE,
        });
    }
}

/// Peak-aligned training windows for artefact removal: one per ground-truth
/// event plus `noise_per_event × events` background windows aligned to a
/// local minimum away from any event.
pub fn artefact_dataset(rec: &Recording, noise_per_event: f64, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..rec.channel_count() {
        let x = rec.channel_f64(c);
        if x.len() < SEGMENT_LEN + PEAK_OFFSET {
            continue;
        }
        let events = &rec.ground_truth[c];
        let window_at = |peak: usize| -> Option<usize> {
            (peak >= PEAK_OFFSET && peak - PEAK_OFFSET + SEGMENT_LEN <= x.len())
                .then(|| peak - PEAK_OFFSET)
        };
        for e in events {
            let lo = e.time_index.saturating_sub(3);
            let hi = (e.time_index + 4).min(x.len());
            let peak = argmin(&x[lo..hi]) + lo;
            if let Some(start) = window_at(peak) {
                let mut seg = Segment::from_real(&x[start..start + SEGMENT_LEN], c, start);
                seg.label = Some(if e.is_artefact {
                    LABEL_ARTEFACT
                } else {
                    LABEL_SPIKE
                });
                out.push(seg);
            }
        }
        let wanted = (events.len() as f64 * noise_per_event).round() as usize;
        let wanted = if events.is_empty() {
            (x.len() / (4 * SEGMENT_LEN)).min(200)
        } else {
            wanted
        };
        let mut made = 0;
        let mut tries = 0;
        while made < wanted && tries < 50 * wanted.max(1) {
            tries += 1;
            let p = rng.random_range(PEAK_OFFSET..x.len() - SEGMENT_LEN);
            let end = (p + 16).min(x.len());
            let peak = argmin(&x[p..end]) + p;
            let clear = events
                .iter()
                .all(|e| e.time_index.abs_diff(peak) > SEGMENT_LEN);
            if let (true, Some(start)) = (clear, window_at(peak)) {
                let mut seg = Segment::from_real(&x[start..start + SEGMENT_LEN], c, start);
                seg.label = Some(LABEL_NOISE);
                out.push(seg);
                made += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikesort::recording::{GroundTruthEvent, SYNTH_SAMPLE_RATE};

    fn flat(len: usize, events: Vec<GroundTruthEvent>) -> Recording {
        Recording {
            sample_rate: SYNTH_SAMPLE_RATE,
            noise_sigma: 0.0,
            samples: vec![vec![0.0; len]],
            ground_truth: vec![events],
        }
    }

    #[test]
    fn ten_windows_from_6600_samples() {
        let rec = flat(6600 + 123, vec![]);
        let segs = segment_for_channel_selection(&rec, 0, 660, 10).unwrap();
        assert_eq!(segs.len(), 10);
        assert!(segs
            .iter()
            .all(|s| s.samples.len() == 66 && s.label == Some(LABEL_NON_NEURAL)));
    }

    #[test]
    fn one_spike_makes_window_neural() {
        let spike = GroundTruthEvent {
            time_index: 700,
            class_id: 1,
            is_artefact: false,
        };
        let artefact = GroundTruthEvent {
            time_index: 1400,
            class_id: 0,
            is_artefact: true,
        };
        let rec = flat(1980, vec![spike, artefact]);
        let labels: Vec<_> = segment_for_channel_selection(&rec, 0, 660, 10)
            .unwrap()
            .iter()
            .map(|s| s.label.unwrap())
            .collect();
        assert_eq!(
            labels,
            vec![LABEL_NON_NEURAL, LABEL_NEURAL, LABEL_NON_NEURAL]
        );
    }

    #[test]
    fn decimation_matches_stride_pick_of_smoothed_signal() {
        let x: Vec<f64> = (0..660)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 64.0)
            .collect();
        let smooth: Vec<f64> = (0..660)
            .map(|i| {
                let a = if i == 0 { x[0] } else { x[i - 1] };
                let b = if i == 659 { x[659] } else { x[i + 1] };
                (a + x[i] + b) / 3.0
            })
            .collect();
        let oracle: Vec<f64> = smooth.iter().step_by(10).copied().collect();
        assert_eq!(decimate(&x, 10), oracle);
        assert_eq!(decimate(&x, 1), x);
    }

    #[test]
    fn empty_signal_has_no_detections() {
        let rec = flat(1000, vec![]);
        assert!(detect_events(&rec, 0, &DetectConfig::default()).is_empty());
        let empty = flat(0, vec![]);
        assert!(detect_events(&empty, 0, &DetectConfig::default()).is_empty());
    }

    #[test]
    fn robust_noise_estimate_of_symmetric_values() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!((noise_estimate(&x) - 1.0 / 0.6745).abs() < 1e-12);
    }
}
