//! Synthetic extracellular recordings in the style of the Wave_Clus
//! simulations: three neurons over a background of many small, randomly
//! scaled library waveforms, plus attenuated and truncated artefacts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::recording::{GroundTruthEvent, Recording, SYNTH_SAMPLE_RATE};
use super::SpikeError;

/// Samples per template.
pub const TEMPLATE_LEN: usize = 48;

/// A template is a sum of Gaussian bumps: a negative trough at `TROUGH_AT`
/// plus optional positive phases before and after it.
#[derive(Debug, Clone, Copy)]
struct Shape {
    depth: f64,
    width: f64,
    pre: (f64, f64, f64),
    post: (f64, f64, f64),
}

const TROUGH_AT: f64 = 16.0;

impl Shape {
    const fn new(depth: f64, width: f64, pre: (f64, f64, f64), post: (f64, f64, f64)) -> Self {
        Self {
            depth,
            width,
            pre,
            post,
        }
    }

    fn render(&self) -> Vec<f64> {
        let bump = |t: f64, amp: f64, at: f64, s: f64| {
            if amp == 0.0 {
                0.0
            } else {
                amp * (-(t - at).powi(2) / (2.0 * s * s)).exp()
            }
        };
        (0..TEMPLATE_LEN)
            .map(|i| {
                let t = i as f64;
                -bump(t, self.depth, TROUGH_AT, self.width)
                    + bump(t, self.pre.0, TROUGH_AT - self.pre.1, self.pre.2)
                    + bump(t, self.post.0, TROUGH_AT + self.post.1, self.post.2)
            })
            .collect()
    }
}

const EASY1: [Shape; 3] = [
    Shape::new(1.0, 2.5, (0.0, 0.0, 1.0), (0.35, 9.0, 5.0)),
    Shape::new(0.75, 4.0, (0.0, 0.0, 1.0), (0.55, 12.0, 7.0)),
    Shape::new(1.2, 2.0, (0.3, 7.0, 3.0), (0.2, 7.0, 4.0)),
];
const EASY2: [Shape; 3] = [
    Shape::new(0.9, 3.0, (0.0, 0.0, 1.0), (0.4, 10.0, 5.0)),
    Shape::new(1.1, 2.2, (0.2, 6.0, 2.5), (0.15, 8.0, 4.0)),
    Shape::new(0.7, 4.5, (0.0, 0.0, 1.0), (0.6, 13.0, 7.0)),
];
const DIFFICULT1: [Shape; 3] = [
    Shape::new(1.0, 2.8, (0.0, 0.0, 1.0), (0.35, 9.0, 5.0)),
    Shape::new(0.9, 3.2, (0.0, 0.0, 1.0), (0.4, 10.0, 5.5)),
    Shape::new(1.05, 2.5, (0.1, 6.0, 3.0), (0.3, 8.0, 5.0)),
];
const DIFFICULT2: [Shape; 3] = [
    Shape::new(0.95, 3.0, (0.0, 0.0, 1.0), (0.45, 10.0, 6.0)),
    Shape::new(0.85, 3.0, (0.0, 0.0, 1.0), (0.45, 11.0, 6.0)),
    Shape::new(1.0, 2.6, (0.0, 0.0, 1.0), (0.35, 9.5, 5.5)),
];
const LIBRARY: [Shape; 6] = [
    Shape::new(0.8, 3.5, (0.0, 0.0, 1.0), (0.3, 10.0, 6.0)),
    Shape::new(1.0, 2.0, (0.25, 5.0, 2.0), (0.1, 6.0, 3.0)),
    Shape::new(0.6, 5.0, (0.0, 0.0, 1.0), (0.5, 14.0, 8.0)),
    Shape::new(0.9, 3.0, (0.15, 8.0, 4.0), (0.45, 9.0, 4.0)),
    Shape::new(1.1, 2.3, (0.0, 0.0, 1.0), (0.25, 8.0, 6.0)),
    Shape::new(0.7, 4.0, (0.3, 9.0, 5.0), (0.2, 12.0, 6.0)),
];

/// Neuron templates (the first three are sorted) plus extra library
/// waveforms used for the background and for artefacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub neurons: Vec<Vec<f64>>,
    pub library: Vec<Vec<f64>>,
}

impl TemplateBank {
    pub const NAMES: [&'static str; 4] = ["easy1", "easy2", "difficult1", "difficult2"];

    /// A built-in bank: `easy1`, `easy2`, `difficult1` or `difficult2`.
    pub fn named(name: &str) -> Option<Self> {
        let shapes = match name.to_ascii_lowercase().as_str() {
            "easy1" => EASY1,
            "easy2" => EASY2,
            "difficult1" => DIFFICULT1,
            "difficult2" => DIFFICULT2,
            _ => return None,
        };
        Some(Self {
            neurons: shapes.iter().map(Shape::render).collect(),
            library: LIBRARY.iter().map(Shape::render).collect(),
        })
    }

    pub fn easy1() -> Self {
        Self::named("easy1").expect("built-in bank")
    }

    /// All waveforms the background and artefacts draw from.
    pub fn all(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.neurons.iter().chain(&self.library)
    }

    fn validate(&self) -> Result<(), SpikeError> {
        if self.neurons.len() < 3 {
            return Err(SpikeError::Config(format!(
                "need at least 3 neuron templates, got {}",
                self.neurons.len()
            )));
        }
        if self
            .all()
            .any(|t| t.is_empty() || t.iter().any(|v| !v.is_finite()))
        {
            return Err(SpikeError::Config(
                "templates must be non-empty and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Index of the negative peak of a waveform.
pub fn trough_index(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in w.iter().enumerate() {
        if v < w[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Neuron spikes, artefacts and background.
    Active,
    /// Background only.
    Silent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub duration_s: f64,
    pub sigma_n: f64,
    /// Firing rate of each of the three neurons.
    pub spike_rate_hz: f64,
    pub artefact_rate_hz: f64,
    /// Minimum distance between consecutive event troughs, in samples.
    pub min_gap: usize,
    /// Relative standard deviation of spike amplitudes.
    pub amplitude_jitter: f64,
    /// Background waveforms per sample.
    pub background_rate: f64,
    /// Artefact gain is drawn uniformly from this range.
    pub artefact_gain: (f64, f64),
    pub channels: Vec<ChannelKind>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: SYNTH_SAMPLE_RATE,
            duration_s: 10.0,
            sigma_n: 0.05,
            spike_rate_hz: 20.0,
            artefact_rate_hz: 10.0,
            min_gap: 80,
            amplitude_jitter: 0.05,
            background_rate: 0.3,
            artefact_gain: (0.5, 0.7),
            channels: vec![ChannelKind::Active],
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SpikeError> {
        let ok = self.sample_rate > 0.0
            && self.duration_s > 0.0
            && self.sigma_n >= 0.0
            && self.spike_rate_hz >= 0.0
            && self.artefact_rate_hz >= 0.0
            && self.amplitude_jitter >= 0.0
            && self.background_rate > 0.0
            && self.artefact_gain.0 > 0.0
            && self.artefact_gain.0 <= self.artefact_gain.1
            && !self.channels.is_empty();
        if !ok {
            return Err(SpikeError::Config(format!(
                "invalid synthesis parameters {self:?}"
            )));
        }
        let load = self.event_rate() * self.min_gap as f64 / self.sample_rate;
        if load >= 0.5 {
            return Err(SpikeError::Config(format!(
                "event rate {:.1} Hz with a {}-sample minimum gap exceeds capacity (load {load:.2} >= 0.5)",
                self.event_rate(),
                self.min_gap
            )));
        }
        Ok(())
    }

    fn event_rate(&self) -> f64 {
        3.0 * self.spike_rate_hz + self.artefact_rate_hz
    }
}

/// Generates a recording; identical inputs give bit-identical output.
pub fn generate_synthetic(bank: &TemplateBank, cfg: &SynthConfig) -> Result<Recording, SpikeError> {
    bank.validate()?;
    cfg.validate()?;
    let len = (cfg.duration_s * cfg.sample_rate).round() as usize;
    let mut samples = Vec::with_capacity(cfg.channels.len());
    let mut ground_truth = Vec::with_capacity(cfg.channels.len());
    for (c, kind) in cfg.channels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(c as u64);
        let mut x = vec![0.0f64; len];
        add_background(bank, cfg, &mut x, &mut rng);
        let events = match kind {
            ChannelKind::Active => add_events(bank, cfg, &mut x, &mut rng),
            ChannelKind::Silent => Vec::new(),
        };
        samples.push(x.into_iter().map(|v| v as f32).collect());
        ground_truth.push(events);
    }
    let rec = Recording {
        sample_rate: cfg.sample_rate,
        noise_sigma: cfg.sigma_n,
        samples,
        ground_truth,
    };
    rec.validate()?;
    Ok(rec)
}

/// Shot noise: library waveforms at Poisson times with N(0,1) gains, scaled
/// so the stationary standard deviation is `sigma_n`.
fn add_background(bank: &TemplateBank, cfg: &SynthConfig, x: &mut [f64], rng: &mut ChaCha8Rng) {
    if cfg.sigma_n == 0.0 {
        return;
    }
    let pool: Vec<&Vec<f64>> = bank.all().collect();
    let energy = pool
        .iter()
        .map(|t| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / pool.len() as f64;
    let scale = cfg.sigma_n / (cfg.background_rate * energy).sqrt();
    let gap = Exp::new(cfg.background_rate).expect("positive rate");
    let longest = pool.iter().map(|t| t.len()).max().unwrap_or(0) as f64;
    let mut t = -longest;
    loop {
        t += gap.sample(rng);
        if t >= x.len() as f64 {
            break;
        }
        let template = pool[rng.random_range(0..pool.len())];
        let gain: f64 = StandardNormal.sample(rng);
        add_at(x, template, t.floor() as i64, gain * scale);
    }
}

fn add_at(x: &mut [f64], w: &[f64], start: i64, gain: f64) {
    for (i, &v) in w.iter().enumerate() {
        let pos = start + i as i64;
        if pos >= 0 && (pos as usize) < x.len() {
            x[pos as usize] += gain * v;
        }
    }
}

fn add_events(
    bank: &TemplateBank,
    cfg: &SynthConfig,
    x: &mut [f64],
    rng: &mut ChaCha8Rng,
) -> Vec<GroundTruthEvent> {
    let rate = cfg.event_rate();
    if rate == 0.0 {
        return Vec::new();
    }
    let mean_gap = cfg.sample_rate / rate;
    let extra = Exp::new(1.0 / (mean_gap - cfg.min_gap as f64)).expect("capacity checked");
    let jitter = Normal::new(1.0, cfg.amplitude_jitter).expect("finite jitter");
    let spike_share = 3.0 * cfg.spike_rate_hz / rate;
    let margin = bank.all().map(|t| t.len()).max().unwrap_or(0);
    let mut events = Vec::new();
    let mut t = margin as f64 + extra.sample(rng);
    while (t as usize) + margin < x.len() {
        let trough = t as usize;
        if rng.random::<f64>() < spike_share {
            let class = rng.random_range(0..3usize);
            let w = &bank.neurons[class];
            let gain = if cfg.amplitude_jitter == 0.0 {
                1.0
            } else {
                jitter.sample(rng).max(0.5)
            };
            add_at(x, w, trough as i64 - trough_index(w) as i64, gain);
            events.push(GroundTruthEvent {
                time_index: trough,
                class_id: class as u8 + 1,
                is_artefact: false,
            });
        } else {
            let pool: Vec<&Vec<f64>> = bank.all().collect();
            let w = truncate(pool[rng.random_range(0..pool.len())], rng);
            let gain = rng.random_range(cfg.artefact_gain.0..=cfg.artefact_gain.1);
            add_at(x, &w, trough as i64 - trough_index(&w) as i64, gain);
            events.push(GroundTruthEvent {
                time_index: trough,
                class_id: 0,
                is_artefact: true,
            });
        }
        t += cfg.min_gap as f64 + extra.sample(rng);
    }
    events
}

/// An incomplete transition: either the repolarisation phase is cut short
/// or the depolarisation starts abruptly a few samples before the trough.
fn truncate(w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let peak = trough_index(w);
    let mut out = w.to_vec();
    if rng.random_bool(0.5) {
        let cut = peak + rng.random_range(2..=5usize);
        for (i, v) in out.iter_mut().enumerate().skip(cut) {
            *v *= (-((i - cut) as f64) / 1.5).exp();
        }
    } else {
        let onset = peak.saturating_sub(rng.random_range(2..=4usize));
        for (i, v) in out.iter_mut().enumerate().take(peak) {
            if i < onset {
                *v = 0.0;
            } else {
                *v *= (i + 1 - onset) as f64 / (peak + 1 - onset) as f64;
            }
        }
    }
    out
}
