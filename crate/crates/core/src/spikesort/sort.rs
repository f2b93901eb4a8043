//! Two-CNN front end followed by PCA features and K-means clustering.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::NetworkModel;

use super::metrics::{compute_cacc, SortingMetrics};
use super::recording::Recording;
use super::segment::{
    detect_events, segment_for_channel_selection, DetectConfig, Segment, LABEL_NEURAL, LABEL_SPIKE,
};
use super::SpikeError;

fn classify(model: &NetworkModel, seg: &Segment) -> Result<usize, SpikeError> {
    Ok(match &model.quant {
        Some(_) => model.classify_fixed(&seg.samples)?,
        None => model.classify(&seg.real())?,
    })
}

/// Number of segments classified as neural, per channel. Every channel
/// present in `segments` gets an entry.
pub fn neural_window_counts(
    cnn1: &NetworkModel,
    segments: &[Segment],
) -> Result<BTreeMap<usize, usize>, SpikeError> {
    let mut counts = BTreeMap::new();
    for s in segments {
        let n = counts.entry(s.channel).or_insert(0);
        if classify(cnn1, s)? == LABEL_NEURAL {
            *n += 1;
        }
    }
    Ok(counts)
}

/// Channels with at least one segment classified as neural.
pub fn channel_select(
    cnn1: &NetworkModel,
    segments: &[Segment],
) -> Result<BTreeSet<usize>, SpikeError> {
    Ok(neural_window_counts(cnn1, segments)?
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .map(|(c, _)| c)
        .collect())
}

/// Splits detected segments into `(kept spikes, discarded)`.
pub fn remove_artefacts(
    cnn2: &NetworkModel,
    segments: Vec<Segment>,
) -> Result<(Vec<Segment>, Vec<Segment>), SpikeError> {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for s in segments {
        if classify(cnn2, &s)? == LABEL_SPIKE {
            kept.push(s);
        } else {
            discarded.push(s);
        }
    }
    Ok((kept, discarded))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, largest variance first.
    pub components: Vec<Vec<f64>>,
    /// Variance (eigenvalue) of each kept component.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub features: Vec<Vec<f64>>,
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order (stable, so equal eigenvalues keep solver order).
pub(crate) fn sorted_eigen(cov: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub(crate) fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Mean-centred projection onto the top `n_components` covariance
/// eigenvectors.
pub fn pca_project(data: &[Vec<f64>], n_components: usize) -> Result<PcaResult, SpikeError> {
    if data.len() < n_components.max(1) {
        return Err(SpikeError::TooFewPoints {
            needed: n_components.max(1),
            got: data.len(),
        });
    }
    let dim = data[0].len();
    if n_components > dim || data.iter().any(|r| r.len() != dim) {
        return Err(SpikeError::Config(format!(
            "cannot take {n_components} components of ragged or {dim}-dimensional data"
        )));
    }
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let centred = DMatrix::from_fn(data.len(), dim, |i, j| data[i][j] - mean[j]);
    let denom = (data.len().max(2) - 1) as f64;
    let cov = (centred.transpose() * &centred) / denom;
    let total_variance = cov.trace();
    let (values, vectors) = sorted_eigen(cov);
    let mut components = Vec::with_capacity(n_components);
    for c in 0..n_components {
        let mut v: Vec<f64> = vectors.column(c).iter().copied().collect();
        orient(&mut v);
        components.push(v);
    }
    let features = (0..data.len())
        .map(|i| {
            components
                .iter()
                .map(|v| (0..dim).map(|j| centred[(i, j)] * v[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        mean,
        explained_variance: values[..n_components].iter().map(|v| v.max(0.0)).collect(),
        components,
        total_variance,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub const KMEANS_MAX_ITERS: usize = 300;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// K-means++ seeding followed by Lloyd iterations until the assignment is
/// unchanged or [`KMEANS_MAX_ITERS`] is reached. Empty clusters keep their
/// previous centroid.
/// Independent k-means++ starts; the lowest final inertia wins.
pub const KMEANS_RESTARTS: u64 = 10;

/// Lloyd's algorithm from k-means++ seeding, restarted
/// [`KMEANS_RESTARTS`] times with seeds derived from `seed`.
pub fn kmeans_cluster(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<KMeansResult, SpikeError> {
    if k == 0 || k > points.len() {
        return Err(SpikeError::TooFewPoints {
            needed: k.max(1),
            got: points.len(),
        });
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..KMEANS_RESTARTS {
        let run = kmeans_once(points, k, seed, r);
        if best.as_ref().is_none_or(|b| run.inertia() < b.inertia()) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_once(points: &[Vec<f64>], k: usize, seed: u64, stream: u64) -> KMeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }

    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            inertia += d;
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    KMeansResult {
        labels,
        centroids,
        inertia_history: history,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortConfig {
    pub channel_window: usize,
    pub channel_downsample: usize,
    /// Neural windows needed to mark a channel active.
    pub min_neural_windows: usize,
    pub detect: DetectConfig,
    pub clusters: usize,
    pub pca_components: usize,
    pub match_tolerance: usize,
    pub seed: u64,
}

impl Default for SortConfig {
    fn default() -> Self {
        Self {
            channel_window: 660,
            channel_downsample: 10,
            min_neural_windows: 1,
            detect: DetectConfig::default(),
            clusters: 3,
            pca_components: 2,
            match_tolerance: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortedSpike {
    pub channel: usize,
    pub time_index: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutcome {
    pub channel: usize,
    pub active: bool,
    pub neural_windows: usize,
    pub detected: usize,
    pub kept: usize,
    pub metrics: SortingMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortOutcome {
    pub channels: Vec<ChannelOutcome>,
    pub spikes: Vec<SortedSpike>,
    /// Counts summed over channels.
    pub metrics: SortingMetrics,
}

impl SortOutcome {
    pub fn active_channels(&self) -> BTreeSet<usize> {
        self.channels
            .iter()
            .filter(|c| c.active)
            .map(|c| c.channel)
            .collect()
    }
}

/// Channel selection with `cnn1`, detection, artefact removal with `cnn2`,
/// then per-channel PCA and K-means, scored against the ground truth.
/// Spikes on channels judged inactive count as missed.
pub fn sort_recording(
    rec: &Recording,
    cnn1: &NetworkModel,
    cnn2: &NetworkModel,
    cfg: &SortConfig,
) -> Result<SortOutcome, SpikeError> {
    let mut channels = Vec::with_capacity(rec.channel_count());
    let mut spikes = Vec::new();
    for c in 0..rec.channel_count() {
        let windows =
            segment_for_channel_selection(rec, c, cfg.channel_window, cfg.channel_downsample)?;
        let neural_windows = neural_window_counts(cnn1, &windows)?
            .get(&c)
            .copied()
            .unwrap_or(0);
        let active = neural_windows >= cfg.min_neural_windows.max(1);
        let truth: Vec<(usize, u8)> = rec.spikes(c).map(|e| (e.time_index, e.class_id)).collect();
        let (detected, kept) = if active {
            let events = detect_events(rec, c, &cfg.detect);
            let n = events.len();
            (n, remove_artefacts(cnn2, events)?.0)
        } else {
            (0, Vec::new())
        };
        let labels = cluster_segments(&kept, cfg)?;
        let predicted: Vec<(usize, usize)> = kept
            .iter()
            .zip(&labels)
            .map(|(s, &l)| (s.peak(), l))
            .collect();
        spikes.extend(predicted.iter().map(|&(t, l)| SortedSpike {
            channel: c,
            time_index: t,
            cluster: l,
        }));
        channels.push(ChannelOutcome {
            channel: c,
            active,
            neural_windows,
            detected,
            kept: kept.len(),
            metrics: compute_cacc(&predicted, &truth, cfg.match_tolerance)?,
        });
    }
    let metrics = SortingMetrics::merge(&channels.iter().map(|c| c.metrics).collect::<Vec<_>>());
    Ok(SortOutcome {
        channels,
        spikes,
        metrics,
    })
}

/// PCA features of the kept segments clustered with K-means; fewer
/// segments than clusters or components get one cluster each.
pub fn cluster_segments(kept: &[Segment], cfg: &SortConfig) -> Result<Vec<usize>, SpikeError> {
    if kept.len() <= cfg.clusters.max(cfg.pca_components) {
        return Ok((0..kept.len()).collect());
    }
    let data: Vec<Vec<f64>> = kept.iter().map(|s| s.real()).collect();
    let pca = pca_project(&data, cfg.pca_components)?;
    Ok(kmeans_cluster(&pca.features, cfg.clusters, cfg.seed)?.labels)
}
