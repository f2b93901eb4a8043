use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

mod common;

use common::{oracle_cacc, scenario};
use dsd_core::model::{FcParams, Layer, LayerSpec, NetworkModel, SEGMENT_LEN};
use dsd_core::spikesort::{
    channel_select, cluster_segments, compute_cacc, detect_events, downscale_factor,
    downscale_power, generate_synthetic, kmeans_cluster, label_detections, pca_project,
    trough_index, ChannelKind, Recording, Segment, SortConfig, SynthConfig, TemplateBank,
    LABEL_NEURAL, LABEL_SPIKE,
};

#[test]
fn cacc_matches_brute_force_on_random_scenarios() {
    for seed in 0..1000 {
        let (pred, truth, tol) = scenario(seed);
        let m = compute_cacc(&pred, &truth, tol).unwrap();
        let (dts, fps, ms, tpcc) = oracle_cacc(&pred, &truth, tol);
        assert_eq!(
            (m.dts, m.fps, m.ms, m.tpcc),
            (dts, fps, ms, tpcc),
            "seed {seed}"
        );
        assert_eq!(m.nts, m.dts - (m.fps + m.ms));
        match m.cacc {
            Some(c) => assert_eq!(c, 100.0 * tpcc as f64 / m.nts as f64),
            None => assert_eq!(m.nts, 0),
        }
    }
}

fn blobs(seed: u64, centres: &[[f64; 2]], per: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 0.3).unwrap();
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for _ in 0..per {
            pts.push(vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)]);
            labels.push(k);
        }
    }
    (pts, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kmeans_recovers_separated_blobs(seed in any::<u64>()) {
        let centres = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
        let (pts, truth) = blobs(seed, &centres, 40);
        let r = kmeans_cluster(&pts, 3, seed).unwrap();
        // the labelling is a bijection of the true blobs
        let pairs: Vec<(usize, usize)> = r.labels.iter().copied().zip(truth).unique().collect();
        prop_assert_eq!(pairs.len(), 3);
        for w in r.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        let again = kmeans_cluster(&pts, 3, seed).unwrap();
        prop_assert_eq!(again, r);
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenpairs with
/// eigenvalues in descending order.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|i| (a[i][i], (0..n).map(|r| v[r][i]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pca_matches_jacobi_oracle(seed in any::<u64>(), dim in 2usize..7, n in 10usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // anisotropic cloud so eigenvalues are well separated
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|j| rng.random_range(-1.0..1.0) * (1.0 + 2.0 * j as f64)).collect())
            .collect();
        let mean: Vec<f64> = (0..dim).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..dim)
            .map(|a| (0..dim)
                .map(|b| data.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect())
            .collect();
        let want = jacobi_eigen(cov);
        let k = dim.min(2);
        let got = pca_project(&data, k).unwrap();
        let total: f64 = want.iter().map(|p| p.0).sum();
        prop_assert!((got.total_variance - total).abs() < 1e-9 * total.max(1.0));
        for c in 0..k {
            let gap = if c + 1 < dim { want[c].0 - want[c + 1].0 } else { f64::INFINITY };
            prop_assert!((got.explained_variance[c] - want[c].0).abs() < 1e-9 * want[0].0);
            if gap > 1e-3 * want[0].0 {
                let dot: f64 = got.components[c].iter().zip(&want[c].1).map(|(a, b)| a * b).sum();
                prop_assert!((dot.abs() - 1.0).abs() < 1e-7, "component {} dot {}", c, dot);
            }
        }
        for (row, f) in data.iter().zip(&got.features) {
            for c in 0..k {
                let proj: f64 = row.iter().zip(&mean).zip(&got.components[c]).map(|((x, m), v)| (x - m) * v).sum();
                prop_assert!((proj - f[c]).abs() < 1e-9);
            }
        }
    }
}

fn silent(sigma: f64, duration: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        duration_s: duration,
        sigma_n: sigma,
        channels: vec![ChannelKind::Silent],
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn background_has_the_requested_standard_deviation() {
    let bank = TemplateBank::easy1();
    for (sigma, seed) in [(0.05, 1), (0.1, 2), (0.2, 3)] {
        let rec = generate_synthetic(&bank, &silent(sigma, 30.0, seed)).unwrap();
        let x = rec.channel_f64(0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.05, "σ {sigma}: measured {sd}");
    }
}

fn white_noise(len: usize, sigma: f64, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    Recording {
        sample_rate: 24_000.0,
        noise_sigma: sigma,
        samples: vec![(0..len).map(|_| n.sample(&mut rng) as f32).collect()],
        ground_truth: vec![Vec::new()],
    }
}

#[test]
fn lone_template_at_ten_sigma_gives_one_detection_at_its_trough() {
    let bank = TemplateBank::easy1();
    let sigma = 0.05;
    for (class, at) in [(0usize, 150usize), (1, 200), (2, 251)] {
        let mut rec = white_noise(400, sigma, 20 + class as u64);
        let w = &bank.neurons[class];
        let depth = -w[trough_index(w)];
        let start = at - trough_index(w);
        for (i, v) in w.iter().enumerate() {
            rec.samples[0][start + i] += (v * 10.0 * sigma / depth) as f32;
        }
        let found = detect_events(&rec, 0, &SortConfig::default().detect);
        let peaks: Vec<usize> = found.iter().map(|s| s.peak()).collect();
        assert_eq!(peaks.len(), 1, "class {class}: peaks {peaks:?}");
        assert!(
            peaks[0].abs_diff(at) <= 2,
            "class {class}: peak {} vs {at}",
            peaks[0]
        );
    }
}

#[test]
fn empty_signal_gives_no_detections() {
    let rec = white_noise(5_000, 0.0, 0);
    assert!(detect_events(&rec, 0, &SortConfig::default().detect).is_empty());
}

#[test]
fn perfect_artefact_removal_sorts_every_kept_spike_correctly() {
    let bank = TemplateBank::easy1();
    let cfg = SynthConfig {
        duration_s: 20.0,
        sigma_n: 0.02,
        amplitude_jitter: 0.0,
        seed: 3,
        ..SynthConfig::default()
    };
    let rec = generate_synthetic(&bank, &cfg).unwrap();
    let sort = SortConfig::default();
    let mut found = detect_events(&rec, 0, &sort.detect);
    label_detections(&rec, &mut found, sort.match_tolerance);
    // ground-truth classifier: keep exactly the windows on true spikes
    let kept: Vec<_> = found
        .into_iter()
        .filter(|s| s.label == Some(LABEL_SPIKE))
        .collect();
    let labels = cluster_segments(&kept, &sort).unwrap();
    let predicted: Vec<(usize, usize)> = kept
        .iter()
        .zip(&labels)
        .map(|(s, &l)| (s.peak(), l))
        .collect();
    let truth: Vec<(usize, u8)> = rec.spikes(0).map(|e| (e.time_index, e.class_id)).collect();
    let m = compute_cacc(&predicted, &truth, sort.match_tolerance).unwrap();
    assert_eq!(m.nts, m.dts - (m.fps + m.ms));
    assert_eq!(m.fps, 0, "{m:?}");
    assert!(
        m.nts * 10 >= truth.len() * 9,
        "{m:?} of {} spikes",
        truth.len()
    );
    assert_eq!(m.cacc, Some(100.0), "{m:?}");
}

#[test]
fn power_downscaling() {
    let df = downscale_factor(1.1, 0.27).unwrap();
    assert_eq!(df.round(), 17.0);
    let p = downscale_power(5.6e-3, 1.1, 0.27).unwrap() * 1e6;
    assert!((325.0..=335.0).contains(&p), "{p} µW");
    assert!(downscale_factor(0.0, 1.0).is_err());
}

/// Dense-only classifier: neural exactly when the first sample exceeds 0.5.
fn marker_classifier() -> NetworkModel {
    let mut fc = FcParams::zeros(SEGMENT_LEN, 2);
    fc.weights[LABEL_NEURAL * SEGMENT_LEN] = 1.0;
    fc.bias[1 - LABEL_NEURAL] = 0.5;
    NetworkModel::new(
        SEGMENT_LEN,
        2,
        vec![Layer::new("fc", LayerSpec::FullyConnected(fc))],
    )
}

#[test]
fn channel_selection_follows_the_existence_rule() {
    let cnn1 = marker_classifier();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut window = |channel: usize, marked: bool| {
        let mut x: Vec<f64> = (0..SEGMENT_LEN).map(|_| noise.sample(&mut rng)).collect();
        x[0] = if marked { 1.0 } else { 0.0 };
        Segment::from_real(&x, channel, 0)
    };
    let mut segs: Vec<Segment> = (0..100).map(|_| window(0, false)).collect();
    segs.extend((0..100).map(|i| window(1, i == 37)));
    let active = channel_select(&cnn1, &segs).unwrap();
    assert_eq!(active.into_iter().collect::<Vec<_>>(), vec![1]);
}
