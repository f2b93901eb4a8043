#![allow(dead_code)]

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsd_core::compression::quantize_model;
use dsd_core::fxp::{shift_round, FxValue, QFormat};
use dsd_core::model::{
    build_conv_net, build_projected, loss_and_gradient, FixedActivation, NetworkModel,
    ProjectedRanks, SEGMENT_LEN,
};
use dsd_core::pipesim::{verify_allocation, ConvKernels, FusedParams, FusedTail, PipelinePlan};

/// Small network with the full layer vocabulary: 14 samples in, 3 classes.
pub fn probe_conv_net(seed: u64) -> NetworkModel {
    let mut m = build_conv_net(14, 3, [3, 4, 2], 0.0);
    m.initialize(seed);
    jitter_biases(&mut m, seed);
    m
}

/// Small projected network (pointwise sublayers, two-stage dense layer).
pub fn probe_projected_net(seed: u64) -> NetworkModel {
    let ranks = ProjectedRanks {
        conv1_out: 2,
        conv2_in: 2,
        conv2_out: 1,
        conv3_in: 2,
        conv3_out: 2,
        fc_in: 3,
    };
    let mut m = build_projected(14, 3, [3, 4, 2], ranks, 0.0);
    m.initialize(seed);
    jitter_biases(&mut m, seed);
    m
}

/// Small positive biases so most units sit away from the ReLU kink.
fn jitter_biases(m: &mut NetworkModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for l in &mut m.layers {
        if let Some((_, b)) = l.spec.params_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(0.05..0.3));
        }
    }
}

pub fn random_inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Largest relative difference between analytic gradients and central
/// finite differences over every parameter. Entries where both are below
/// `floor` in magnitude are compared absolutely against `floor`.
pub fn max_gradient_rel_error(
    model: &NetworkModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    l2: f64,
) -> f64 {
    let n = inputs.len();
    let (_, grads) = loss_and_gradient(model, inputs, labels, l2, n).unwrap();
    let h = 1e-6;
    let floor = 1e-7;
    let mut worst = 0.0f64;
    for (li, g) in grads.layers.iter().enumerate() {
        let Some((gw, gb)) = g else { continue };
        for (which, gvec) in [(0, gw), (1, gb)] {
            for (j, &analytic) in gvec.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    let (w, b) = m.layers[li].spec.params_mut().unwrap();
                    if which == 0 {
                        w[j] += delta;
                    } else {
                        b[j] += delta;
                    }
                    loss_and_gradient(&m, inputs, labels, l2, n).unwrap().0
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let scale = analytic.abs().max(numeric.abs());
                let err = if scale < floor {
                    (analytic - numeric).abs() / floor
                } else {
                    (analytic - numeric).abs() / scale
                };
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// One random fused-block configuration with its input map.
pub struct FusedCase {
    pub params: FusedParams,
    pub input: FixedActivation,
    pub mappers: usize,
}

fn rand_values(rng: &mut ChaCha8Rng, n: usize, fmt: QFormat) -> Vec<FxValue> {
    (0..n)
        .map(|_| FxValue::from_raw(rng.random_range(fmt.raw_min()..=fmt.raw_max()), fmt))
        .collect()
}

pub fn fused_case(seed: u64) -> FusedCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_ch = rng.random_range(1..=3);
    let rows = rng.random_range(1..=10);
    let len = rng.random_range(3..=20);
    let pool = match rng.random_range(0..3) {
        0 => None,
        1 => Some((2, 2)),
        _ => Some((3, 1)),
    };
    let xf = QFormat::signed(10, rng.random_range(3..=8));
    let wf = QFormat::signed(rng.random_range(2..=8), rng.random_range(0..=7));
    let bf = QFormat::signed(8, rng.random_range(0..=7));
    let hf = QFormat::signed(rng.random_range(8..=16), rng.random_range(2..=8));
    let w2f = QFormat::signed(rng.random_range(2..=8), rng.random_range(0..=7));
    let ef = QFormat::signed(12, rng.random_range(2..=8));
    let mapped = match pool {
        Some((p, s)) => (len - p) / s + 1,
        None => len,
    };
    let tail = if rng.random_bool(0.5) {
        let out_ch = rng.random_range(1..=3);
        FusedTail::Pointwise {
            out_ch,
            weights: rand_values(&mut rng, out_ch * rows, w2f),
            bias: rand_values(&mut rng, out_ch, bf),
            accumulator: QFormat::accumulator(hf.frac_bits() + w2f.frac_bits()),
            output: ef,
        }
    } else {
        let out_dim = rng.random_range(1..=3);
        FusedTail::Dense {
            out_dim,
            weights: rand_values(&mut rng, out_dim * rows * mapped, w2f),
            bias: rand_values(&mut rng, out_dim, bf),
            accumulator: QFormat::accumulator(hf.frac_bits() + w2f.frac_bits()),
            output: ef,
        }
    };
    let params = FusedParams {
        in_ch,
        rows,
        weights: rand_values(&mut rng, rows * in_ch, wf),
        bias: rand_values(&mut rng, rows, bf),
        accumulator: QFormat::accumulator(xf.frac_bits() + wf.frac_bits()),
        output: hf,
        pool,
        tail,
    };
    let input = FixedActivation::new(in_ch, len, rand_values(&mut rng, in_ch * len, xf));
    FusedCase {
        params,
        input,
        mappers: rng.random_range(1..=len),
    }
}

/// `b + Σ w·x` in exact integers on the accumulator grid, rounded once
/// to `out` and saturated.
fn affine(
    bias: FxValue,
    terms: impl Iterator<Item = (FxValue, FxValue)>,
    acc: QFormat,
    out: QFormat,
) -> i64 {
    let mut s = shift_round(
        bias.raw() as i128,
        acc.frac_bits() - bias.format().frac_bits(),
    );
    for (w, x) in terms {
        let shift = acc.frac_bits() - w.format().frac_bits() - x.format().frac_bits();
        s += shift_round(w.raw() as i128 * x.raw() as i128, shift);
    }
    shift_round(s, out.frac_bits() - acc.frac_bits())
        .clamp(out.raw_min() as i128, out.raw_max() as i128) as i64
}

/// Layer-by-layer execution: the whole projection-out map is materialized,
/// rectified, pooled, then projected in.
pub fn sequential_fused(p: &FusedParams, x: &FixedActivation) -> Vec<i64> {
    let h: Vec<Vec<FxValue>> = (0..p.rows)
        .map(|i| {
            (0..x.len)
                .map(|j| {
                    let terms = (0..p.in_ch).map(|c| (p.weights[i * p.in_ch + c], x.at(c, j)));
                    let v = affine(p.bias[i], terms, p.accumulator, p.output).max(0);
                    FxValue::from_raw(v, p.output)
                })
                .collect()
        })
        .collect();
    let d: Vec<Vec<FxValue>> = match p.pool {
        None => h,
        Some((pool, stride)) => h
            .iter()
            .map(|row| {
                (0..(row.len() - pool) / stride + 1)
                    .map(|j| {
                        *row[j * stride..j * stride + pool]
                            .iter()
                            .max_by_key(|v| v.raw())
                            .unwrap()
                    })
                    .collect()
            })
            .collect(),
    };
    let len = d[0].len();
    match &p.tail {
        FusedTail::Pointwise {
            out_ch,
            weights,
            bias,
            accumulator,
            output,
        } => (0..*out_ch)
            .flat_map(|q| {
                let d = &d;
                (0..len).map(move |j| {
                    let terms = (0..p.rows).map(|i| (weights[q * p.rows + i], d[i][j]));
                    affine(bias[q], terms, *accumulator, *output)
                })
            })
            .collect(),
        FusedTail::Dense {
            out_dim,
            weights,
            bias,
            accumulator,
            output,
        } => {
            let flat: Vec<FxValue> = d.iter().flatten().copied().collect();
            (0..*out_dim)
                .map(|o| {
                    let terms = flat
                        .iter()
                        .enumerate()
                        .map(|(k, v)| (weights[o * flat.len() + k], *v));
                    affine(bias[o], terms, *accumulator, *output)
                })
                .collect()
        }
    }
}

/// Compact projected model of the deployed size, quantized, as a pipeline
/// plan with the deployed resource counts.
pub fn deployed_plan(seed: u64, bits: u32) -> PipelinePlan {
    let mut m = build_projected(SEGMENT_LEN, 3, [10, 10, 10], ProjectedRanks::COMPACT, 0.0);
    m.initialize(seed);
    let calib = random_inputs(32, SEGMENT_LEN, seed ^ 1);
    let q = quantize_model(&m, bits, &calib).unwrap();
    let plan = PipelinePlan::from_model(&q).unwrap();
    verify_allocation(&plan, &[6, 6, 6], &[44, 33, 30], 30)
        .unwrap()
        .apply(&plan)
        .unwrap()
}

/// Independent statement of the matching rule: repeatedly take the unused
/// (truth, prediction) pair with the smallest (distance, truth, prediction)
/// key, then score the best one-to-one cluster relabelling by exhaustive
/// search over injective maps.
pub fn oracle_cacc(
    pred: &[(usize, usize)],
    truth: &[(usize, u8)],
    tol: usize,
) -> (usize, usize, usize, usize) {
    let mut tu = vec![false; truth.len()];
    let mut pu = vec![false; pred.len()];
    let mut matched = Vec::new();
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for (ti, t) in truth.iter().enumerate() {
            for (pi, p) in pred.iter().enumerate() {
                let d = p.0.abs_diff(t.0);
                if tu[ti] || pu[pi] || d > tol {
                    continue;
                }
                if best.is_none_or(|b| (d, ti, pi) < b) {
                    best = Some((d, ti, pi));
                }
            }
        }
        let Some((_, ti, pi)) = best else { break };
        tu[ti] = true;
        pu[pi] = true;
        matched.push((pred[pi].1, truth[ti].1 as usize));
    }
    let clusters: Vec<usize> = matched.iter().map(|m| m.0).unique().collect();
    let classes: Vec<usize> = matched.iter().map(|m| m.1).unique().collect();
    let mut tpcc = 0;
    // every injective map from clusters into classes padded with "none"
    let targets: Vec<Option<usize>> = classes
        .iter()
        .map(|&c| Some(c))
        .chain(std::iter::repeat_n(None, clusters.len()))
        .collect();
    for perm in targets.iter().permutations(clusters.len()) {
        let score = matched
            .iter()
            .filter(|(k, c)| {
                let i = clusters.iter().position(|x| x == k).unwrap();
                *perm[i] == Some(*c)
            })
            .count();
        tpcc = tpcc.max(score);
    }
    let nts = matched.len();
    let ms = truth.len() - nts;
    let fps = pred.len() - nts;
    (pred.len() + ms, fps, ms, tpcc)
}

/// Random prediction/truth pairs with jitter, misses and false positives.
pub fn scenario(seed: u64) -> (Vec<(usize, usize)>, Vec<(usize, u8)>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth: Vec<(usize, u8)> = (0..rng.random_range(0..8))
        .map(|_| (rng.random_range(0..200), rng.random_range(1..=3)))
        .collect();
    truth.sort();
    let mut pred: Vec<(usize, usize)> = Vec::new();
    for t in &truth {
        if rng.random_bool(0.8) {
            let jitter = rng.random_range(-6i64..=6);
            pred.push((
                (t.0 as i64 + jitter).max(0) as usize,
                rng.random_range(0..3),
            ));
        }
    }
    for _ in 0..rng.random_range(0..3) {
        pred.push((rng.random_range(0..200), rng.random_range(0..3)));
    }
    (pred, truth, rng.random_range(0..=8))
}

/// Random kernels and input for one convolution block of length `n`.
pub fn conv_case(rng: &mut ChaCha8Rng, n: usize) -> (ConvKernels, FixedActivation) {
    let in_ch = rng.random_range(1..=3);
    let out_ch = rng.random_range(1..=3);
    let wf = QFormat::signed(rng.random_range(2..=8), rng.random_range(0..=7));
    let xf = QFormat::sample();
    let raw = |rng: &mut ChaCha8Rng, f: QFormat| {
        FxValue::from_raw(rng.random_range(f.raw_min()..=f.raw_max()), f)
    };
    let k = ConvKernels {
        in_ch,
        out_ch,
        padding: rng.random_range(0..=1),
        weights: (0..in_ch * out_ch * 3).map(|_| raw(rng, wf)).collect(),
        bias: (0..out_ch).map(|_| raw(rng, wf)).collect(),
        accumulator: QFormat::accumulator(xf.frac_bits() + wf.frac_bits()),
        output: QFormat::signed(12, rng.random_range(3..=9)),
    };
    let x = FixedActivation::new(in_ch, n, (0..in_ch * n).map(|_| raw(rng, xf)).collect());
    (k, x)
}

/// Direct convolution in exact integers, rounded once and saturated.
pub fn naive_conv(k: &ConvKernels, x: &FixedActivation) -> Vec<i64> {
    let out_len = x.len + 2 * k.padding - 2;
    let mut y = Vec::new();
    for o in 0..k.out_ch {
        for t in 0..out_len {
            let b = k.bias[o];
            let mut s = shift_round(
                b.raw() as i128,
                k.accumulator.frac_bits() - b.format().frac_bits(),
            );
            for c in 0..k.in_ch {
                for tap in 0..3 {
                    let pos = t as isize + tap as isize - k.padding as isize;
                    if pos >= 0 && (pos as usize) < x.len {
                        s += k.weights[(o * k.in_ch + c) * 3 + tap].raw() as i128
                            * x.at(c, pos as usize).raw() as i128;
                    }
                }
            }
            let r = shift_round(s, k.output.frac_bits() - k.accumulator.frac_bits());
            y.push(r.clamp(k.output.raw_min() as i128, k.output.raw_max() as i128) as i64);
        }
    }
    y
}
