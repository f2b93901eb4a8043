mod common;

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

use dsd_core::compression::prune::leave_one_out_accuracy;
use dsd_core::compression::{
    filter_importance, project_network, prune_structured, quantize_model, remove_filter,
    select_model, CompressionConfig, CompressionError,
};
use dsd_core::model::{
    build_original, memory_bytes, ConvParams, Dataset, FcParams, Layer, LayerSpec, NetworkModel,
    TrainConfig,
};

use common::*;

/// One convolution of four centre-tap filters with gains 0.1, 0.5, 1.5 and
/// 3; class 0 scores the summed positive response and class 1 a fixed
/// threshold. Removing a larger filter pushes more class-0 inputs under
/// the threshold.
fn toy_ranking_model() -> NetworkModel {
    let gains = [0.5, 0.1, 3.0, 1.5];
    let mut conv = ConvParams::zeros(1, 4, 3, 1);
    for (o, g) in gains.iter().enumerate() {
        let i = conv.w_index(o, 0, 1);
        conv.weights[i] = *g;
    }
    let len = 14;
    let mut fc = FcParams::zeros(4 * len, 2);
    for i in 0..4 * len {
        fc.weights[i] = 1.0 / len as f64;
    }
    let total: f64 = gains.iter().sum();
    fc.bias[1] = 0.05 * total;
    NetworkModel::new(
        len,
        2,
        vec![
            Layer::new("conv1", LayerSpec::Conv1D(conv)),
            Layer::new("relu1", LayerSpec::ReLU),
            Layer::new("fc", LayerSpec::FullyConnected(fc)),
            Layer::new("relu_fc", LayerSpec::ReLU),
        ],
    )
}

fn ranking(values: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b));
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    idx
}

#[test]
fn l1_ranking_agrees_with_leave_one_out() {
    let m = toy_ranking_model();
    let mut val = Dataset::new(2);
    for i in 0..200 {
        let u = 0.03 + 0.27 * i as f64 / 199.0;
        val.push(vec![u; 14], 0);
        val.push(vec![0.01; 14], 1);
    }
    let l1 = filter_importance(&m, 0).unwrap();
    let loo = leave_one_out_accuracy(&m, 0, &val).unwrap();
    // most important first: large L1, low accuracy once removed
    let by_l1 = ranking(&l1, true);
    let by_loo = ranking(&loo, false);
    let agree = by_l1.iter().zip(&by_loo).filter(|(a, b)| a == b).count();
    assert!(
        agree >= 3,
        "L1 {by_l1:?} vs leave-one-out {by_loo:?} ({loo:?})"
    );
}

#[test]
fn pruning_conv1_shrinks_conv2_input() {
    let mut m = build_original();
    m.initialize(1);
    remove_filter(&mut m, 0, 7).unwrap();
    let c2 = m.layers[m.layer_index("conv2").unwrap()]
        .spec
        .conv()
        .unwrap();
    assert_eq!(
        (c2.in_ch, c2.out_ch, c2.weights.len()),
        (49, 50, 3 * 49 * 50)
    );
    let (w, _) = m.layers[2].spec.param_shapes().unwrap();
    assert_eq!(w.dims(), [1, 3, 49, 50]);
    m.initialize(1);
    assert_eq!(m.learnables(), 17_553 - 4 - 150);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn removing_a_dead_filter_changes_nothing(seed in any::<u64>(), layer_pick in 0usize..3, f in 0usize..2) {
        let mut m = probe_conv_net(seed);
        let layer = m.conv_layer_indices()[layer_pick];
        {
            let p = m.layers[layer].spec.conv_mut().unwrap();
            let n = p.in_ch * p.kernel_len;
            p.weights[f * n..(f + 1) * n].iter_mut().for_each(|w| *w = 0.0);
            p.bias[f] = 0.0;
        }
        let mut pruned = m.clone();
        remove_filter(&mut pruned, layer, f).unwrap();
        prop_assert!(pruned.learnables() < m.learnables());
        for x in random_inputs(4, 14, seed ^ 7) {
            let a = m.forward(&x).unwrap();
            let b = pruned.forward(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_projection_is_an_identity(seed in any::<u64>()) {
        let m = probe_conv_net(seed);
        let calib = random_inputs(40, 14, seed ^ 11);
        let p = project_network(&m, &calib, 0.0).unwrap();
        for x in random_inputs(5, 14, seed ^ 13) {
            let a = m.forward(&x).unwrap();
            let b = p.model.forward(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-9, "{} vs {}", u, v);
            }
        }
    }

    #[test]
    fn quantized_parameters_sit_on_their_grid(seed in any::<u64>(), bits in 2u32..=8) {
        let m = probe_projected_net(seed);
        let q = quantize_model(&m, bits, &random_inputs(8, 14, seed)).unwrap();
        prop_assert_eq!(q.memory_bytes(), memory_bytes(m.learnables(), bits));
        for i in 0..q.layers.len() {
            let Some((fp, lq)) = q.fixed_params(i).unwrap() else { continue };
            let (w, b) = m.layers[i].spec.params().unwrap();
            prop_assert_eq!(lq.weight.total_bits(), bits);
            for (v, x) in fp.weights.iter().zip(w) {
                prop_assert!((v.to_f64() - x).abs() <= lq.weight.lsb() / 2.0 + 1e-15);
            }
            for (v, x) in fp.bias.iter().zip(b) {
                prop_assert!((v.to_f64() - x).abs() <= lq.bias.lsb() / 2.0 + 1e-15);
            }
        }
    }

    #[test]
    fn memory_shrinks_with_every_bit(learnables in 1usize..100_000, bits in 3u32..=32) {
        prop_assert!(memory_bytes(learnables, bits - 1) <= memory_bytes(learnables, bits));
        prop_assert_eq!(memory_bytes(learnables, bits), (learnables * bits as usize).div_ceil(8));
    }
}

#[test]
fn rank_one_all_ones_composition() {
    let ones = |i, o, k| {
        let mut p = ConvParams::zeros(i, o, k, 0);
        p.weights.iter_mut().for_each(|w| *w = 1.0);
        p
    };
    let mut fc = FcParams::zeros(1, 2);
    fc.weights.iter_mut().for_each(|w| *w = 1.0);
    let m = NetworkModel::new(
        3,
        2,
        vec![
            Layer::new("core", LayerSpec::Conv1D(ones(1, 1, 3))),
            Layer::new("proj_out", LayerSpec::PointwiseConv(ones(1, 3, 1))),
            Layer::new("proj_in", LayerSpec::PointwiseConv(ones(3, 1, 1))),
            Layer::new("fc", LayerSpec::FullyConnected(fc)),
        ],
    );
    for x in [[1i64, 2, 3], [-4, 7, 0], [5, -5, 9]] {
        // (1ᵀ · 1 · (1ᵀx)) through a width-3 rank-1 bottleneck
        let s: BigRational = x
            .iter()
            .map(|&v| BigRational::from_integer(BigInt::from(v)))
            .sum();
        let want = s * BigRational::from_integer(BigInt::from(3));
        let got = m.forward(&x.map(|v| v as f64)).unwrap();
        for g in got {
            assert_eq!(BigRational::from_float(g).unwrap(), want);
        }
    }
}

/// Brute-force statement of the selection rules.
fn oracle_select(
    cands: &[(usize, f64)],
    acc: &[Vec<f64>],
    floor: f64,
    margin: f64,
    lo: u32,
    hi: u32,
) -> Option<(usize, u32, bool)> {
    let mut eligible: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].1 >= floor).collect();
    if eligible.is_empty() {
        return None;
    }
    eligible.sort_by_key(|&i| (cands[i].0, i));
    for &c in &eligible {
        let ok = |b: u32| acc[c][b as usize] >= cands[c].1 - margin;
        let widths: Vec<u32> = (lo..=hi).filter(|&b| (b..=hi).all(ok)).collect();
        if let Some(&b) = widths.iter().min() {
            return Some((c, b, false));
        }
    }
    let mut best = eligible[0];
    for &c in &eligible {
        if acc[c][hi as usize] > acc[best][hi as usize] {
            best = c;
        }
    }
    Some((best, hi, true))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn selection_matches_rule_enumeration(
        cands in prop::collection::vec((1usize..50, 0.95f64..1.0), 1..8),
        table in prop::collection::vec(prop::collection::vec(0.9f64..1.0, 9), 8),
        lo in 2u32..=5,
        hi in 5u32..=8,
    ) {
        let floor = 0.97;
        let margin = 0.01;
        let got = select_model(&cands, floor, margin, lo, hi, |c, b| Ok(table[c][b as usize]));
        match oracle_select(&cands, &table, floor, margin, lo, hi) {
            None => prop_assert!(matches!(got, Err(CompressionError::NoCandidate { .. })), "{:?}", got.map(|s| s.candidate)),
            Some((c, b, unstable)) => {
                let s = got.unwrap();
                prop_assert_eq!((s.candidate, s.bits, s.unstable), (c, b, unstable));
            }
        }
    }
}

#[test]
fn smallest_candidate_rejected_when_eight_bits_already_drop() {
    // 251 learnables collapse at 8 bits; 419 hold to 4 bits and drop at 3
    let cands = [(419, 0.9962), (251, 0.9950)];
    let table = |c: usize, b: u32| -> f64 {
        match (c, b) {
            (1, _) => 0.9390,
            (0, 3) => 0.96,
            (0, 2) => 0.5,
            _ => 0.9943,
        }
    };
    let s = select_model(&cands, 0.99, 0.01, 2, 8, |c, b| Ok(table(c, b))).unwrap();
    assert_eq!((s.candidate, s.bits, s.unstable), (0, 4, false));
    assert_eq!(memory_bytes(419, s.bits), 210);
}

#[test]
fn lone_candidate_stable_everywhere_goes_to_two_bits() {
    let s = select_model(&[(100, 0.995)], 0.99, 0.01, 2, 8, |_, _| Ok(0.995)).unwrap();
    assert_eq!((s.candidate, s.bits, s.unstable), (0, 2, false));
    assert_eq!(s.sweep.len(), 7);
}

#[test]
fn pruning_never_adds_learnables_and_keeps_shapes_valid() {
    let mut data = Dataset::new(3);
    for (i, x) in random_inputs(120, 14, 21).into_iter().enumerate() {
        let c = i % 3;
        data.push(
            x.iter()
                .enumerate()
                .map(|(t, v)| 0.2 * v + if t / 5 == c { 1.0 } else { 0.0 })
                .collect(),
            c,
        );
    }
    let splits = data.split(0.6, 0.2, 2);
    let cfg = CompressionConfig {
        max_prune_iters: 4,
        filters_per_iter: 1,
        min_filters: 1,
        accuracy_floor: 0.0,
        train: TrainConfig {
            batch_size: 16,
            l2: 0.01,
            dropout_rate: 0.0,
            ..TrainConfig::default()
        },
        ..CompressionConfig::default()
    };
    let m = probe_conv_net(6);
    let out = prune_structured(&m, &splits, &cfg).unwrap();
    assert!(!out.candidates.is_empty());
    let mut last = m.learnables();
    for c in &out.candidates {
        c.model.check_shapes().unwrap();
        assert!(c.model.learnables() <= last);
        last = c.model.learnables();
    }
    assert!(last < m.learnables());
}
