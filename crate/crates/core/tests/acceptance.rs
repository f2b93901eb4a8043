//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dsd_core::compression::{compress, CompressionConfig, CompressionOutcome};
use dsd_core::fxp::FxValue;
use dsd_core::model::{
    build_conv_net, build_original, build_projected, evaluate, memory_bytes, train, DataSplits,
    FixedActivation, NetworkModel, ProjectedRanks, TrainConfig, SEGMENT_LEN,
};
use dsd_core::pipesim::{
    allocate_resources, calibrate_handshake, cycles_to_micros, cycles_to_time, simulate_conv_block,
    simulate_fused_block, AllocationConfig, BlockKind, Pipeline, PipelineConfig, PipelinePlan,
    TARGET_DELAY_CYCLES,
};
use dsd_core::spikesort::{
    artefact_training_set, channel_training_set, compute_cacc, downscale_factor, downscale_power,
    sort_recording, ChannelKind, CorpusConfig, SortConfig,
};

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Artefact-removal network trained and compressed on the built-in corpus.
struct Fixture {
    splits: DataSplits,
    base: NetworkModel,
    base_test: f64,
    outcome: CompressionOutcome,
    elapsed: Duration,
}

fn build_fixture() -> Result<Fixture, String> {
    let t = Instant::now();
    let rec = CorpusConfig::default().recording().map_err(err)?;
    let data = artefact_training_set(&rec, 0.4, 3);
    let splits = data.split(0.7, 0.15, 11);
    let mut m = build_conv_net(SEGMENT_LEN, 3, [50; 3], 0.5);
    m.initialize(1);
    let (base, _) = train(&m, &splits.train, &splits.val, &TrainConfig::default()).map_err(err)?;
    let base_test = evaluate(&base, &splits.test).map_err(err)?;
    let outcome = compress(&base, &splits, &CompressionConfig::default()).map_err(err)?;
    Ok(Fixture {
        splits,
        base,
        base_test,
        outcome,
        elapsed: t.elapsed(),
    })
}

fn fixture() -> Result<&'static Fixture, String> {
    static F: OnceLock<Result<Fixture, String>> = OnceLock::new();
    F.get_or_init(build_fixture).as_ref().map_err(Clone::clone)
}

fn fused_equivalence() -> Outcome {
    let draws = 10_000;
    let mut mismatches = 0;
    for seed in 0..draws {
        let c = fused_case(seed);
        let (out, _) = simulate_fused_block(&c.input, &c.params, c.mappers).map_err(err)?;
        let got: Vec<i64> = out.data.iter().map(FxValue::raw).collect();
        if got != sequential_fused(&c.params, &c.input) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} of {draws} draws differ from sequential execution"),
    )
}

fn conv_split() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut bad = Vec::new();
    for n in 8..=128 {
        let (mut k, x) = conv_case(&mut rng, n);
        let want = naive_conv(&k, &x);
        for engines in [1, 2, 4] {
            let (y, _) = simulate_conv_block(&x, &k, 3 * engines).map_err(err)?;
            if y.data.iter().map(FxValue::raw).collect::<Vec<_>>() != want {
                bad.push(format!(
                    "n {n}: {engines} engines differ from direct convolution"
                ));
            }
        }
        k.in_ch = 1;
        k.out_ch = 1;
        k.padding = 0;
        k.weights.truncate(3);
        k.bias.truncate(1);
        let x1 = FixedActivation::new(1, n, x.data[..n].to_vec());
        let cycles = simulate_conv_block(&x1, &k, 3).map_err(err)?.1;
        if cycles != n as u64 - 2 {
            bad.push(format!("n {n}: {cycles} cycles on one engine"));
        }
        if n == 66 && cycles != 64 {
            bad.push(format!("n 66: {cycles} cycles"));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "n 8..=128 bit-identical over 1/2/4 engines, n-2 cycles on one engine, 64 at n 66"
                .into()
        } else {
            bad.join("; ")
        },
    )
}

fn resource_allocation() -> Outcome {
    let plan = deployed_plan(5, 4);
    let a = allocate_resources(&plan, &AllocationConfig::default());
    let conv = a.conv_macs();
    let fused: Vec<usize> = plan
        .blocks
        .iter()
        .filter(|b| b.kind == BlockKind::FusedBlock)
        .map(|b| b.mac_count)
        .collect();
    let cycles = |kind: BlockKind| -> Vec<u64> {
        plan.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.compute_cycles())
            .collect()
    };
    let fused_cycles = cycles(BlockKind::FusedBlock);
    let conv_cycles = cycles(BlockKind::ConvBlock);
    let others_ok = plan
        .blocks
        .iter()
        .filter(|b| !matches!(b.kind, BlockKind::FusedBlock | BlockKind::ConvBlock))
        .all(|b| b.compute_cycles() <= 30);
    check(
        conv == [6, 6, 6]
            && fused == [44, 33, 30]
            && fused_cycles.iter().all(|&c| c <= 30)
            && conv_cycles.iter().all(|&c| c <= a.limit)
            && others_ok,
        format!(
            "conv MACs {conv:?} at {conv_cycles:?} cycles (limit {}), fused mappers {fused:?} at {fused_cycles:?} cycles",
            a.limit
        ),
    )
}

fn timing() -> Outcome {
    let seconds = cycles_to_time(42, 2.5e6).map_err(err)?;
    let micros = cycles_to_micros(42, 2.5e6).map_err(err)?;
    let plan = deployed_plan(9, 4);
    let h = calibrate_handshake(&plan.timing_blocks(), TARGET_DELAY_CYCLES)
        .map_err(err)?
        .ok_or("no handshake cost reaches 42 cycles")?;
    let p = Pipeline::new(
        plan,
        PipelineConfig {
            handshake_cycles: h,
            ..PipelineConfig::default()
        },
    )
    .map_err(err)?;
    let delay = p.trace.initiation_interval_cycles;
    check(
        seconds == 16.8e-6 && micros == 16.8 && delay == 42,
        format!("42 cycles at 2.5 MHz = {micros} µs; calibrated handshake {h} cycles gives delay {delay}"),
    )
}

fn bookkeeping() -> Outcome {
    let original = build_original();
    let p = build_projected(SEGMENT_LEN, 3, [10; 3], ProjectedRanks::COMPACT, 0.5);
    let shape = |name: &str| -> Result<([usize; 4], [usize; 4]), String> {
        let i = p.layer_index(name).ok_or(format!("no layer {name}"))?;
        let (w, b) = p.layers[i]
            .spec
            .param_shapes()
            .ok_or(format!("{name} has no parameters"))?;
        Ok((w.dims(), b.dims()))
    };
    // W and B in SSCB order; B padded to four dimensions
    let table: [(&str, [usize; 4], [usize; 4]); 10] = [
        ("conv1.core", [1, 3, 1, 1], [1, 1, 1, 1]),
        ("conv1.proj_out", [1, 1, 1, 10], [1, 1, 10, 1]),
        ("conv2.proj_in", [1, 1, 10, 1], [1, 1, 1, 1]),
        ("conv2.core", [1, 3, 1, 1], [1, 1, 1, 1]),
        ("conv2.proj_out", [1, 1, 1, 10], [1, 1, 10, 1]),
        ("conv3.proj_in", [1, 1, 10, 1], [1, 1, 1, 1]),
        ("conv3.core", [1, 3, 1, 2], [1, 1, 2, 1]),
        ("conv3.proj_out", [1, 1, 2, 10], [1, 1, 10, 1]),
        ("fc.proj_in", [2, 150, 1, 1], [2, 1, 1, 1]),
        ("fc.proj_out", [3, 2, 1, 1], [3, 1, 1, 1]),
    ];
    let mut bad = Vec::new();
    for (name, w, b) in table {
        let got = shape(name)?;
        if got != (w, b) {
            bad.push(format!("{name} {got:?}"));
        }
    }
    let acts = p.check_shapes().map_err(err)?;
    let act = |name: &str| acts[p.layer_index(name).unwrap()];
    for (name, want) in [
        ("conv1.core", (1, 66)),
        ("conv1.proj_out", (10, 66)),
        ("conv2.proj_in", (1, 66)),
        ("conv2.core", (1, 64)),
        ("conv2.proj_out", (10, 64)),
        ("conv3.proj_in", (1, 32)),
        ("conv3.core", (2, 30)),
        ("conv3.proj_out", (10, 30)),
        ("fc.proj_in", (2, 1)),
        ("fc.proj_out", (3, 1)),
    ] {
        if act(name) != want {
            bad.push(format!("{name} activation {:?}", act(name)));
        }
    }
    let orig = (original.learnables(), original.memory_bytes());
    let compact = (p.learnables(), memory_bytes(p.learnables(), 4));
    check(
        orig == (17_553, 70_212) && compact == (419, 210) && bad.is_empty(),
        format!(
            "original {} learnables / {} bytes, compact {} learnables / {} bytes at 4 bits{}",
            orig.0,
            orig.1,
            compact.0,
            compact.1,
            if bad.is_empty() {
                String::new()
            } else {
                format!("; shape mismatches: {}", bad.join(", "))
            }
        ),
    )
}

fn compression_outcome() -> Outcome {
    let f = fixture()?;
    let q = &f.outcome.model;
    let test = evaluate(q, &f.splits.test).map_err(err)?;
    let bits = f.outcome.selection.bits;
    let (n, bytes) = (q.learnables(), q.memory_bytes());
    let gap = 100.0 * (f.base_test - test);
    check(
        bits == 4
            && n <= 500
            && bytes <= 260
            && f.base_test >= 0.99
            && gap.abs() <= 1.5
            && f.elapsed <= Duration::from_secs(15 * 60),
        format!(
            "{bits}-bit model, {n} learnables, {bytes} bytes, test {:.2}% vs float {:.2}% ({} learnables), training + compression {:.0} s",
            100.0 * test,
            100.0 * f.base_test,
            f.base.learnables(),
            f.elapsed.as_secs_f64()
        ),
    )
}

fn fixed_point_fidelity() -> Outcome {
    let f = fixture()?;
    let plan = PipelinePlan::from_model(&f.outcome.model).map_err(err)?;
    let plan = allocate_resources(&plan, &AllocationConfig::default())
        .apply(&plan)
        .map_err(err)?;
    let test = &f.splits.test;
    let mut correct = 0;
    for (x, &y) in test.segments.iter().zip(&test.labels) {
        if plan.execute(x).map_err(err)?.0 == y {
            correct += 1;
        }
    }
    let pipeline = correct as f64 / test.len() as f64;
    let selected_float = evaluate(&f.outcome.float_model, test).map_err(err)?;
    let gap = |float: f64| 100.0 * (float - pipeline);
    check(
        gap(f.base_test).abs() <= 3.0 && gap(selected_float).abs() <= 3.0,
        format!(
            "pipeline {:.2}% on {} test segments; uncompressed float {:.2}%, selected float {:.2}%",
            100.0 * pipeline,
            test.len(),
            100.0 * f.base_test,
            100.0 * selected_float
        ),
    )
}

fn metric_exactness() -> Outcome {
    let mut bad = 0;
    for seed in 0..1000 {
        let (pred, truth, tol) = scenario(seed);
        let m = compute_cacc(&pred, &truth, tol).map_err(err)?;
        let want = oracle_cacc(&pred, &truth, tol);
        if (m.dts, m.fps, m.ms, m.tpcc) != want || m.nts != m.dts - (m.fps + m.ms) {
            bad += 1;
        }
    }
    check(
        bad == 0,
        format!("{bad} of 1000 scenarios disagree with the brute-force matcher"),
    )
}

fn end_to_end() -> Outcome {
    let f = fixture()?;
    let t = Instant::now();
    let crec = CorpusConfig {
        duration_s: 20.0,
        ..CorpusConfig::channel_selection(21)
    }
    .recording()
    .map_err(err)?;
    let cdata = channel_training_set(&crec, 660, 10).map_err(err)?;
    let csplits = cdata.split(0.7, 0.15, 11);
    let mut m = build_conv_net(SEGMENT_LEN, 2, [50; 3], 0.5);
    m.initialize(1);
    let cfg = TrainConfig {
        batch_size: 32,
        ..TrainConfig::default()
    };
    let (cnn1, _) = train(&m, &csplits.train, &csplits.val, &cfg).map_err(err)?;
    let cnn1_test = evaluate(&cnn1, &csplits.test).map_err(err)?;
    let rec = CorpusConfig {
        seed: 99,
        duration_s: 60.0,
        channels: vec![ChannelKind::Active, ChannelKind::Silent],
        ..CorpusConfig::default()
    }
    .recording()
    .map_err(err)?;
    let out = sort_recording(&rec, &cnn1, &f.outcome.model, &SortConfig::default()).map_err(err)?;
    let cacc = out.metrics.cacc.unwrap_or(0.0);
    let windows: Vec<String> = out
        .channels
        .iter()
        .map(|c| format!("ch{} {} neural windows", c.channel, c.neural_windows))
        .collect();
    check(
        cacc >= 95.0,
        format!(
            "CAcc {cacc:.2}% (NTS {}, TPCC {}, FPS {}, MS {}); CNN1 test {:.2}%, {}; {:.0} s",
            out.metrics.nts,
            out.metrics.tpcc,
            out.metrics.fps,
            out.metrics.ms,
            100.0 * cnn1_test,
            windows.join(", "),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn power_scaling() -> Outcome {
    let p = downscale_power(5.6e-3, 1.1, 0.27).map_err(err)? * 1e6;
    let df = downscale_factor(1.1, 0.27).map_err(err)?;
    check(
        (325.0..=335.0).contains(&p) && df.round() == 17.0,
        format!("{p:.1} µW, DF {df:.2} rounds to {}", df.round()),
    )
}

fn gradients() -> Outcome {
    let inputs = random_inputs(6, 14, 100);
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let conv = max_gradient_rel_error(&probe_conv_net(3), &inputs, &labels, 0.5);
    let proj = max_gradient_rel_error(&probe_projected_net(3), &inputs, &labels, 0.5);
    check(
        conv < 1e-4 && proj < 1e-4,
        format!("max relative error {conv:.2e} (conv), {proj:.2e} (projected)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("fused-block equivalence", fused_equivalence),
        ("convolution-split invariance", conv_split),
        ("resource allocation", resource_allocation),
        ("timing arithmetic", timing),
        ("compression bookkeeping", bookkeeping),
        ("desk-scale compression", compression_outcome),
        ("fixed-point fidelity", fixed_point_fidelity),
        ("metric exactness", metric_exactness),
        ("end-to-end sorting", end_to_end),
        ("power scaling", power_scaling),
        ("gradient correctness", gradients),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1} s]", i + 1)
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
