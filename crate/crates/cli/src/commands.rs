use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use dsd_core::compression::{compress, CompressionConfig, CompressionReport, Stage};
use dsd_core::model::{
    build_conv_net, confusion_matrix, evaluate, train, DataSplits, NetworkModel, TrainConfig,
    TrainHistory, ORIGINAL_FILTERS, SEGMENT_LEN,
};
use dsd_core::pipesim::{
    allocate_resources, calibrate_handshake, cycles_to_micros, verify_allocation, AllocationConfig,
    Pipeline, PipelineConfig, PipelinePlan,
};
use dsd_core::spikesort::{
    artefact_training_set, channel_training_set, convert_wave_clus, detect_events,
    generate_synthetic, ingest_recording, label_detections, sort_recording, write_table_v,
    ChannelKind, CorpusConfig, DetectConfig, Recording, SortConfig, SortingMetrics, SynthConfig,
    TableVRow, TemplateBank, WaveClusImport,
};

use crate::args::*;
use crate::files::*;
use crate::CliError;

const NOISE_PER_EVENT: f64 = 0.4;
const CHANNEL_WINDOW: usize = 660;
const CHANNEL_DOWNSAMPLE: usize = 10;
const LABEL_TOLERANCE: usize = 5;

pub fn run(command: &Command) -> Result<(), CliError> {
    let hash = config_hash(command)?;
    match command {
        Command::Synth(a) => synth(a, command, &hash),
        Command::ConvertDataset(a) => convert(a, command, &hash),
        Command::Segments(a) => segments(a, &hash),
        Command::Train(a) => cmd_train(a, command, &hash),
        Command::Compress(a) => cmd_compress(a, command, &hash),
        Command::Classify(a) => classify(a, &hash),
        Command::Simulate(a) => simulate(a, command, &hash),
        Command::Sort(a) => sort(a, command, &hash),
        Command::Report(a) => report(a),
    }
}

fn synth(a: &SynthArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    let bank = TemplateBank::named(&a.bank).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown bank {:?}; expected one of {:?}",
            a.bank,
            TemplateBank::NAMES
        ))
    })?;
    let cfg = SynthConfig {
        duration_s: a.duration,
        sigma_n: a.sigma,
        spike_rate_hz: a.spike_rate,
        artefact_rate_hz: a.artefact_rate,
        channels: a
            .channels
            .iter()
            .map(|c| match c {
                Channel::Active => ChannelKind::Active,
                Channel::Silent => ChannelKind::Silent,
            })
            .collect(),
        seed: a.seed,
        ..SynthConfig::default()
    };
    let rec = generate_synthetic(&bank, &cfg)?;
    let dir = output_dir(&a.out)?;
    rec.export(&dir)?;
    write_run_config(&dir, command, hash)?;
    println!(
        "wrote {} channel(s), {} spikes, {} artefacts to {} (config {hash})",
        rec.channel_count(),
        rec.spike_count(),
        rec.artefact_count(),
        dir.display()
    );
    Ok(())
}

fn convert(a: &ConvertArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    for (p, what) in [
        (&a.data, "data file"),
        (&a.spike_times, "spike-time file"),
        (&a.spike_class, "spike-class file"),
    ] {
        require(p, what)?;
    }
    if let Some(p) = &a.artefact_flags {
        require(p, "artefact-flag file")?;
    }
    let import = WaveClusImport {
        artefact_flags: a.artefact_flags.clone(),
        sample_rate: a.sample_rate,
        sigma_n: a.sigma,
        one_based: !a.zero_based,
        peak_offset: a.peak_offset,
        align_search: a.align_search,
        ..WaveClusImport::new(a.data.clone(), a.spike_times.clone(), a.spike_class.clone())
    };
    let rec = convert_wave_clus(&import)?;
    let dir = output_dir(&a.out)?;
    rec.export(&dir)?;
    write_run_config(&dir, command, hash)?;
    println!(
        "converted {} samples, {} spikes, sigma {} into {} (config {hash})",
        rec.len(0),
        rec.spike_count(),
        rec.noise_sigma,
        dir.display()
    );
    Ok(())
}

fn load_recording(path: &Path) -> Result<Recording, CliError> {
    require(path, "recording")?;
    Ok(ingest_recording(path)?)
}

fn segments(a: &SegmentsArgs, hash: &str) -> Result<(), CliError> {
    let rec = load_recording(&a.recording)?;
    let detect = DetectConfig {
        threshold: a.threshold,
        ..DetectConfig::default()
    };
    let mut segs = Vec::new();
    for c in 0..rec.channel_count() {
        segs.extend(detect_events(&rec, c, &detect));
    }
    label_detections(&rec, &mut segs, LABEL_TOLERANCE);
    let rows: Vec<Vec<f64>> = segs.iter().map(|s| s.real()).collect();
    let comment = format!("config_hash={hash}");
    write_segments(&rows, &comment, BufWriter::new(File::create(&a.out)?))?;
    if let Some(p) = &a.labels {
        let labels: Vec<usize> = segs.iter().map(|s| s.label.unwrap_or(2)).collect();
        write_labels(&labels, &comment, BufWriter::new(File::create(p)?))?;
    }
    println!("{} segments written to {}", rows.len(), a.out.display());
    Ok(())
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        initial_lr: t.lr,
        lr_factor: t.lr_factor,
        lr_period_epochs: t.lr_period,
        momentum: t.momentum,
        max_epochs: t.epochs,
        batch_size: t.batch,
        l2: t.l2,
        early_stop_patience: t.patience,
        dropout_rate: t.dropout,
        rng_seed: t.seed,
    }
}

fn load_splits(d: &DataArgs) -> Result<DataSplits, CliError> {
    if !(d.train_fraction > 0.0 && d.val_fraction > 0.0 && d.train_fraction + d.val_fraction < 1.0)
    {
        return Err(CliError::Usage(format!(
            "train fraction {} and validation fraction {} must be positive and leave a test part",
            d.train_fraction, d.val_fraction
        )));
    }
    let rec = match &d.recording {
        Some(p) => load_recording(p)?,
        None => match d.task {
            Task::Artefact => CorpusConfig::default().recording()?,
            Task::Channel => CorpusConfig::channel_selection(7).recording()?,
        },
    };
    let data = match d.task {
        Task::Artefact => artefact_training_set(&rec, NOISE_PER_EVENT, 3),
        Task::Channel => channel_training_set(&rec, CHANNEL_WINDOW, CHANNEL_DOWNSAMPLE)?,
    };
    if data.class_counts().iter().any(|&c| c == 0) || data.len() < 10 {
        return Err(CliError::Runtime(format!(
            "recording yields too few labelled segments per class: {:?}",
            data.class_counts()
        )));
    }
    Ok(data.split(d.train_fraction, d.val_fraction, d.split_seed))
}

fn write_history(h: &TrainHistory, comment: &str, path: &Path) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# {comment}")?;
    writeln!(
        out,
        "epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy"
    )?;
    for e in &h.epochs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch, e.lr, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        )?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    let tc = train_config(&a.training);
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let splits = load_splits(&a.data)?;
    let classes = splits.train.class_count;
    let mut model = build_conv_net(SEGMENT_LEN, classes, [ORIGINAL_FILTERS; 3], tc.dropout_rate);
    model.initialize(tc.rng_seed);
    let (best, history) = train(&model, &splits.train, &splits.val, &tc)?;
    let dir = output_dir(&a.out)?;
    best.save(dir.join("model.json"))?;
    write_history(
        &history,
        &format!("config_hash={hash}"),
        &dir.join("history.csv"),
    )?;
    let test = evaluate(&best, &splits.test)?;
    let metrics = json!({
        "config_hash": hash,
        "learnables": best.learnables(),
        "best_epoch": history.best_epoch,
        "stopped_early": history.stopped_early,
        "val_accuracy": evaluate(&best, &splits.val)?,
        "test_accuracy": test,
        "test_confusion": confusion_matrix(&best, &splits.test)?,
    });
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    write_run_config(&dir, command, hash)?;
    println!(
        "trained {} epochs (best {}), test accuracy {:.2}% -> {}",
        history.epochs.len(),
        history.best_epoch,
        100.0 * test,
        dir.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<NetworkModel, CliError> {
    require(path, "model file")?;
    Ok(NetworkModel::load(path)?)
}

fn cmd_compress(a: &CompressArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    if model.is_quantized() {
        return Err(CliError::Usage("compress needs a real-valued model".into()));
    }
    let (min_bits, max_bits) = a.bits.map_or((a.min_bits, a.max_bits), |b| (b, b));
    let cfg = CompressionConfig {
        max_prune_iters: a.max_prune_iters,
        filters_per_iter: a.filters_per_iter,
        min_filters: a.min_filters,
        target_reductions: a.targets.clone(),
        projection_candidates: a.projection_candidates,
        min_bits,
        max_bits,
        accuracy_floor: a.accuracy_floor,
        stability_margin: a.stability_margin,
        fine_tune_epochs: a.fine_tune_epochs,
        projection_fine_tune_epochs: a.projection_fine_tune_epochs,
        train: train_config(&a.training),
        ..CompressionConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let splits = load_splits(&a.data)?;
    let outcome = compress(&model, &splits, &cfg)?;
    let dir = output_dir(&a.out)?;
    outcome.model.save(dir.join("model.json"))?;
    outcome.float_model.save(dir.join("float_model.json"))?;
    let comment = format!("config_hash={hash}");
    outcome.report.write_csv(
        Some(&comment),
        BufWriter::new(File::create(dir.join("report.csv"))?),
    )?;
    let mut report = serde_json::to_value(&outcome.report)?;
    report["config_hash"] = json!(hash);
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_run_config(&dir, command, hash)?;
    let m = &outcome.model;
    println!(
        "selected candidate {} at {} bits{}: {} learnables, {} bytes, test accuracy {:.2}% -> {}",
        outcome.selection.candidate,
        outcome.selection.bits,
        if outcome.selection.unstable {
            " (unstable)"
        } else {
            ""
        },
        m.learnables(),
        m.memory_bytes(),
        100.0 * evaluate(m, &splits.test)?,
        dir.display()
    );
    Ok(())
}

fn classify(a: &ClassifyArgs, hash: &str) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let rows = read_segments(&a.input, model.input_len)?;
    let labels = rows
        .iter()
        .map(|r| model.classify(r))
        .collect::<Result<Vec<_>, _>>()?;
    let comment = format!("config_hash={hash}");
    match &a.out {
        Some(p) => write_labels(&labels, &comment, BufWriter::new(File::create(p)?))?,
        None => write_labels(&labels, &comment, io::stdout().lock())?,
    }
    Ok(())
}

fn simulate(a: &SimulateArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    if !model.is_quantized() {
        return Err(CliError::Usage(
            "simulate needs a quantized model (run compress first)".into(),
        ));
    }
    let rows = read_segments(&a.input, model.input_len)?;
    let plan = PipelinePlan::from_model(&model)?;
    let alloc_cfg = AllocationConfig {
        budget: a.budget,
        tolerance: a.tolerance,
    };
    let auto = allocate_resources(&plan, &alloc_cfg);
    let mut plan = auto.apply(&plan)?;
    let mut allocation = auto;
    if a.conv_macs.is_some() || a.mappers.is_some() {
        let macs = a
            .conv_macs
            .clone()
            .unwrap_or_else(|| allocation.conv_macs());
        let mappers = a
            .mappers
            .clone()
            .unwrap_or_else(|| allocation.fused_mappers());
        allocation = verify_allocation(&plan, &macs, &mappers, alloc_cfg.limit())?;
        plan = allocation.apply(&plan)?;
    }
    let handshake = match a.calibrate {
        Some(target) => calibrate_handshake(&plan.timing_blocks(), target)?.ok_or_else(|| {
            CliError::Runtime(format!(
                "no handshake cost gives a delay of exactly {target} cycles"
            ))
        })?,
        None => a.handshake,
    };
    let pipeline = Pipeline::new(
        plan,
        PipelineConfig {
            handshake_cycles: handshake,
            frequency_hz: a.frequency,
            ..PipelineConfig::default()
        },
    )?;
    let labels = rows
        .iter()
        .map(|r| pipeline.classify(r))
        .collect::<Result<Vec<_>, _>>()?;

    let dir = output_dir(&a.out)?;
    let comment = format!("config_hash={hash}");
    write_labels(
        &labels,
        &comment,
        BufWriter::new(File::create(dir.join("labels.csv"))?),
    )?;
    pipeline.trace.write_csv(
        Some(&comment),
        BufWriter::new(File::create(dir.join("trace.csv"))?),
    )?;
    let mut summary: serde_json::Value =
        serde_json::from_str(&pipeline.trace.summary_json(a.frequency, Some(hash))?)?;
    summary["calibrated_handshake"] = json!(a.calibrate.map(|_| handshake));
    summary["allocation"] = serde_json::to_value(&allocation)?;
    summary["segments"] = json!(labels.len());
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    write_run_config(&dir, command, hash)?;
    let t = &pipeline.trace;
    println!(
        "delay {} cycles = {} µs at {} MHz (latency {} cycles, handshake {} cycles{})",
        t.initiation_interval_cycles,
        cycles_to_micros(t.initiation_interval_cycles, a.frequency)?,
        a.frequency / 1e6,
        t.latency_cycles,
        handshake,
        if a.calibrate.is_some() {
            ", calibrated"
        } else {
            ""
        }
    );
    println!(
        "conv MACs {:?}, fused mappers {:?}; {} segments classified -> {}",
        allocation.conv_macs(),
        allocation.fused_mappers(),
        labels.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct RecordingMetrics {
    dataset: String,
    sigma_n: f64,
    spikes: usize,
    active_channels: Vec<usize>,
    metrics: SortingMetrics,
}

fn sort(a: &SortArgs, command: &Command, hash: &str) -> Result<(), CliError> {
    let cnn1 = load_model(&a.cnn1)?;
    let cnn2 = load_model(&a.cnn2)?;
    let cfg = SortConfig {
        detect: DetectConfig {
            threshold: a.threshold,
            ..DetectConfig::default()
        },
        clusters: a.clusters,
        pca_components: a.pca_components,
        match_tolerance: a.match_tolerance,
        min_neural_windows: a.min_neural_windows,
        seed: a.seed,
        ..SortConfig::default()
    };
    let mut rows = Vec::new();
    let mut per = Vec::new();
    for path in &a.recording {
        let rec = load_recording(path)?;
        let outcome = sort_recording(&rec, &cnn1, &cnn2, &cfg)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        rows.push(TableVRow {
            dataset: name.clone(),
            sigma_n: rec.noise_sigma,
            spikes: rec.spike_count(),
            cacc: outcome.metrics.cacc,
        });
        per.push(RecordingMetrics {
            dataset: name,
            sigma_n: rec.noise_sigma,
            spikes: rec.spike_count(),
            active_channels: outcome.active_channels().into_iter().collect(),
            metrics: outcome.metrics,
        });
    }
    let dir = output_dir(&a.out)?;
    write_table_v(
        &rows,
        Some(&format!("config_hash={hash}")),
        BufWriter::new(File::create(dir.join("table.csv"))?),
    )?;
    let total = SortingMetrics::merge(&per.iter().map(|p| p.metrics).collect::<Vec<_>>());
    let doc = json!({
        "config_hash": hash,
        "recordings": per,
        "total": total,
    });
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    write_run_config(&dir, command, hash)?;
    for r in &rows {
        println!(
            "{}: CAcc {}",
            r.dataset,
            r.cacc
                .map(|c| format!("{c:.2}%"))
                .unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    if a.compression.is_none() && a.metrics.is_none() {
        return Err(CliError::Usage(
            "give --compression and/or --metrics".into(),
        ));
    }
    if let Some(p) = &a.compression {
        require(p, "compression report")?;
        let r: CompressionReport = serde_json::from_str(&fs::read_to_string(p)?)?;
        print_compression(&r);
    }
    if let Some(p) = &a.metrics {
        require(p, "metrics file")?;
        let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?)?;
        let total: SortingMetrics = serde_json::from_value(doc["total"].clone())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        println!(
            "sorting: DTS {} FPS {} MS {} NTS {} TPCC {} CAcc {}",
            total.dts,
            total.fps,
            total.ms,
            total.nts,
            total.tpcc,
            total
                .cacc
                .map(|c| format!("{c:.2}%"))
                .unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(())
}

fn print_compression(r: &CompressionReport) {
    for stage in [
        Stage::Original,
        Stage::Pruned,
        Stage::Projected,
        Stage::Quantized,
    ] {
        let recs: Vec<_> = r.records.iter().filter(|x| x.stage == stage).collect();
        if recs.is_empty() {
            continue;
        }
        let best = recs
            .iter()
            .filter(|x| x.val_accuracy >= 0.99)
            .min_by_key(|x| (x.learnables, x.bits));
        println!(
            "{:<10} {:>3} candidates, learnables {}..{}{}",
            stage.as_str(),
            recs.len(),
            recs.iter().map(|x| x.learnables).min().unwrap_or(0),
            recs.iter().map(|x| x.learnables).max().unwrap_or(0),
            best.map(|b| format!(
                ", smallest at >=99% validation: #{} ({} learnables, {} bits, test {:.2}%)",
                b.candidate,
                b.learnables,
                b.bits,
                100.0 * b.test_accuracy
            ))
            .unwrap_or_default()
        );
    }
    match (r.selected_candidate, r.selected_bits) {
        (Some(c), Some(b)) => {
            let rec = r
                .records
                .iter()
                .find(|x| x.stage == Stage::Quantized && x.candidate == c && x.bits == b);
            println!(
                "selected #{c} at {b} bits{}{}",
                if r.unstable { " (unstable)" } else { "" },
                rec.map(|x| format!(
                    ": {} learnables, {} bytes, test {:.2}%",
                    x.learnables,
                    x.memory_bytes,
                    100.0 * x.test_accuracy
                ))
                .unwrap_or_default()
            );
        }
        _ => println!("no selection recorded"),
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
}
