use crate::model::{evaluate, train, DataSplits, NetworkModel};

use super::project::project_network;
use super::prune::prune_structured;
use super::quantize::quantize_model;
use super::select::{select_model, Selection};
use super::{CandidateRecord, CompressionConfig, CompressionError, CompressionReport, Stage};

#[derive(Debug, Clone)]
pub struct CompressionOutcome {
    pub report: CompressionReport,
    /// Real-valued model of the selected candidate.
    pub float_model: NetworkModel,
    /// The selected candidate quantized at the selected width.
    pub model: NetworkModel,
    pub selection: Selection,
}

struct Float {
    model: NetworkModel,
    record: CandidateRecord,
}

fn record(
    candidate: usize,
    stage: Stage,
    prune_iter: usize,
    projection_rate: Option<f64>,
    model: &NetworkModel,
    data: &DataSplits,
) -> Result<CandidateRecord, CompressionError> {
    Ok(CandidateRecord {
        candidate,
        stage,
        prune_iter,
        projection_rate,
        bits: model.quant.as_ref().map(|q| q.param_bits).unwrap_or(32),
        learnables: model.learnables(),
        memory_bytes: model.memory_bytes(),
        val_accuracy: evaluate(model, &data.val)?,
        test_accuracy: evaluate(model, &data.test)?,
        flags: Vec::new(),
    })
}

/// Runs pruning, projection of the smallest pruned models at every target
/// reduction, and quantized selection. Selection uses validation accuracy;
/// test accuracy is only reported.
pub fn compress(
    model: &NetworkModel,
    data: &DataSplits,
    cfg: &CompressionConfig,
) -> Result<CompressionOutcome, CompressionError> {
    cfg.validate()?;
    let calibration: Vec<Vec<f64>> = data
        .train
        .segments
        .iter()
        .take(cfg.calibration_samples)
        .cloned()
        .collect();
    if calibration.is_empty() {
        return Err(CompressionError::EmptyCalibration);
    }
    let mut report = CompressionReport::default();
    let mut float = vec![Float {
        record: record(0, Stage::Original, 0, None, model, data)?,
        model: model.clone(),
    }];

    let pruned = prune_structured(model, data, cfg)?;
    report.warnings.extend(pruned.warnings.iter().cloned());
    for p in &pruned.candidates {
        let mut r = record(float.len(), Stage::Pruned, p.iter, None, &p.model, data)?;
        r.flags.push(format!("filters={:?}", p.filters));
        float.push(Float {
            model: p.model.clone(),
            record: r,
        });
    }

    let sources: Vec<(usize, NetworkModel)> = if pruned.candidates.is_empty() {
        vec![(0, model.clone())]
    } else {
        let skip = pruned
            .candidates
            .len()
            .saturating_sub(cfg.projection_candidates);
        pruned.candidates[skip..]
            .iter()
            .map(|p| (p.iter, p.model.clone()))
            .collect()
    };
    let tune = cfg.fine_tune(cfg.projection_fine_tune_epochs);
    for (iter, source) in &sources {
        for &target in &cfg.target_reductions {
            let projected = project_network(source, &calibration, target)?;
            let (tuned, _) = train(&projected.model, &data.train, &data.val, &tune)?;
            let mut r = record(
                float.len(),
                Stage::Projected,
                *iter,
                Some(target),
                &tuned,
                data,
            )?;
            r.flags.extend(projected.flags.iter().cloned());
            if !projected.reached {
                r.flags.push(format!(
                    "target of {} learnables not reached",
                    projected.target_learnables
                ));
            }
            log::info!(
                "projected iteration {iter} at {target}: {} learnables, val accuracy {:.4}",
                r.learnables,
                r.val_accuracy
            );
            float.push(Float {
                model: tuned,
                record: r,
            });
        }
    }

    let summary: Vec<(usize, f64)> = float
        .iter()
        .map(|f| (f.record.learnables, f.record.val_accuracy))
        .collect();
    let mut quantized = Vec::new();
    let selection = select_model(
        &summary,
        cfg.accuracy_floor,
        cfg.stability_margin,
        cfg.min_bits,
        cfg.max_bits,
        |c, bits| {
            let q = quantize_model(&float[c].model, bits, &calibration)?;
            let mut r = record(
                c,
                Stage::Quantized,
                float[c].record.prune_iter,
                float[c].record.projection_rate,
                &q,
                data,
            )?;
            let acc = r.val_accuracy;
            let stable = acc >= float[c].record.val_accuracy - cfg.stability_margin;
            r.flags
                .push(if stable { "stable" } else { "unstable" }.to_string());
            quantized.push(r);
            Ok(acc)
        },
    )?;

    report.records = float.iter().map(|f| f.record.clone()).collect();
    report.records.extend(quantized);
    report.selected_candidate = Some(selection.candidate);
    report.selected_bits = Some(selection.bits);
    report.unstable = selection.unstable;
    if selection.unstable {
        report.warnings.push(format!(
            "no candidate stable at {} bits; best one kept",
            cfg.max_bits
        ));
    }
    let chosen = float.swap_remove(selection.candidate).model;
    let quantized_model = quantize_model(&chosen, selection.bits, &calibration)?;
    Ok(CompressionOutcome {
        report,
        float_model: chosen,
        model: quantized_model,
        selection,
    })
}
