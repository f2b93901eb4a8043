//! Sorting accuracy (CAcc) and supply-voltage power scaling.

use std::io::Write;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use super::SpikeError;

/// Event counts behind CAcc. `nts = dts - (fps + ms)` holds by construction
/// and `cacc = 100·tpcc/nts` is `None` when `nts` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortingMetrics {
    pub dts: usize,
    pub fps: usize,
    pub ms: usize,
    pub nts: usize,
    pub tpcc: usize,
    pub cacc: Option<f64>,
}

impl SortingMetrics {
    /// Metrics from raw tallies; fails if `fps + ms` exceeds `dts` or
    /// `tpcc` exceeds the truly detected count.
    pub fn from_counts(dts: usize, fps: usize, ms: usize, tpcc: usize) -> Result<Self, SpikeError> {
        let nts = dts
            .checked_sub(fps + ms)
            .ok_or_else(|| SpikeError::Config(format!("FPS {fps} + MS {ms} exceeds DTS {dts}")))?;
        if tpcc > nts {
            return Err(SpikeError::Config(format!("TPCC {tpcc} exceeds NTS {nts}")));
        }
        Ok(Self {
            dts,
            fps,
            ms,
            nts,
            tpcc,
            cacc: (nts > 0).then(|| 100.0 * tpcc as f64 / nts as f64),
        })
    }

    /// Sums counts (e.g. over channels) and recomputes CAcc.
    pub fn merge(items: &[SortingMetrics]) -> SortingMetrics {
        let sum = |f: fn(&SortingMetrics) -> usize| items.iter().map(f).sum::<usize>();
        Self::from_counts(
            sum(|m| m.dts),
            sum(|m| m.fps),
            sum(|m| m.ms),
            sum(|m| m.tpcc),
        )
        .expect("sums of consistent metrics are consistent")
    }

    pub fn cacc_or_err(&self) -> Result<f64, SpikeError> {
        self.cacc.ok_or(SpikeError::NoDetections)
    }
}

/// Scores sorted events against ground truth.
///
/// `predicted` holds `(time, cluster)` pairs and `truth` holds
/// `(time, class)` pairs. A prediction and a true spike may match when their
/// times differ by at most `tolerance`; pairs are accepted greedily in order
/// of (distance, truth index, prediction index). Unmatched predictions are
/// false positives, unmatched truths are misses, and
/// `DTS = predictions + misses`. TPCC counts matched pairs whose cluster
/// maps to the true class under the label permutation maximising agreement.
pub fn compute_cacc(
    predicted: &[(usize, usize)],
    truth: &[(usize, u8)],
    tolerance: usize,
) -> Result<SortingMetrics, SpikeError> {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    let mut by_time: Vec<usize> = (0..predicted.len()).collect();
    by_time.sort_by_key(|&p| predicted[p].0);
    for (ti, &(tt, _)) in truth.iter().enumerate() {
        let lo = by_time.partition_point(|&p| predicted[p].0 + tolerance < tt);
        for &pi in by_time[lo..]
            .iter()
            .take_while(|&&p| predicted[p].0 <= tt + tolerance)
        {
            pairs.push((predicted[pi].0.abs_diff(tt), ti, pi));
        }
    }
    pairs.sort_unstable();
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; predicted.len()];
    let mut matched = Vec::new();
    for (_, ti, pi) in pairs {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            matched.push((predicted[pi].1, truth[ti].1 as usize));
        }
    }
    let nts = matched.len();
    let ms = truth.len() - nts;
    let fps = predicted.len() - nts;
    let tpcc = best_agreement(&matched)?;
    SortingMetrics::from_counts(predicted.len() + ms, fps, ms, tpcc)
}

/// Largest number of `(cluster, class)` pairs that agree under a one-to-one
/// relabelling of clusters.
fn best_agreement(pairs: &[(usize, usize)]) -> Result<usize, SpikeError> {
    let clusters: Vec<usize> = pairs.iter().map(|p| p.0).unique().sorted().collect();
    let classes: Vec<usize> = pairs.iter().map(|p| p.1).unique().sorted().collect();
    let n = clusters.len().max(classes.len());
    if n > 8 {
        return Err(SpikeError::Config(format!(
            "{n} labels exceed the 8-label permutation search"
        )));
    }
    let mut counts = vec![vec![0usize; n]; n];
    for &(a, b) in pairs {
        let i = clusters.binary_search(&a).expect("collected above");
        let j = classes.binary_search(&b).expect("collected above");
        counts[i][j] += 1;
    }
    Ok((0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| counts[i][j])
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0))
}

/// `DF = v_base² / v_scale²`.
pub fn downscale_factor(v_base: f64, v_scale: f64) -> Result<f64, SpikeError> {
    if !(v_base > 0.0 && v_scale > 0.0) {
        return Err(SpikeError::Config(format!(
            "supply voltages must be positive, got {v_base} and {v_scale}"
        )));
    }
    Ok(v_base * v_base / (v_scale * v_scale))
}

/// Power after moving from `v_base` to `v_scale`, `power / DF`, with DF
/// rounded to the nearest integer as reported (1.1 V to 0.27 V gives 17).
/// Factors below 1 are used unrounded.
pub fn downscale_power(power: f64, v_base: f64, v_scale: f64) -> Result<f64, SpikeError> {
    let df = downscale_factor(v_base, v_scale)?;
    Ok(power / if df >= 1.0 { df.round() } else { df })
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableVRow {
    pub dataset: String,
    pub sigma_n: f64,
    pub spikes: usize,
    pub cacc: Option<f64>,
}

/// Writes rows as CSV followed by a `mean over all rows` line averaging the
/// defined CAcc values.
pub fn write_table_v<W: Write>(
    rows: &[TableVRow],
    header_comment: Option<&str>,
    mut out: W,
) -> Result<(), SpikeError> {
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "sigma_n", "spikes", "cacc_percent"])?;
    let fmt = |c: Option<f64>| {
        c.map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "undefined".into())
    };
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.sigma_n.to_string(),
            r.spikes.to_string(),
            fmt(r.cacc),
        ])?;
    }
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.cacc).collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let spikes: usize = rows.iter().map(|r| r.spikes).sum();
    w.write_record([
        "mean over all rows".to_string(),
        String::new(),
        spikes.to_string(),
        fmt(mean),
    ])?;
    w.flush()?;
    Ok(())
}
