//! Structured pruning: whole convolution filters are removed together with
//! the input channels (or dense-layer columns) that consume them.

use crate::model::{evaluate, train, DataSplits, Dataset, LayerSpec, NetworkModel};

use super::{CompressionConfig, CompressionError};

/// L1 norm of each output filter of a convolution layer.
pub fn filter_importance(model: &NetworkModel, layer: usize) -> Result<Vec<f64>, CompressionError> {
    let conv = model.layers[layer].spec.conv().ok_or_else(|| {
        CompressionError::Config(format!(
            "layer {} is not a convolution",
            model.layers[layer].name
        ))
    })?;
    Ok((0..conv.out_ch).map(|o| conv.filter_l1(o)).collect())
}

/// Removes output filter `filter` of convolution `layer` and the matching
/// input of the next parameterised layer.
pub fn remove_filter(
    model: &mut NetworkModel,
    layer: usize,
    filter: usize,
) -> Result<(), CompressionError> {
    let name = model.layers[layer].name.clone();
    let conv = model.layers[layer]
        .spec
        .conv_mut()
        .ok_or_else(|| CompressionError::Config(format!("layer {name} is not a convolution")))?;
    if filter >= conv.out_ch {
        return Err(CompressionError::Config(format!(
            "{name} has {} filters, cannot remove {filter}",
            conv.out_ch
        )));
    }
    if conv.out_ch == 1 {
        return Err(CompressionError::Config(format!(
            "{name} would have no filters left"
        )));
    }
    let old_out = conv.out_ch;
    let n = conv.in_ch * conv.kernel_len;
    conv.weights.drain(filter * n..(filter + 1) * n);
    conv.bias.remove(filter);
    conv.out_ch -= 1;

    let next = (layer + 1..model.layers.len())
        .find(|&i| model.layers[i].spec.has_params())
        .ok_or_else(|| {
            CompressionError::Config(format!("nothing consumes the output of {name}"))
        })?;
    match &mut model.layers[next].spec {
        LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => {
            let k = p.kernel_len;
            let mut weights = Vec::with_capacity(p.out_ch * (p.in_ch - 1) * k);
            for o in 0..p.out_ch {
                for c in (0..p.in_ch).filter(|&c| c != filter) {
                    let start = p.w_index(o, c, 0);
                    weights.extend_from_slice(&p.weights[start..start + k]);
                }
            }
            p.weights = weights;
            p.in_ch -= 1;
        }
        LayerSpec::FullyConnected(p) => {
            if p.in_dim % old_out != 0 {
                return Err(CompressionError::Config(format!(
                    "dense input {} is not a multiple of {old_out} channels",
                    p.in_dim
                )));
            }
            let len = p.in_dim / old_out;
            let cut = filter * len..(filter + 1) * len;
            let mut weights = Vec::with_capacity(p.out_dim * (p.in_dim - len));
            for o in 0..p.out_dim {
                let row = &p.weights[o * p.in_dim..(o + 1) * p.in_dim];
                weights.extend(
                    row.iter()
                        .enumerate()
                        .filter(|(i, _)| !cut.contains(i))
                        .map(|(_, w)| *w),
                );
            }
            p.weights = weights;
            p.in_dim -= len;
        }
        _ => unreachable!("has_params layers are conv or dense"),
    }
    model.quant = None;
    model.check_shapes()?;
    Ok(())
}

/// A model accepted after one pruning iteration and its fine-tuning.
#[derive(Debug, Clone)]
pub struct PruneCandidate {
    pub iter: usize,
    pub model: NetworkModel,
    pub val_accuracy: f64,
    /// Filter count of each spatial convolution.
    pub filters: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct PruneOutcome {
    pub candidates: Vec<PruneCandidate>,
    pub warnings: Vec<String>,
    /// Iteration count actually run.
    pub iterations: usize,
}

fn filter_counts(model: &NetworkModel) -> Vec<usize> {
    model
        .conv_layer_indices()
        .iter()
        .map(|&i| model.layers[i].spec.conv().map(|c| c.out_ch).unwrap_or(0))
        .collect()
}

/// Removes the `count` lowest-L1 filters of `layer` (lowest index first on
/// ties).
fn prune_layer(
    model: &mut NetworkModel,
    layer: usize,
    count: usize,
) -> Result<(), CompressionError> {
    let importance = filter_importance(model, layer)?;
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]).then(a.cmp(&b)));
    let mut doomed: Vec<usize> = order.into_iter().take(count).collect();
    doomed.sort_unstable_by(|a, b| b.cmp(a));
    for f in doomed {
        remove_filter(model, layer, f)?;
    }
    Ok(())
}

/// Iterative pruning. Each iteration first tries removing
/// `filters_per_iter` filters from every convolution, then from each single
/// convolution in turn; the first attempt whose fine-tuned validation
/// accuracy reaches the floor is kept as the next candidate. Pruning stops
/// after `max_prune_iters` iterations or when no attempt reaches the floor.
pub fn prune_structured(
    model: &NetworkModel,
    data: &DataSplits,
    cfg: &CompressionConfig,
) -> Result<PruneOutcome, CompressionError> {
    cfg.validate()?;
    let convs = model.conv_layer_indices();
    let mut choices: Vec<Vec<usize>> = vec![convs.clone()];
    if convs.len() > 1 {
        choices.extend(convs.iter().map(|&c| vec![c]));
    }
    let mut current = model.clone();
    current.quant = None;
    let mut out = PruneOutcome::default();
    let mut warned = vec![false; model.layers.len()];
    let tune = cfg.fine_tune(cfg.fine_tune_epochs);

    for iter in 1..=cfg.max_prune_iters {
        out.iterations = iter;
        let mut accepted = None;
        for choice in &choices {
            let mut layers = Vec::new();
            for &l in choice {
                let n = current.layers[l].spec.conv().map(|c| c.out_ch).unwrap_or(0);
                if n <= cfg.min_filters {
                    if !warned[l] {
                        warned[l] = true;
                        out.warnings.push(format!(
                            "iteration {iter}: {} is at the {}-filter floor and is skipped",
                            current.layers[l].name, cfg.min_filters
                        ));
                    }
                } else {
                    layers.push((l, cfg.filters_per_iter.min(n - cfg.min_filters)));
                }
            }
            if layers.is_empty() {
                continue;
            }
            let mut trial = current.clone();
            for &(l, k) in &layers {
                prune_layer(&mut trial, l, k)?;
            }
            let (tuned, _) = train(&trial, &data.train, &data.val, &tune)?;
            let acc = evaluate(&tuned, &data.val)?;
            log::info!(
                "prune iteration {iter}: filters {:?} val accuracy {acc:.4}",
                filter_counts(&tuned)
            );
            if acc >= cfg.accuracy_floor {
                accepted = Some((tuned, acc));
                break;
            }
        }
        match accepted {
            Some((m, acc)) => {
                out.candidates.push(PruneCandidate {
                    iter,
                    filters: filter_counts(&m),
                    model: m.clone(),
                    val_accuracy: acc,
                });
                current = m;
            }
            None => break,
        }
    }
    Ok(out)
}

/// Validation accuracy with one filter zeroed out, for each filter of
/// `layer`; used to audit the L1 ranking.
pub fn leave_one_out_accuracy(
    model: &NetworkModel,
    layer: usize,
    val: &Dataset,
) -> Result<Vec<f64>, CompressionError> {
    let n = model.layers[layer]
        .spec
        .conv()
        .map(|c| c.out_ch)
        .unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    for f in 0..n {
        let mut m = model.clone();
        remove_filter(&mut m, layer, f)?;
        out.push(evaluate(&m, val)?);
    }
    Ok(out)
}
