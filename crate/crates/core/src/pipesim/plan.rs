//! Mapping a projected, quantized network onto the block pipeline
//! SignalMemory → Conv1 → Fused1 → Conv2 → Fused2 → Conv3 → Fused3 →
//! Classifier → Scoreboard, and running segments through it.

use serde::{Deserialize, Serialize};

use crate::fxp::{mac, quantize, FxValue, QFormat};
use crate::model::{argmax_fixed, FixedActivation, LayerSpec, NetworkModel};

use super::conv::{simulate_conv_block, ConvKernels, MACS_PER_ENGINE};
use super::fused::{simulate_fused_block, FusedParams, FusedTail};
use super::timing::{simulate_timing, CycleTrace, TimingBlock};
use super::PipeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    SignalMemory,
    ConvBlock,
    FusedBlock,
    Classifier,
    Scoreboard,
}

/// Dense layer held by the classifier block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out][in]`.
    pub weights: Vec<FxValue>,
    pub bias: Vec<FxValue>,
    pub accumulator: QFormat,
    pub output: QFormat,
    pub relu: bool,
}

/// Each block's local memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockParams {
    Signal { len: usize, format: QFormat },
    Conv(ConvKernels),
    Fused(FusedParams),
    Classifier(DenseParams),
    Scoreboard { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub name: String,
    pub kind: BlockKind,
    /// MAC units for convolution and classifier blocks, mappers for fused
    /// blocks; 1 elsewhere.
    pub mac_count: usize,
    pub has_maxpool: bool,
    /// `(channels, len)` fetched from upstream.
    pub input_shape: (usize, usize),
    pub params: BlockParams,
}

impl BlockConfig {
    pub fn output_shape(&self) -> (usize, usize) {
        let (_, n) = self.input_shape;
        match &self.params {
            BlockParams::Signal { len, .. } => (1, *len),
            BlockParams::Conv(k) => (k.out_ch, k.out_len(n).unwrap_or(0)),
            BlockParams::Fused(f) => match &f.tail {
                FusedTail::Pointwise { out_ch, .. } => (*out_ch, f.mapped_len(n)),
                FusedTail::Dense { out_dim, .. } => (*out_dim, 1),
            },
            BlockParams::Classifier(d) => (d.out_dim, 1),
            BlockParams::Scoreboard { .. } => (1, 1),
        }
    }

    pub fn compute_cycles(&self) -> u64 {
        let (_, n) = self.input_shape;
        match &self.params {
            BlockParams::Signal { .. } => 1,
            BlockParams::Conv(k) => k.cycles(n, self.mac_count / MACS_PER_ENGINE),
            BlockParams::Fused(f) => f.cycles(n, self.mac_count),
            BlockParams::Classifier(d) => {
                (d.in_dim * d.out_dim).div_ceil(self.mac_count.max(1)) as u64
            }
            BlockParams::Scoreboard { classes } => (*classes as u64).saturating_sub(1).max(1),
        }
    }

    fn timing(&self) -> TimingBlock {
        TimingBlock {
            name: self.name.clone(),
            compute_cycles: self.compute_cycles(),
            accepts: self.input_shape,
            emits: self.output_shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub blocks: Vec<BlockConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Cycles spent on each inter-block transfer.
    pub handshake_cycles: u64,
    /// Items streamed to measure the initiation interval (at least 2).
    pub items: usize,
    pub frequency_hz: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            handshake_cycles: 2,
            items: 4,
            frequency_hz: 2.5e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub label: usize,
    pub scores: Vec<FxValue>,
    pub trace: CycleTrace,
}

fn fixed(
    model: &NetworkModel,
    i: usize,
    input: QFormat,
) -> Result<(Vec<FxValue>, Vec<FxValue>, QFormat, QFormat), PipeError> {
    let (fp, q) = model.fixed_params(i)?.ok_or_else(|| {
        PipeError::Topology(format!("{} has no parameters", model.layers[i].name))
    })?;
    Ok((fp.weights, fp.bias, q.accumulator(input), q.output))
}

impl PipelinePlan {
    /// Builds the block sequence from a quantized network whose layers form
    /// convolution cores, projection-out → ReLU → [max-pool] → projection-in
    /// runs, and a final dense layer. One MAC engine and one mapper per
    /// block until [`super::Allocation::apply`] sets an allocation.
    pub fn from_model(model: &NetworkModel) -> Result<Self, PipeError> {
        let plan = model
            .quant
            .as_ref()
            .ok_or_else(|| PipeError::Topology("model has no fixed-point plan".into()))?;
        let shapes = model.check_shapes()?;
        let layers = &model.layers;
        let mut fmt = plan.input;
        let mut blocks = vec![BlockConfig {
            name: "signal_memory".into(),
            kind: BlockKind::SignalMemory,
            mac_count: 1,
            has_maxpool: false,
            input_shape: (1, model.input_len),
            params: BlockParams::Signal {
                len: model.input_len,
                format: plan.input,
            },
        }];
        let in_shape = |i: usize| {
            if i == 0 {
                (1, model.input_len)
            } else {
                shapes[i - 1]
            }
        };
        let (mut convs, mut fuseds) = (0, 0);
        let mut i = 0;
        while i < layers.len() {
            match &layers[i].spec {
                LayerSpec::Conv1D(p) => {
                    if p.kernel_len != 3 {
                        return Err(PipeError::Topology(format!(
                            "{} has a {}-tap kernel",
                            layers[i].name, p.kernel_len
                        )));
                    }
                    let (weights, bias, accumulator, output) = fixed(model, i, fmt)?;
                    convs += 1;
                    blocks.push(BlockConfig {
                        name: format!("conv{convs}"),
                        kind: BlockKind::ConvBlock,
                        mac_count: MACS_PER_ENGINE,
                        has_maxpool: false,
                        input_shape: in_shape(i),
                        params: BlockParams::Conv(ConvKernels {
                            in_ch: p.in_ch,
                            out_ch: p.out_ch,
                            padding: p.padding,
                            weights,
                            bias,
                            accumulator,
                            output,
                        }),
                    });
                    fmt = output;
                    i += 1;
                }
                LayerSpec::PointwiseConv(head) => {
                    let start = i;
                    let (weights, bias, accumulator, output) = fixed(model, i, fmt)?;
                    i += 1;
                    if !matches!(layers.get(i).map(|l| &l.spec), Some(LayerSpec::ReLU)) {
                        return Err(PipeError::Topology(format!(
                            "{} is not followed by ReLU",
                            layers[start].name
                        )));
                    }
                    i += 1;
                    let mut pool = None;
                    while let Some(l) = layers.get(i) {
                        match l.spec {
                            LayerSpec::MaxPool1D { pool: p, stride } if pool.is_none() => {
                                pool = Some((p, stride))
                            }
                            LayerSpec::Dropout { .. } => {}
                            _ => break,
                        }
                        i += 1;
                    }
                    let tail_fmt = output;
                    let tail = match layers.get(i).map(|l| &l.spec) {
                        Some(LayerSpec::PointwiseConv(p)) => {
                            let (w, b, acc, out) = fixed(model, i, tail_fmt)?;
                            fmt = out;
                            FusedTail::Pointwise {
                                out_ch: p.out_ch,
                                weights: w,
                                bias: b,
                                accumulator: acc,
                                output: out,
                            }
                        }
                        Some(LayerSpec::FullyConnected(p)) => {
                            let (w, b, acc, out) = fixed(model, i, tail_fmt)?;
                            fmt = out;
                            FusedTail::Dense {
                                out_dim: p.out_dim,
                                weights: w,
                                bias: b,
                                accumulator: acc,
                                output: out,
                            }
                        }
                        _ => {
                            return Err(PipeError::Topology(format!(
                                "{} is not closed by a projection-in",
                                layers[start].name
                            )))
                        }
                    };
                    i += 1;
                    fuseds += 1;
                    blocks.push(BlockConfig {
                        name: format!("fused{fuseds}"),
                        kind: BlockKind::FusedBlock,
                        mac_count: 1,
                        has_maxpool: pool.is_some(),
                        input_shape: in_shape(start),
                        params: BlockParams::Fused(FusedParams {
                            in_ch: head.in_ch,
                            rows: head.out_ch,
                            weights,
                            bias,
                            accumulator,
                            output,
                            pool,
                            tail,
                        }),
                    });
                }
                LayerSpec::FullyConnected(p) => {
                    let (weights, bias, accumulator, output) = fixed(model, i, fmt)?;
                    let start = i;
                    i += 1;
                    let relu = matches!(layers.get(i).map(|l| &l.spec), Some(LayerSpec::ReLU));
                    if relu {
                        i += 1;
                    }
                    if i != layers.len() {
                        return Err(PipeError::Topology(format!(
                            "{} is followed by {}; the classifier must end the network",
                            layers[start].name, layers[i].name
                        )));
                    }
                    blocks.push(BlockConfig {
                        name: "classifier".into(),
                        kind: BlockKind::Classifier,
                        mac_count: 1,
                        has_maxpool: false,
                        input_shape: in_shape(start),
                        params: BlockParams::Classifier(DenseParams {
                            in_dim: p.in_dim,
                            out_dim: p.out_dim,
                            weights,
                            bias,
                            accumulator,
                            output,
                            relu,
                        }),
                    });
                }
                LayerSpec::Dropout { .. } => i += 1,
                _ => {
                    return Err(PipeError::Topology(format!(
                        "{} ({}) has no block",
                        layers[i].name,
                        layers[i].spec.kind_name()
                    )))
                }
            }
        }
        if blocks.last().map(|b| b.kind) != Some(BlockKind::Classifier) {
            return Err(PipeError::Topology(
                "network does not end in a dense classifier".into(),
            ));
        }
        blocks.push(BlockConfig {
            name: "scoreboard".into(),
            kind: BlockKind::Scoreboard,
            mac_count: 1,
            has_maxpool: false,
            input_shape: (model.class_count, 1),
            params: BlockParams::Scoreboard {
                classes: model.class_count,
            },
        });
        Ok(Self { blocks })
    }

    pub fn timing_blocks(&self) -> Vec<TimingBlock> {
        self.blocks.iter().map(BlockConfig::timing).collect()
    }

    pub fn block(&self, name: &str) -> Option<&BlockConfig> {
        self.blocks.iter().find(|b| b.name == name)
    }

    fn validate(&self) -> Result<(), PipeError> {
        for b in &self.blocks {
            let bad = match b.kind {
                BlockKind::ConvBlock => b.mac_count == 0 || b.mac_count % MACS_PER_ENGINE != 0,
                _ => b.mac_count == 0,
            };
            if bad {
                return Err(PipeError::Config {
                    block: b.name.clone(),
                    detail: format!("invalid MAC count {}", b.mac_count),
                });
            }
        }
        Ok(())
    }

    /// Runs one segment through the blocks' datapaths.
    pub fn execute(&self, input: &[f64]) -> Result<(usize, Vec<FxValue>), PipeError> {
        let mut x: Option<FixedActivation> = None;
        let mut scores = Vec::new();
        for b in &self.blocks {
            let prev = || {
                x.clone()
                    .ok_or_else(|| PipeError::Topology(format!("{} has no upstream data", b.name)))
            };
            x = Some(match &b.params {
                BlockParams::Signal { len, format } => {
                    if input.len() != *len {
                        return Err(PipeError::Shape(format!(
                            "{} samples, signal memory holds {len}",
                            input.len()
                        )));
                    }
                    FixedActivation::new(
                        1,
                        *len,
                        input.iter().map(|&v| quantize(v, *format)).collect(),
                    )
                }
                BlockParams::Conv(k) => simulate_conv_block(&prev()?, k, b.mac_count)?.0,
                BlockParams::Fused(f) => simulate_fused_block(&prev()?, f, b.mac_count)?.0,
                BlockParams::Classifier(d) => dense(&prev()?, d)?,
                BlockParams::Scoreboard { .. } => {
                    let s = prev()?;
                    scores = s.data.clone();
                    s
                }
            });
        }
        Ok((argmax_fixed(&scores), scores))
    }
}

fn dense(x: &FixedActivation, d: &DenseParams) -> Result<FixedActivation, PipeError> {
    if x.data.len() != d.in_dim
        || d.weights.len() != d.in_dim * d.out_dim
        || d.bias.len() != d.out_dim
    {
        return Err(PipeError::Shape(format!(
            "classifier {}→{} given {} inputs",
            d.in_dim,
            d.out_dim,
            x.data.len()
        )));
    }
    let out = (0..d.out_dim)
        .map(|o| {
            let mut acc = d.bias[o].rescale(d.accumulator);
            for i in 0..d.in_dim {
                acc = mac(x.data[i], d.weights[o * d.in_dim + i], acc);
            }
            let v = acc.rescale(d.output);
            if d.relu {
                v.relu()
            } else {
                v
            }
        })
        .collect();
    Ok(FixedActivation::new(d.out_dim, 1, out))
}

/// A plan with its timing resolved once; timing never depends on data.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub plan: PipelinePlan,
    pub config: PipelineConfig,
    pub trace: CycleTrace,
}

impl Pipeline {
    pub fn new(plan: PipelinePlan, config: PipelineConfig) -> Result<Self, PipeError> {
        plan.validate()?;
        let trace = simulate_timing(
            &plan.timing_blocks(),
            config.handshake_cycles,
            config.items.max(2),
        )?;
        Ok(Self {
            plan,
            config,
            trace,
        })
    }

    pub fn run(&self, input: &[f64]) -> Result<PipelineRun, PipeError> {
        let (label, scores) = self.plan.execute(input)?;
        Ok(PipelineRun {
            label,
            scores,
            trace: self.trace.clone(),
        })
    }

    pub fn classify(&self, input: &[f64]) -> Result<usize, PipeError> {
        Ok(self.plan.execute(input)?.0)
    }
}

/// Classifies one segment and reports the pipeline's timing.
pub fn run_pipeline(
    plan: &PipelinePlan,
    input: &[f64],
    config: &PipelineConfig,
) -> Result<PipelineRun, PipeError> {
    Pipeline::new(plan.clone(), *config)?.run(input)
}
