//! Fixed-point execution of a quantized network.
//!
//! Each parameterised layer accumulates in a 32-bit register at
//! `input.frac + weight.frac` fraction bits: the bias is aligned into the
//! register, then products are added input-channel-major, tap-minor via
//! [`mac`], and the register is rescaled into the layer's 10-bit output
//! format. ReLU, max-pool and dropout act on raw values without changing the
//! format.

use serde::{Deserialize, Serialize};

use crate::fxp::{mac, quantize, FxValue, QFormat};

use super::layer::{ConvParams, FcParams, LayerSpec};
use super::network::NetworkModel;
use super::ModelError;

/// Formats of one parameterised layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerQuant {
    pub weight: QFormat,
    pub bias: QFormat,
    pub output: QFormat,
}

impl LayerQuant {
    pub fn accumulator(&self, input: QFormat) -> QFormat {
        QFormat::accumulator(input.frac_bits() + self.weight.frac_bits())
    }
}

/// Fixed-point plan: one entry per layer (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantPlan {
    pub param_bits: u32,
    pub input: QFormat,
    pub layers: Vec<Option<LayerQuant>>,
}

/// A `(channels × len)` fixed-point feature map stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedActivation {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<FxValue>,
}

impl FixedActivation {
    pub fn new(channels: usize, len: usize, data: Vec<FxValue>) -> Self {
        debug_assert_eq!(data.len(), channels * len);
        Self {
            channels,
            len,
            data,
        }
    }

    pub fn at(&self, c: usize, t: usize) -> FxValue {
        self.data[c * self.len + t]
    }
}

/// Weights and bias of a layer as fixed-point values.
#[derive(Debug, Clone)]
pub struct FixedParams {
    pub weights: Vec<FxValue>,
    pub bias: Vec<FxValue>,
}

impl FixedParams {
    pub fn from_real(weights: &[f64], bias: &[f64], q: &LayerQuant) -> Self {
        Self {
            weights: weights.iter().map(|&w| quantize(w, q.weight)).collect(),
            bias: bias.iter().map(|&b| quantize(b, q.bias)).collect(),
        }
    }
}

pub fn fixed_conv(
    p: &ConvParams,
    fp: &FixedParams,
    q: &LayerQuant,
    x: &FixedActivation,
) -> FixedActivation {
    let in_fmt = x.data.first().map(|v| v.format()).unwrap_or(q.output);
    let acc_fmt = q.accumulator(in_fmt);
    let zero = FxValue::zero(in_fmt);
    let out_len = x.len + 2 * p.padding + 1 - p.kernel_len;
    let mut out = Vec::with_capacity(p.out_ch * out_len);
    for o in 0..p.out_ch {
        for t in 0..out_len {
            let mut acc = fp.bias[o].rescale(acc_fmt);
            for c in 0..p.in_ch {
                for k in 0..p.kernel_len {
                    let pos = t + k;
                    let xv = if pos < p.padding || pos >= p.padding + x.len {
                        zero
                    } else {
                        x.at(c, pos - p.padding)
                    };
                    acc = mac(xv, fp.weights[p.w_index(o, c, k)], acc);
                }
            }
            out.push(acc.rescale(q.output));
        }
    }
    FixedActivation::new(p.out_ch, out_len, out)
}

pub fn fixed_fc(
    p: &FcParams,
    fp: &FixedParams,
    q: &LayerQuant,
    x: &FixedActivation,
) -> FixedActivation {
    let in_fmt = x.data.first().map(|v| v.format()).unwrap_or(q.output);
    let acc_fmt = q.accumulator(in_fmt);
    let out = (0..p.out_dim)
        .map(|o| {
            let mut acc = fp.bias[o].rescale(acc_fmt);
            for i in 0..p.in_dim {
                acc = mac(x.data[i], fp.weights[o * p.in_dim + i], acc);
            }
            acc.rescale(q.output)
        })
        .collect();
    FixedActivation::new(p.out_dim, 1, out)
}

pub fn fixed_relu(x: &FixedActivation) -> FixedActivation {
    FixedActivation::new(x.channels, x.len, x.data.iter().map(|v| v.relu()).collect())
}

pub fn fixed_maxpool(x: &FixedActivation, pool: usize, stride: usize) -> FixedActivation {
    let out_len = (x.len - pool) / stride + 1;
    let mut out = Vec::with_capacity(x.channels * out_len);
    for c in 0..x.channels {
        for j in 0..out_len {
            let mut best = x.at(c, j * stride);
            for i in 1..pool {
                let v = x.at(c, j * stride + i);
                if v.raw() > best.raw() {
                    best = v;
                }
            }
            out.push(best);
        }
    }
    FixedActivation::new(x.channels, out_len, out)
}

impl NetworkModel {
    fn plan(&self) -> Result<&QuantPlan, ModelError> {
        self.quant.as_ref().ok_or(ModelError::NotQuantized)
    }

    /// Quantizes real samples into the plan's input format.
    pub fn quantize_input(&self, input: &[f64]) -> Result<Vec<FxValue>, ModelError> {
        let plan = self.plan()?;
        Ok(input.iter().map(|&x| quantize(x, plan.input)).collect())
    }

    /// Fixed-point parameters of layer `index`.
    pub fn fixed_params(
        &self,
        index: usize,
    ) -> Result<Option<(FixedParams, LayerQuant)>, ModelError> {
        let plan = self.plan()?;
        let layer = &self.layers[index];
        match (
            layer.spec.params(),
            plan.layers.get(index).copied().flatten(),
        ) {
            (Some((w, b)), Some(q)) => Ok(Some((FixedParams::from_real(w, b, &q), q))),
            (Some(_), None) => Err(ModelError::Format(format!(
                "layer {} has parameters but no quantization entry",
                layer.name
            ))),
            _ => Ok(None),
        }
    }

    /// Fixed-point output of every layer.
    pub fn activations_fixed(&self, input: &[FxValue]) -> Result<Vec<FixedActivation>, ModelError> {
        self.check_shapes()?;
        if input.len() != self.input_len {
            return Err(ModelError::InputLength {
                expected: self.input_len,
                got: input.len(),
            });
        }
        let mut x = FixedActivation::new(1, input.len(), input.to_vec());
        let mut outs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            x = match &layer.spec {
                LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => {
                    let (fp, q) = self.fixed_params(i)?.expect("parameterised layer");
                    fixed_conv(p, &fp, &q, &x)
                }
                LayerSpec::FullyConnected(p) => {
                    let (fp, q) = self.fixed_params(i)?.expect("parameterised layer");
                    fixed_fc(p, &fp, &q, &x)
                }
                LayerSpec::ReLU => fixed_relu(&x),
                LayerSpec::MaxPool1D { pool, stride } => fixed_maxpool(&x, *pool, *stride),
                LayerSpec::Dropout { .. } => x,
            };
            outs.push(x.clone());
        }
        Ok(outs)
    }

    /// Fixed-point scores for real input samples.
    pub fn forward_fixed(&self, input: &[f64]) -> Result<Vec<FxValue>, ModelError> {
        let q = self.quantize_input(input)?;
        self.forward_fixed_values(&q)
    }

    pub fn forward_fixed_values(&self, input: &[FxValue]) -> Result<Vec<FxValue>, ModelError> {
        Ok(self
            .activations_fixed(input)?
            .pop()
            .map(|a| a.data)
            .unwrap_or_default())
    }

    /// Arg-max of the fixed-point scores (first index on ties).
    pub fn classify_fixed(&self, input: &[FxValue]) -> Result<usize, ModelError> {
        Ok(argmax_fixed(&self.forward_fixed_values(input)?))
    }
}

pub fn argmax_fixed(scores: &[FxValue]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.raw() > scores[best].raw() {
            best = i;
        }
    }
    best
}
