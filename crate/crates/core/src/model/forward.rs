//! Real-valued forward and backward passes.

use super::layer::{ConvParams, FcParams, LayerSpec};
use super::network::NetworkModel;
use super::ModelError;

/// A `(channels × len)` feature map stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Activation {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * len);
        Self {
            channels,
            len,
            data,
        }
    }

    pub fn signal(samples: &[f64]) -> Self {
        Self::new(1, samples.len(), samples.to_vec())
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

pub(crate) fn conv_forward(p: &ConvParams, x: &Activation) -> Activation {
    let k = p.kernel_len;
    let padded_len = x.len + 2 * p.padding;
    let out_len = padded_len + 1 - k;
    let xp = pad(x, p.padding);
    let mut out = vec![0.0; p.out_ch * out_len];
    for o in 0..p.out_ch {
        let y = &mut out[o * out_len..(o + 1) * out_len];
        y.iter_mut().for_each(|v| *v = p.bias[o]);
        for c in 0..p.in_ch {
            let xc = &xp[c * padded_len..(c + 1) * padded_len];
            for t in 0..k {
                let w = p.w(o, c, t);
                for (yv, xv) in y.iter_mut().zip(&xc[t..t + out_len]) {
                    *yv += w * xv;
                }
            }
        }
    }
    Activation::new(p.out_ch, out_len, out)
}

fn pad(x: &Activation, padding: usize) -> Vec<f64> {
    if padding == 0 {
        return x.data.clone();
    }
    let padded_len = x.len + 2 * padding;
    let mut xp = vec![0.0; x.channels * padded_len];
    for c in 0..x.channels {
        xp[c * padded_len + padding..c * padded_len + padding + x.len]
            .copy_from_slice(x.channel(c));
    }
    xp
}

/// Accumulates parameter gradients into `gw`/`gb` and returns the input gradient.
pub(crate) fn conv_backward(
    p: &ConvParams,
    x: &Activation,
    dy: &Activation,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Activation {
    let k = p.kernel_len;
    let padded_len = x.len + 2 * p.padding;
    let out_len = dy.len;
    let xp = pad(x, p.padding);
    let mut dxp = vec![0.0; x.channels * padded_len];
    for o in 0..p.out_ch {
        let g = dy.channel(o);
        gb[o] += g.iter().sum::<f64>();
        for c in 0..p.in_ch {
            let xc = &xp[c * padded_len..(c + 1) * padded_len];
            let dxc = &mut dxp[c * padded_len..(c + 1) * padded_len];
            for t in 0..k {
                let idx = p.w_index(o, c, t);
                let mut acc = 0.0;
                for (gv, xv) in g.iter().zip(&xc[t..t + out_len]) {
                    acc += gv * xv;
                }
                gw[idx] += acc;
                let w = p.weights[idx];
                for (dv, gv) in dxc[t..t + out_len].iter_mut().zip(g) {
                    *dv += w * gv;
                }
            }
        }
    }
    if p.padding == 0 {
        return Activation::new(x.channels, x.len, dxp);
    }
    let mut dx = vec![0.0; x.channels * x.len];
    for c in 0..x.channels {
        let start = c * padded_len + p.padding;
        dx[c * x.len..(c + 1) * x.len].copy_from_slice(&dxp[start..start + x.len]);
    }
    Activation::new(x.channels, x.len, dx)
}

pub(crate) fn fc_forward(p: &FcParams, x: &Activation) -> Activation {
    let out = (0..p.out_dim)
        .map(|o| {
            let row = &p.weights[o * p.in_dim..(o + 1) * p.in_dim];
            p.bias[o] + row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    Activation::new(p.out_dim, 1, out)
}

pub(crate) fn fc_backward(
    p: &FcParams,
    x: &Activation,
    dy: &Activation,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Activation {
    let mut dx = vec![0.0; p.in_dim];
    for o in 0..p.out_dim {
        let g = dy.data[o];
        gb[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &p.weights[o * p.in_dim..(o + 1) * p.in_dim];
        let grow = &mut gw[o * p.in_dim..(o + 1) * p.in_dim];
        for i in 0..p.in_dim {
            grow[i] += g * x.data[i];
            dx[i] += g * row[i];
        }
    }
    Activation::new(x.channels, x.len, dx)
}

/// Max-pool; also returns the flat index of each selected input.
pub(crate) fn maxpool_forward(
    x: &Activation,
    pool: usize,
    stride: usize,
) -> (Activation, Vec<usize>) {
    let out_len = (x.len - pool) / stride + 1;
    let mut out = Vec::with_capacity(x.channels * out_len);
    let mut arg = Vec::with_capacity(x.channels * out_len);
    for c in 0..x.channels {
        let xc = x.channel(c);
        for j in 0..out_len {
            let start = j * stride;
            let mut best = start;
            for i in start + 1..start + pool {
                if xc[i] > xc[best] {
                    best = i;
                }
            }
            out.push(xc[best]);
            arg.push(c * x.len + best);
        }
    }
    (Activation::new(x.channels, out_len, out), arg)
}

impl NetworkModel {
    /// Class scores for one segment. Quantized models run the fixed-point
    /// path and return dequantized scores.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        if self.quant.is_some() {
            let fx = self.forward_fixed(input)?;
            return Ok(fx.iter().map(|v| v.to_f64()).collect());
        }
        self.forward_real(input)
    }

    /// Real-valued forward, ignoring any quantization plan.
    pub fn forward_real(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .activations_real(input)?
            .pop()
            .map(|a| a.data)
            .unwrap_or_default())
    }

    /// Output of every layer for one input (real arithmetic, inference mode).
    pub fn activations_real(&self, input: &[f64]) -> Result<Vec<Activation>, ModelError> {
        if input.len() != self.input_len {
            return Err(ModelError::InputLength {
                expected: self.input_len,
                got: input.len(),
            });
        }
        let mut x = Activation::signal(input);
        let mut outs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .spec
                .output_shape((x.channels, x.len))
                .map_err(|detail| ModelError::ShapeMismatch {
                    index: i,
                    layer: layer.name.clone(),
                    detail,
                })?;
            x = match &layer.spec {
                LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => conv_forward(p, &x),
                LayerSpec::FullyConnected(p) => fc_forward(p, &x),
                LayerSpec::ReLU => {
                    let mut y = x;
                    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    y
                }
                LayerSpec::MaxPool1D { pool, stride } => maxpool_forward(&x, *pool, *stride).0,
                LayerSpec::Dropout { .. } => x,
            };
            outs.push(x.clone());
        }
        Ok(outs)
    }

    /// Index of the highest score (first one on ties).
    pub fn classify(&self, input: &[f64]) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(input)?))
    }
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
