use serde::{Deserialize, Serialize};

use super::ModelError;

/// Tensor shape in SSCB order (spatial, spatial, channel, batch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub s1: usize,
    pub s2: usize,
    pub c: usize,
    pub b: usize,
}

impl TensorShape {
    pub fn new(s1: usize, s2: usize, c: usize, b: usize) -> Result<Self, ModelError> {
        if s1 == 0 || s2 == 0 || c == 0 || b == 0 {
            return Err(ModelError::Format(format!(
                "tensor shape {s1}x{s2}x{c}x{b} has a zero extent"
            )));
        }
        Ok(Self { s1, s2, c, b })
    }

    pub fn numel(&self) -> usize {
        self.s1 * self.s2 * self.c * self.b
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.s1, self.s2, self.c, self.b]
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.s1, self.s2, self.c, self.b)
    }
}

/// Weights and bias of a 1-D convolution. Weights are stored `[out][in][tap]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel_len: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel_len: usize, padding: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel_len,
            padding,
            weights: vec![0.0; out_ch * in_ch * kernel_len],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    pub fn w(&self, o: usize, c: usize, k: usize) -> f64 {
        self.weights[(o * self.in_ch + c) * self.kernel_len + k]
    }

    #[inline]
    pub fn w_index(&self, o: usize, c: usize, k: usize) -> usize {
        (o * self.in_ch + c) * self.kernel_len + k
    }

    pub fn out_len(&self, in_len: usize) -> Option<usize> {
        (in_len + 2 * self.padding + 1).checked_sub(self.kernel_len)
    }

    /// L1 norm of output filter `o`.
    pub fn filter_l1(&self, o: usize) -> f64 {
        let n = self.in_ch * self.kernel_len;
        self.weights[o * n..(o + 1) * n]
            .iter()
            .map(|w| w.abs())
            .sum()
    }
}

/// Dense layer over the channel-major flattened input. Weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FcParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.in_dim + i]
    }
}

/// The closed set of layer kinds the network can contain.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Spatial convolution with kernel length 3 and stride 1.
    Conv1D(ConvParams),
    /// 1x1 convolution; used for projection-in and projection-out sublayers.
    PointwiseConv(ConvParams),
    ReLU,
    MaxPool1D {
        pool: usize,
        stride: usize,
    },
    FullyConnected(FcParams),
    /// Inert outside training.
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D(_) => "conv1d",
            LayerSpec::PointwiseConv(_) => "pointwise",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool1D { .. } => "maxpool1d",
            LayerSpec::FullyConnected(_) => "fc",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv1D(_) | LayerSpec::PointwiseConv(_) | LayerSpec::FullyConnected(_)
        )
    }

    pub fn conv(&self) -> Option<&ConvParams> {
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => Some(p),
            _ => None,
        }
    }

    pub fn conv_mut(&mut self) -> Option<&mut ConvParams> {
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => Some(p),
            _ => None,
        }
    }

    pub fn fc(&self) -> Option<&FcParams> {
        match self {
            LayerSpec::FullyConnected(p) => Some(p),
            _ => None,
        }
    }

    /// `(weights, bias)` of a parameterised layer.
    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => Some((&p.weights, &p.bias)),
            LayerSpec::FullyConnected(p) => Some((&p.weights, &p.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => {
                Some((&mut p.weights, &mut p.bias))
            }
            LayerSpec::FullyConnected(p) => Some((&mut p.weights, &mut p.bias)),
            _ => None,
        }
    }

    /// SSCB shapes of `(W, B)`. Convolutions: `W 1×k×in×out`, `B 1×1×out`;
    /// dense: `W out×in`, `B out×1`.
    pub fn param_shapes(&self) -> Option<(TensorShape, TensorShape)> {
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => Some((
                TensorShape {
                    s1: 1,
                    s2: p.kernel_len,
                    c: p.in_ch,
                    b: p.out_ch,
                },
                TensorShape {
                    s1: 1,
                    s2: 1,
                    c: p.out_ch,
                    b: 1,
                },
            )),
            LayerSpec::FullyConnected(p) => Some((
                TensorShape {
                    s1: p.out_dim,
                    s2: p.in_dim,
                    c: 1,
                    b: 1,
                },
                TensorShape {
                    s1: p.out_dim,
                    s2: 1,
                    c: 1,
                    b: 1,
                },
            )),
            _ => None,
        }
    }

    pub fn learnables(&self) -> usize {
        self.params().map(|(w, b)| w.len() + b.len()).unwrap_or(0)
    }

    /// Output `(channels, len)` for an input `(channels, len)`.
    pub fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize), String> {
        let (ch, len) = input;
        match self {
            LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => {
                if p.in_ch != ch {
                    return Err(format!("expects {} input channels, got {ch}", p.in_ch));
                }
                if matches!(self, LayerSpec::PointwiseConv(_)) && p.kernel_len != 1 {
                    return Err(format!("pointwise kernel length {} != 1", p.kernel_len));
                }
                if p.weights.len() != p.out_ch * p.in_ch * p.kernel_len || p.bias.len() != p.out_ch
                {
                    return Err("parameter array length disagrees with declared shape".into());
                }
                let out = p
                    .out_len(len)
                    .filter(|&l| l > 0)
                    .ok_or_else(|| format!("input length {len} shorter than kernel"))?;
                Ok((p.out_ch, out))
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input),
            LayerSpec::MaxPool1D { pool, stride } => {
                if *pool == 0 || *stride == 0 || len < *pool {
                    return Err(format!("cannot pool length {len} with window {pool}"));
                }
                Ok((ch, (len - pool) / stride + 1))
            }
            LayerSpec::FullyConnected(p) => {
                if p.in_dim != ch * len {
                    return Err(format!(
                        "expects {} inputs, got {ch}x{len} = {}",
                        p.in_dim,
                        ch * len
                    ));
                }
                if p.weights.len() != p.in_dim * p.out_dim || p.bias.len() != p.out_dim {
                    return Err("parameter array length disagrees with declared shape".into());
                }
                Ok((p.out_dim, 1))
            }
        }
    }
}

/// A named layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
}

impl Layer {
    pub fn new(name: impl Into<String>, spec: LayerSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }
}
