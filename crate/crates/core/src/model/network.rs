use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layer::{ConvParams, FcParams, Layer, LayerSpec};
use super::quant::QuantPlan;
use super::ModelError;

/// Samples per input segment.
pub const SEGMENT_LEN: usize = 66;
/// Default number of output classes (spike, artefact, background noise).
pub const DEFAULT_CLASSES: usize = 3;
/// Filters per convolution layer in the uncompressed network.
pub const ORIGINAL_FILTERS: usize = 50;

/// A layered 1-D CNN, either in real arithmetic or carrying a fixed-point
/// plan for every parameter tensor and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub input_len: usize,
    pub class_count: usize,
    pub layers: Vec<Layer>,
    pub quant: Option<QuantPlan>,
}

impl NetworkModel {
    pub fn new(input_len: usize, class_count: usize, layers: Vec<Layer>) -> Self {
        Self {
            input_len,
            class_count,
            layers,
            quant: None,
        }
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    /// Propagates `(channels, len)` through every layer, returning the shape
    /// after each one. Fails naming the first layer that does not compose.
    pub fn check_shapes(&self) -> Result<Vec<(usize, usize)>, ModelError> {
        let mut shape = (1, self.input_len);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .spec
                .output_shape(shape)
                .map_err(|detail| ModelError::ShapeMismatch {
                    index: i,
                    layer: layer.name.clone(),
                    detail,
                })?;
            shapes.push(shape);
        }
        if shape != (self.class_count, 1) {
            return Err(ModelError::ShapeMismatch {
                index: self.layers.len().saturating_sub(1),
                layer: self
                    .layers
                    .last()
                    .map(|l| l.name.clone())
                    .unwrap_or_default(),
                detail: format!(
                    "network output {}x{} does not match {} classes",
                    shape.0, shape.1, self.class_count
                ),
            });
        }
        if let Some(plan) = &self.quant {
            if plan.layers.len() != self.layers.len() {
                return Err(ModelError::Format(format!(
                    "quantization plan covers {} layers, model has {}",
                    plan.layers.len(),
                    self.layers.len()
                )));
            }
        }
        Ok(shapes)
    }

    pub fn learnables(&self) -> usize {
        self.layers.iter().map(|l| l.spec.learnables()).sum()
    }

    /// Parameter storage in bytes, `ceil(learnables × bits / 8)`. Real-valued
    /// models count 32 bits per parameter.
    pub fn memory_bytes(&self) -> usize {
        let bits = self.quant.as_ref().map(|q| q.param_bits).unwrap_or(32);
        memory_bytes(self.learnables(), bits)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// He-normal weights, zero biases.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let fan_in = match &layer.spec {
                LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => p.in_ch * p.kernel_len,
                LayerSpec::FullyConnected(p) => p.in_dim,
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            if let Some((w, b)) = layer.spec.params_mut() {
                w.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.quant = None;
    }

    /// Indices of the spatial (kernel 3) convolution layers, in order.
    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.spec, LayerSpec::Conv1D(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn memory_bytes(learnables: usize, bits: u32) -> usize {
    (learnables * bits as usize).div_ceil(8)
}

/// The uncompressed network: three 50-filter convolutions (the first padded
/// to keep 66 samples), two 2:1 max-pools and a 750→classes dense layer.
/// Parameters are zero; call [`NetworkModel::initialize`] before training.
pub fn build_original() -> NetworkModel {
    build_conv_net(SEGMENT_LEN, DEFAULT_CLASSES, [ORIGINAL_FILTERS; 3], 0.5)
}

/// Same topology as [`build_original`] with arbitrary filter counts.
pub fn build_conv_net(
    input_len: usize,
    class_count: usize,
    filters: [usize; 3],
    dropout: f64,
) -> NetworkModel {
    let [f1, f2, f3] = filters;
    // 66 -> 66 (padded) -> 64 -> 32 -> 30 -> 15
    let l2 = input_len - 2;
    let l3 = (l2 / 2 - 2) / 2;
    let layers = vec![
        Layer::new("conv1", LayerSpec::Conv1D(ConvParams::zeros(1, f1, 3, 1))),
        Layer::new("relu1", LayerSpec::ReLU),
        Layer::new("conv2", LayerSpec::Conv1D(ConvParams::zeros(f1, f2, 3, 0))),
        Layer::new("relu2", LayerSpec::ReLU),
        Layer::new("pool2", LayerSpec::MaxPool1D { pool: 2, stride: 2 }),
        Layer::new("conv3", LayerSpec::Conv1D(ConvParams::zeros(f2, f3, 3, 0))),
        Layer::new("relu3", LayerSpec::ReLU),
        Layer::new("pool3", LayerSpec::MaxPool1D { pool: 2, stride: 2 }),
        Layer::new("dropout", LayerSpec::Dropout { rate: dropout }),
        Layer::new(
            "fc",
            LayerSpec::FullyConnected(FcParams::zeros(f3 * l3, class_count)),
        ),
        Layer::new("relu_fc", LayerSpec::ReLU),
    ];
    NetworkModel::new(input_len, class_count, layers)
}

/// Per-layer ranks of a projected network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ProjectedRanks {
    pub conv1_out: usize,
    pub conv2_in: usize,
    pub conv2_out: usize,
    pub conv3_in: usize,
    pub conv3_out: usize,
    pub fc_in: usize,
}

impl ProjectedRanks {
    /// Ranks of the 419-learnable optimized network.
    pub const COMPACT: ProjectedRanks = ProjectedRanks {
        conv1_out: 1,
        conv2_in: 1,
        conv2_out: 1,
        conv3_in: 1,
        conv3_out: 2,
        fc_in: 2,
    };
}

/// Projected topology: every convolution becomes projection-in → core →
/// projection-out (conv1 has a single input channel and no projection-in),
/// and the dense layer becomes projection-in → projection-out.
/// Parameters are zero.
pub fn build_projected(
    input_len: usize,
    class_count: usize,
    channels: [usize; 3],
    ranks: ProjectedRanks,
    dropout: f64,
) -> NetworkModel {
    let [c1, c2, c3] = channels;
    let r = ranks;
    let l2 = input_len - 2;
    let l3 = (l2 / 2 - 2) / 2;
    let pw = |i, o| LayerSpec::PointwiseConv(ConvParams::zeros(i, o, 1, 0));
    let layers = vec![
        Layer::new(
            "conv1.core",
            LayerSpec::Conv1D(ConvParams::zeros(1, r.conv1_out, 3, 1)),
        ),
        Layer::new("conv1.proj_out", pw(r.conv1_out, c1)),
        Layer::new("relu1", LayerSpec::ReLU),
        Layer::new("conv2.proj_in", pw(c1, r.conv2_in)),
        Layer::new(
            "conv2.core",
            LayerSpec::Conv1D(ConvParams::zeros(r.conv2_in, r.conv2_out, 3, 0)),
        ),
        Layer::new("conv2.proj_out", pw(r.conv2_out, c2)),
        Layer::new("relu2", LayerSpec::ReLU),
        Layer::new("pool2", LayerSpec::MaxPool1D { pool: 2, stride: 2 }),
        Layer::new("conv3.proj_in", pw(c2, r.conv3_in)),
        Layer::new(
            "conv3.core",
            LayerSpec::Conv1D(ConvParams::zeros(r.conv3_in, r.conv3_out, 3, 0)),
        ),
        Layer::new("conv3.proj_out", pw(r.conv3_out, c3)),
        Layer::new("relu3", LayerSpec::ReLU),
        Layer::new("pool3", LayerSpec::MaxPool1D { pool: 2, stride: 2 }),
        Layer::new("dropout", LayerSpec::Dropout { rate: dropout }),
        Layer::new(
            "fc.proj_in",
            LayerSpec::FullyConnected(FcParams::zeros(c3 * l3, r.fc_in)),
        ),
        Layer::new(
            "fc.proj_out",
            LayerSpec::FullyConnected(FcParams::zeros(r.fc_in, class_count)),
        ),
        Layer::new("relu_fc", LayerSpec::ReLU),
    ];
    NetworkModel::new(input_len, class_count, layers)
}
