//! JSON model file.
//!
//! One document holds the topology, the fixed-point plan (if any) and every
//! parameter tensor flattened in SSCB row-major order. Quantized models store
//! raw integers next to their format; real models store values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fxp::{quantize, QFormat};

use super::layer::{ConvParams, FcParams, Layer, LayerSpec, TensorShape};
use super::network::NetworkModel;
use super::quant::{LayerQuant, QuantPlan};
use super::ModelError;

pub const FORMAT_TAG: &str = "dsd-model/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    input_len: usize,
    class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantization: Option<QuantHeader>,
    learnables: usize,
    memory_bytes: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantHeader {
    param_bits: u32,
    input: QFormat,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorFile {
    shape: [usize; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<QFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<Vec<i64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerFile {
    Conv1d {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel_len: usize,
        padding: usize,
        weights: TensorFile,
        bias: TensorFile,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_format: Option<QFormat>,
    },
    Pointwise {
        name: String,
        in_ch: usize,
        out_ch: usize,
        weights: TensorFile,
        bias: TensorFile,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_format: Option<QFormat>,
    },
    Fc {
        name: String,
        in_dim: usize,
        out_dim: usize,
        weights: TensorFile,
        bias: TensorFile,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        output_format: Option<QFormat>,
    },
    Relu {
        name: String,
    },
    Maxpool1d {
        name: String,
        pool: usize,
        stride: usize,
    },
    Dropout {
        name: String,
        rate: f64,
    },
}

/// `[out][in][tap]` → SSCB `1×k×in×out` row-major, i.e. `(tap, in, out)`.
fn conv_to_sscb(p: &ConvParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.weights.len());
    for k in 0..p.kernel_len {
        for c in 0..p.in_ch {
            for o in 0..p.out_ch {
                v.push(p.w(o, c, k));
            }
        }
    }
    v
}

fn conv_from_sscb(v: &[f64], in_ch: usize, out_ch: usize, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; v.len()];
    let mut it = v.iter();
    for t in 0..k {
        for c in 0..in_ch {
            for o in 0..out_ch {
                w[(o * in_ch + c) * k + t] = *it.next().expect("length checked");
            }
        }
    }
    w
}

fn tensor_out(values: Vec<f64>, shape: TensorShape, fmt: Option<QFormat>) -> TensorFile {
    match fmt {
        Some(f) => TensorFile {
            shape: shape.dims(),
            format: Some(f),
            values: None,
            raw: Some(values.iter().map(|&x| quantize(x, f).raw()).collect()),
        },
        None => TensorFile {
            shape: shape.dims(),
            format: None,
            values: Some(values),
            raw: None,
        },
    }
}

fn tensor_in(
    t: TensorFile,
    expected: TensorShape,
    field: &str,
) -> Result<(Vec<f64>, Option<QFormat>), ModelError> {
    if t.shape != expected.dims() {
        return Err(ModelError::Format(format!(
            "field `{field}`: shape {:?} does not match {expected}",
            t.shape
        )));
    }
    let values = match (t.values, t.raw, t.format) {
        (Some(v), None, _) => v,
        (None, Some(raw), Some(f)) => raw.iter().map(|&r| r as f64 * f.lsb()).collect(),
        (None, Some(_), None) => {
            return Err(ModelError::Format(format!(
                "field `{field}`: `raw` requires `format`"
            )))
        }
        _ => {
            return Err(ModelError::Format(format!(
                "field `{field}`: exactly one of `values` or `raw` required"
            )))
        }
    };
    if values.len() != expected.numel() {
        return Err(ModelError::Format(format!(
            "field `{field}`: {} entries for shape {expected}",
            values.len()
        )));
    }
    Ok((values, t.format))
}

impl NetworkModel {
    pub fn to_json(&self) -> Result<String, ModelError> {
        self.check_shapes()?;
        let q = |i: usize| self.quant.as_ref().and_then(|p| p.layers[i]);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let name = l.name.clone();
                let lq = q(i);
                match &l.spec {
                    LayerSpec::Conv1D(p) | LayerSpec::PointwiseConv(p) => {
                        let (ws, bs) = l.spec.param_shapes().expect("conv");
                        let weights = tensor_out(conv_to_sscb(p), ws, lq.map(|q| q.weight));
                        let bias = tensor_out(p.bias.clone(), bs, lq.map(|q| q.bias));
                        let output_format = lq.map(|q| q.output);
                        if matches!(l.spec, LayerSpec::Conv1D(_)) {
                            LayerFile::Conv1d {
                                name,
                                in_ch: p.in_ch,
                                out_ch: p.out_ch,
                                kernel_len: p.kernel_len,
                                padding: p.padding,
                                weights,
                                bias,
                                output_format,
                            }
                        } else {
                            LayerFile::Pointwise {
                                name,
                                in_ch: p.in_ch,
                                out_ch: p.out_ch,
                                weights,
                                bias,
                                output_format,
                            }
                        }
                    }
                    LayerSpec::FullyConnected(p) => {
                        let (ws, bs) = l.spec.param_shapes().expect("fc");
                        LayerFile::Fc {
                            name,
                            in_dim: p.in_dim,
                            out_dim: p.out_dim,
                            weights: tensor_out(p.weights.clone(), ws, lq.map(|q| q.weight)),
                            bias: tensor_out(p.bias.clone(), bs, lq.map(|q| q.bias)),
                            output_format: lq.map(|q| q.output),
                        }
                    }
                    LayerSpec::ReLU => LayerFile::Relu { name },
                    LayerSpec::MaxPool1D { pool, stride } => LayerFile::Maxpool1d {
                        name,
                        pool: *pool,
                        stride: *stride,
                    },
                    LayerSpec::Dropout { rate } => LayerFile::Dropout { name, rate: *rate },
                }
            })
            .collect();
        let file = ModelFile {
            format: FORMAT_TAG.to_string(),
            input_len: self.input_len,
            class_count: self.class_count,
            quantization: self.quant.as_ref().map(|p| QuantHeader {
                param_bits: p.param_bits,
                input: p.input,
            }),
            learnables: self.learnables(),
            memory_bytes: self.memory_bytes(),
            layers,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ModelFile = serde_path_to_error::deserialize(de)
            .map_err(|e| ModelError::Format(format!("field `{}`: {}", e.path(), e.inner())))?;
        if file.format != FORMAT_TAG {
            return Err(ModelError::Format(format!(
                "field `format`: expected {FORMAT_TAG:?}, found {:?}",
                file.format
            )));
        }
        let quantized = file.quantization.is_some();
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut plan_layers = Vec::with_capacity(file.layers.len());
        for lf in file.layers {
            let (layer, lq) = layer_from_file(lf, quantized)?;
            layers.push(layer);
            plan_layers.push(lq);
        }
        let mut model = NetworkModel::new(file.input_len, file.class_count, layers);
        model.quant = file.quantization.map(|h| QuantPlan {
            param_bits: h.param_bits,
            input: h.input,
            layers: plan_layers,
        });
        model.check_shapes()?;
        if model.learnables() != file.learnables {
            return Err(ModelError::Format(format!(
                "field `learnables`: header says {}, tensors hold {}",
                file.learnables,
                model.learnables()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn layer_quant(
    name: &str,
    wf: Option<QFormat>,
    bf: Option<QFormat>,
    out: Option<QFormat>,
    quantized: bool,
) -> Result<Option<LayerQuant>, ModelError> {
    match (quantized, wf, bf, out) {
        (false, None, None, None) => Ok(None),
        (true, Some(weight), Some(bias), Some(output)) => Ok(Some(LayerQuant {
            weight,
            bias,
            output,
        })),
        (true, ..) => Err(ModelError::Format(format!(
            "layer `{name}`: quantized model needs weight, bias and `output_format` formats"
        ))),
        (false, ..) => Err(ModelError::Format(format!(
            "layer `{name}`: formats present but model has no `quantization` header"
        ))),
    }
}

fn layer_from_file(
    lf: LayerFile,
    quantized: bool,
) -> Result<(Layer, Option<LayerQuant>), ModelError> {
    Ok(match lf {
        LayerFile::Conv1d {
            name,
            in_ch,
            out_ch,
            kernel_len,
            padding,
            weights,
            bias,
            output_format,
        } => {
            let ws = TensorShape::new(1, kernel_len, in_ch, out_ch)?;
            let bs = TensorShape::new(1, 1, out_ch, 1)?;
            let (w, wf) = tensor_in(weights, ws, &format!("{name}.weights"))?;
            let (b, bf) = tensor_in(bias, bs, &format!("{name}.bias"))?;
            let lq = layer_quant(&name, wf, bf, output_format, quantized)?;
            let p = ConvParams {
                in_ch,
                out_ch,
                kernel_len,
                padding,
                weights: conv_from_sscb(&w, in_ch, out_ch, kernel_len),
                bias: b,
            };
            (Layer::new(name, LayerSpec::Conv1D(p)), lq)
        }
        LayerFile::Pointwise {
            name,
            in_ch,
            out_ch,
            weights,
            bias,
            output_format,
        } => {
            let ws = TensorShape::new(1, 1, in_ch, out_ch)?;
            let bs = TensorShape::new(1, 1, out_ch, 1)?;
            let (w, wf) = tensor_in(weights, ws, &format!("{name}.weights"))?;
            let (b, bf) = tensor_in(bias, bs, &format!("{name}.bias"))?;
            let lq = layer_quant(&name, wf, bf, output_format, quantized)?;
            let p = ConvParams {
                in_ch,
                out_ch,
                kernel_len: 1,
                padding: 0,
                weights: conv_from_sscb(&w, in_ch, out_ch, 1),
                bias: b,
            };
            (Layer::new(name, LayerSpec::PointwiseConv(p)), lq)
        }
        LayerFile::Fc {
            name,
            in_dim,
            out_dim,
            weights,
            bias,
            output_format,
        } => {
            let ws = TensorShape::new(out_dim, in_dim, 1, 1)?;
            let bs = TensorShape::new(out_dim, 1, 1, 1)?;
            let (w, wf) = tensor_in(weights, ws, &format!("{name}.weights"))?;
            let (b, bf) = tensor_in(bias, bs, &format!("{name}.bias"))?;
            let lq = layer_quant(&name, wf, bf, output_format, quantized)?;
            let p = FcParams {
                in_dim,
                out_dim,
                weights: w,
                bias: b,
            };
            (Layer::new(name, LayerSpec::FullyConnected(p)), lq)
        }
        LayerFile::Relu { name } => (Layer::new(name, LayerSpec::ReLU), None),
        LayerFile::Maxpool1d { name, pool, stride } => (
            Layer::new(name, LayerSpec::MaxPool1D { pool, stride }),
            None,
        ),
        LayerFile::Dropout { name, rate } => (Layer::new(name, LayerSpec::Dropout { rate }), None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::build_original;

    #[test]
    fn real_round_trip() {
        let mut m = build_original();
        m.initialize(5);
        let back = NetworkModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_field_is_named() {
        let mut m = build_original();
        m.initialize(5);
        let text = m.to_json().unwrap().replacen("\"in_ch\"", "\"in_chx\"", 1);
        let err = NetworkModel::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("in_ch"), "{err}");
    }

    #[test]
    fn bad_shape_is_named() {
        let m = build_original();
        let mut doc: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        doc["layers"][0]["weights"]["shape"][3] = 49.into();
        let err = NetworkModel::from_json(&doc.to_string())
            .unwrap_err()
            .to_string();
        assert!(err.contains("conv1.weights"), "{err}");
    }
}
