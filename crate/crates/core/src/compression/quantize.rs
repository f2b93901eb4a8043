//! Post-training quantization to power-of-two fixed-point formats.

use crate::fxp::{covering_frac_bits, quantize, QFormat};
use crate::model::{LayerQuant, NetworkModel, QuantPlan};

use super::CompressionError;

/// Width of every activation and layer output.
pub const ACTIVATION_BITS: u32 = 10;

/// Output format of each parameterised layer, covering the largest magnitude
/// that layer produces over `calibration` in real arithmetic. Without
/// calibration data every output gets the sample format.
pub fn calibrate_output_formats(
    model: &NetworkModel,
    calibration: &[Vec<f64>],
) -> Result<Vec<Option<QFormat>>, CompressionError> {
    let mut max_abs = vec![0.0f64; model.layers.len()];
    for x in calibration {
        for (i, a) in model.activations_real(x)?.iter().enumerate() {
            let m = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            max_abs[i] = max_abs[i].max(m);
        }
    }
    Ok(model
        .layers
        .iter()
        .zip(max_abs)
        .map(|(l, m)| {
            l.spec.has_params().then(|| {
                if calibration.is_empty() {
                    QFormat::sample()
                } else {
                    QFormat::signed(ACTIVATION_BITS, covering_frac_bits(m, ACTIVATION_BITS))
                }
            })
        })
        .collect())
}

fn tensor_format(values: &[f64], bits: u32) -> QFormat {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    QFormat::signed(bits, covering_frac_bits(m, bits))
}

/// Quantizes weights and biases to `bits`-bit signed formats with one
/// power-of-two scale per tensor, chosen to cover the tensor's largest
/// magnitude. The real-valued parameters are replaced by their on-grid
/// values and the returned model carries a fixed-point plan.
pub fn quantize_model(
    model: &NetworkModel,
    bits: u32,
    calibration: &[Vec<f64>],
) -> Result<NetworkModel, CompressionError> {
    if !(2..=16).contains(&bits) {
        return Err(CompressionError::Config(format!(
            "{bits}-bit parameters are not supported"
        )));
    }
    let mut q = model.clone();
    q.quant = None;
    let mut formats = Vec::with_capacity(q.layers.len());
    for layer in &mut q.layers {
        formats.push(layer.spec.params_mut().map(|(w, b)| {
            let wf = tensor_format(w, bits);
            let bf = tensor_format(b, bits);
            w.iter_mut().for_each(|v| *v = quantize(*v, wf).to_f64());
            b.iter_mut().for_each(|v| *v = quantize(*v, bf).to_f64());
            (wf, bf)
        }));
    }
    let outputs = calibrate_output_formats(&q, calibration)?;
    let layers = formats
        .into_iter()
        .zip(outputs)
        .map(|(f, o)| match (f, o) {
            (Some((weight, bias)), Some(output)) => Some(LayerQuant {
                weight,
                bias,
                output,
            }),
            _ => None,
        })
        .collect();
    q.quant = Some(QuantPlan {
        param_bits: bits,
        input: QFormat::sample(),
        layers,
    });
    Ok(q)
}
