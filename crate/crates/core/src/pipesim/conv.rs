//! Convolution block: engines of three MAC units in series, one per kernel
//! tap. An engine shifts the input array by one sample per cycle and emits
//! one output per shift, so a length-`n` valid convolution takes `n − 2`
//! cycles per (output, input) channel pair. With several engines the output
//! range is split into contiguous chunks, each engine reading its chunk plus
//! the two overlapping samples it needs.

use serde::{Deserialize, Serialize};

use crate::fxp::{mac, FxValue, QFormat};
use crate::model::FixedActivation;

use super::PipeError;

pub const MACS_PER_ENGINE: usize = 3;

/// Fixed-point kernels resident in a convolution block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernels {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Zero samples added at each end before shifting.
    pub padding: usize,
    /// `[out][in][tap]`, three taps.
    pub weights: Vec<FxValue>,
    pub bias: Vec<FxValue>,
    pub accumulator: QFormat,
    pub output: QFormat,
}

impl ConvKernels {
    fn check(&self) -> Result<(), PipeError> {
        if self.weights.len() != self.out_ch * self.in_ch * 3 || self.bias.len() != self.out_ch {
            return Err(PipeError::Shape(format!(
                "{} weights and {} biases for a 3-tap {}→{} kernel",
                self.weights.len(),
                self.bias.len(),
                self.in_ch,
                self.out_ch
            )));
        }
        Ok(())
    }

    /// Output length for an input of `n` samples.
    pub fn out_len(&self, n: usize) -> Option<usize> {
        (n + 2 * self.padding).checked_sub(2).filter(|&l| l > 0)
    }

    /// Compute cycles with `engines` engines on an `n`-sample input.
    pub fn cycles(&self, n: usize, engines: usize) -> u64 {
        let out = self.out_len(n).unwrap_or(0);
        (self.out_ch * self.in_ch * out.div_ceil(engines.max(1))) as u64
    }
}

/// Runs the convolution on `input` with `mac_count` MAC units
/// (`mac_count / 3` engines). Returns the output map and compute cycles.
pub fn simulate_conv_block(
    input: &FixedActivation,
    kernels: &ConvKernels,
    mac_count: usize,
) -> Result<(FixedActivation, u64), PipeError> {
    kernels.check()?;
    if mac_count == 0 || mac_count % MACS_PER_ENGINE != 0 {
        return Err(PipeError::Shape(format!(
            "{mac_count} MACs is not a positive multiple of {MACS_PER_ENGINE}"
        )));
    }
    if input.channels != kernels.in_ch {
        return Err(PipeError::Shape(format!(
            "{} input channels for a kernel expecting {}",
            input.channels, kernels.in_ch
        )));
    }
    let n = input.len;
    if n + 2 * kernels.padding < 3 {
        return Err(PipeError::Shape(format!(
            "input of {n} samples is shorter than the kernel"
        )));
    }
    let engines = mac_count / MACS_PER_ENGINE;
    let padded_len = n + 2 * kernels.padding;
    let out_len = padded_len - 2;
    let zero = FxValue::zero(
        input
            .data
            .first()
            .map(|v| v.format())
            .unwrap_or(kernels.output),
    );
    // padded input array per channel, as held by the block's shift registers
    let padded: Vec<Vec<FxValue>> = (0..input.channels)
        .map(|c| {
            (0..padded_len)
                .map(|i| {
                    if i < kernels.padding || i >= kernels.padding + n {
                        zero
                    } else {
                        input.at(c, i - kernels.padding)
                    }
                })
                .collect()
        })
        .collect();
    let chunk = out_len.div_ceil(engines);
    let mut out = vec![FxValue::zero(kernels.output); kernels.out_ch * out_len];
    for o in 0..kernels.out_ch {
        for e in 0..engines {
            let first = e * chunk;
            let last = ((e + 1) * chunk).min(out_len);
            if first >= last {
                continue;
            }
            // each engine works on its own slice of chunk + 2 samples
            let mut partial: Vec<FxValue> = (first..last)
                .map(|_| kernels.bias[o].rescale(kernels.accumulator))
                .collect();
            for (c, samples) in padded.iter().enumerate() {
                let slice = &samples[first..last + 2];
                let taps =
                    &kernels.weights[(o * kernels.in_ch + c) * 3..(o * kernels.in_ch + c) * 3 + 3];
                for (shift, ps) in partial.iter_mut().enumerate() {
                    let mut acc = *ps;
                    for (k, w) in taps.iter().enumerate() {
                        acc = mac(slice[shift + k], *w, acc);
                    }
                    *ps = acc;
                }
            }
            for (t, ps) in (first..last).zip(partial) {
                out[o * out_len + t] = ps.rescale(kernels.output);
            }
        }
    }
    Ok((
        FixedActivation::new(kernels.out_ch, out_len, out),
        kernels.cycles(n, engines),
    ))
}
