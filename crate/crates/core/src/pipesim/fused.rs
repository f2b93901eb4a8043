//! Fused processing block: projection-out, ReLU, optional max-pool and the
//! next projection-in computed element by element,
//!
//! `e_j = b' + Σ_i w'_i · max(0, w_i a_j + b_i)`,
//!
//! so the wide `m`-channel map between the two projections never leaves the
//! block. Each mapper produces one output element in `m` cycles per
//! projected channel; with max-pooling a mapper consumes `pool` input
//! elements through a comparator. When the tail is the dense layer's
//! projection-in, mapper results are reduced into the dense outputs.

use serde::{Deserialize, Serialize};

use crate::fxp::{mac, FxValue, QFormat};
use crate::model::FixedActivation;

use super::PipeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FusedTail {
    /// Pointwise projection-in: `[out][m]` weights.
    Pointwise {
        out_ch: usize,
        weights: Vec<FxValue>,
        bias: Vec<FxValue>,
        accumulator: QFormat,
        output: QFormat,
    },
    /// Dense projection-in over the flattened `[m][len]` map:
    /// `[out][m·len]` weights.
    Dense {
        out_dim: usize,
        weights: Vec<FxValue>,
        bias: Vec<FxValue>,
        accumulator: QFormat,
        output: QFormat,
    },
}

impl FusedTail {
    fn out_count(&self) -> usize {
        match self {
            FusedTail::Pointwise { out_ch, .. } => *out_ch,
            FusedTail::Dense { out_dim, .. } => *out_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedParams {
    pub in_ch: usize,
    /// Rows of the projected space (`m`).
    pub rows: usize,
    /// `[m][in]` projection-out weights.
    pub weights: Vec<FxValue>,
    pub bias: Vec<FxValue>,
    pub accumulator: QFormat,
    pub output: QFormat,
    /// `(pool, stride)` of the comparator stage.
    pub pool: Option<(usize, usize)>,
    pub tail: FusedTail,
}

impl FusedParams {
    fn check(&self) -> Result<(), PipeError> {
        if self.weights.len() != self.rows * self.in_ch || self.bias.len() != self.rows {
            return Err(PipeError::Shape(format!(
                "projection-out holds {} weights and {} biases, expected {}×{} and {}",
                self.weights.len(),
                self.bias.len(),
                self.rows,
                self.in_ch,
                self.rows
            )));
        }
        let (n_out, w, b) = match &self.tail {
            FusedTail::Pointwise {
                out_ch,
                weights,
                bias,
                ..
            } => (*out_ch, weights.len(), bias.len()),
            FusedTail::Dense {
                out_dim,
                weights,
                bias,
                ..
            } => (*out_dim, weights.len(), bias.len()),
        };
        let per_out = match self.tail {
            FusedTail::Pointwise { .. } => self.rows,
            FusedTail::Dense { .. } => {
                if n_out == 0 || w % n_out != 0 || (w / n_out) % self.rows != 0 {
                    return Err(PipeError::Shape(format!(
                        "dense projection-in holds {w} weights for {n_out} outputs of a {}-row map",
                        self.rows
                    )));
                }
                w / n_out
            }
        };
        if w != n_out * per_out || b != n_out {
            return Err(PipeError::Shape(format!(
                "projection-in holds {w} weights and {b} biases, expected {n_out}×{per_out} and {n_out}"
            )));
        }
        Ok(())
    }

    /// Number of elements produced by mappers for an `n`-element input.
    pub fn mapped_len(&self, n: usize) -> usize {
        match self.pool {
            Some((pool, stride)) if n >= pool => (n - pool) / stride + 1,
            Some(_) => 0,
            None => n,
        }
    }

    /// Compute cycles with `mappers` mappers on an `n`-element input.
    pub fn cycles(&self, n: usize, mappers: usize) -> u64 {
        let elements = self.mapped_len(n);
        let per_element = self.rows * self.in_ch.max(self.tail.out_count());
        let mut cycles = elements.div_ceil(mappers.max(1)) * per_element;
        if self.pool.is_some() {
            cycles += 1;
        }
        if matches!(self.tail, FusedTail::Dense { .. }) {
            let partials = mappers.max(1).min(elements).max(1);
            cycles += ceil_log2(partials);
        }
        cycles as u64
    }
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize
}

/// One mapper: the `m` rectified projection-out values for input element
/// `j`.
fn map_element(input: &FixedActivation, p: &FusedParams, j: usize) -> Vec<FxValue> {
    (0..p.rows)
        .map(|i| {
            let mut acc = p.bias[i].rescale(p.accumulator);
            for c in 0..p.in_ch {
                acc = mac(input.at(c, j), p.weights[i * p.in_ch + c], acc);
            }
            acc.rescale(p.output).relu()
        })
        .collect()
}

/// Runs the fused block with `mappers` parallel mappers. Returns the output
/// map (`[out][len]` for a pointwise tail, `[out]` for a dense tail) and
/// compute cycles.
pub fn simulate_fused_block(
    input: &FixedActivation,
    params: &FusedParams,
    mappers: usize,
) -> Result<(FixedActivation, u64), PipeError> {
    params.check()?;
    if mappers == 0 {
        return Err(PipeError::Shape(
            "a fused block needs at least one mapper".into(),
        ));
    }
    if input.channels != params.in_ch {
        return Err(PipeError::Shape(format!(
            "{} input channels for a fused block expecting {}",
            input.channels, params.in_ch
        )));
    }
    let len = params.mapped_len(input.len);
    // d[j][i]: rectified (and pooled) projection-out rows per element
    let d: Vec<Vec<FxValue>> = (0..len)
        .map(|j| match params.pool {
            None => map_element(input, params, j),
            Some((pool, stride)) => {
                let mut best = map_element(input, params, j * stride);
                for k in 1..pool {
                    let next = map_element(input, params, j * stride + k);
                    for (b, v) in best.iter_mut().zip(next) {
                        if v.raw() > b.raw() {
                            *b = v;
                        }
                    }
                }
                best
            }
        })
        .collect();

    let out = match &params.tail {
        FusedTail::Pointwise {
            out_ch,
            weights,
            bias,
            accumulator,
            output,
        } => {
            let mut data = Vec::with_capacity(out_ch * len);
            for q in 0..*out_ch {
                for row in &d {
                    let mut acc = bias[q].rescale(*accumulator);
                    for (i, v) in row.iter().enumerate() {
                        acc = mac(*v, weights[q * params.rows + i], acc);
                    }
                    data.push(acc.rescale(*output));
                }
            }
            FixedActivation::new(*out_ch, len, data)
        }
        FusedTail::Dense {
            out_dim,
            weights,
            bias,
            accumulator,
            output,
        } => {
            let width = params.rows * len;
            if weights.len() != out_dim * width {
                return Err(PipeError::Shape(format!(
                    "dense projection-in expects {} inputs, the block maps {width}",
                    weights.len() / out_dim
                )));
            }
            // partial sums are reduced in channel-major order
            let data = (0..*out_dim)
                .map(|o| {
                    let mut acc = bias[o].rescale(*accumulator);
                    for i in 0..params.rows {
                        for (t, row) in d.iter().enumerate() {
                            acc = mac(row[i], weights[o * width + i * len + t], acc);
                        }
                    }
                    acc.rescale(*output)
                })
                .collect();
            FixedActivation::new(*out_dim, 1, data)
        }
    };
    Ok((out, params.cycles(input.len, mappers)))
}
