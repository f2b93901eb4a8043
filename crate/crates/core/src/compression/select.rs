//! Staged model selection: smallest candidate first, then the narrowest
//! bit width that keeps its accuracy.

use serde::{Deserialize, Serialize};

use super::CompressionError;

/// One quantized evaluation of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub candidate: usize,
    pub bits: u32,
    pub accuracy: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index into the candidate list.
    pub candidate: usize,
    pub bits: u32,
    /// No candidate stayed within the margin at the widest width; the best
    /// one at that width was taken instead.
    pub unstable: bool,
    pub sweep: Vec<SweepEntry>,
}

/// Picks a candidate and bit width.
///
/// `candidates` holds `(learnables, float accuracy)`. Candidates below
/// `floor` are discarded and the rest visited in increasing learnable count.
/// Each visited candidate is swept from `max_bits` down to `min_bits`,
/// stopping at the first width whose accuracy falls more than `margin`
/// below the candidate's float accuracy. The first candidate that is stable
/// at `max_bits` is returned with its narrowest stable width. If none is,
/// the candidate with the best `max_bits` accuracy is returned, flagged.
pub fn select_model<F>(
    candidates: &[(usize, f64)],
    floor: f64,
    margin: f64,
    min_bits: u32,
    max_bits: u32,
    mut quantized_accuracy: F,
) -> Result<Selection, CompressionError>
where
    F: FnMut(usize, u32) -> Result<f64, CompressionError>,
{
    if min_bits > max_bits {
        return Err(CompressionError::Config(format!(
            "empty bit range {min_bits}..={max_bits}"
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].1 >= floor)
        .collect();
    if order.is_empty() {
        return Err(CompressionError::NoCandidate { floor });
    }
    order.sort_by_key(|&i| (candidates[i].0, i));

    let mut sweep = Vec::new();
    let mut widest: Vec<(usize, f64)> = Vec::new();
    for &c in &order {
        let reference = candidates[c].1;
        let mut narrowest = None;
        for bits in (min_bits..=max_bits).rev() {
            let accuracy = quantized_accuracy(c, bits)?;
            let stable = accuracy >= reference - margin;
            sweep.push(SweepEntry {
                candidate: c,
                bits,
                accuracy,
                stable,
            });
            if bits == max_bits {
                widest.push((c, accuracy));
            }
            if !stable {
                break;
            }
            narrowest = Some(bits);
        }
        if let Some(bits) = narrowest {
            return Ok(Selection {
                candidate: c,
                bits,
                unstable: false,
                sweep,
            });
        }
    }
    let (candidate, _) = widest
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64)>, (c, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((c, a)),
        })
        .expect("at least one candidate swept");
    Ok(Selection {
        candidate,
        bits: max_bits,
        unstable: true,
        sweep,
    })
}
