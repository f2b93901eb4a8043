//! Saturating fixed-point arithmetic.
//!
//! Every quantized parameter and every simulator datapath is expressed as an
//! [`FxValue`]: a two's-complement raw integer tagged with its [`QFormat`].
//! Values are always held inside the representable range of their format;
//! conversions round half away from zero and clamp on overflow.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest fraction-bit count accepted by [`QFormat::new`].
pub const MIN_FRAC_BITS: i32 = -32;
/// Largest fraction-bit count accepted by [`QFormat::new`].
pub const MAX_FRAC_BITS: i32 = 48;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FxpError {
    #[error("total bit width {0} outside 2..=32")]
    TotalBits(u32),
    #[error("fraction bits {0} outside {MIN_FRAC_BITS}..={MAX_FRAC_BITS}")]
    FracBits(i32),
}

/// Fixed-point layout: `total_bits` of storage, of which `frac_bits` sit
/// below the binary point.
///
/// `frac_bits` may exceed `total_bits` (all-fraction formats for small
/// weights) or be negative (power-of-two scales above one), which is how
/// per-tensor power-of-two scales are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    total_bits: u32,
    frac_bits: i32,
    signed: bool,
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: i32, signed: bool) -> Result<Self, FxpError> {
        if !(2..=32).contains(&total_bits) {
            return Err(FxpError::TotalBits(total_bits));
        }
        if !(MIN_FRAC_BITS..=MAX_FRAC_BITS).contains(&frac_bits) {
            return Err(FxpError::FracBits(frac_bits));
        }
        Ok(Self {
            total_bits,
            frac_bits,
            signed,
        })
    }

    /// Signed format; panics on an invalid layout.
    pub fn signed(total_bits: u32, frac_bits: i32) -> Self {
        Self::new(total_bits, frac_bits, true).expect("invalid signed QFormat")
    }

    /// The 10-bit sample format used for signal samples (Q2.7).
    pub fn sample() -> Self {
        Self::signed(10, 7)
    }

    /// 32-bit signed accumulator holding products at `frac_bits`.
    pub fn accumulator(frac_bits: i32) -> Self {
        Self::signed(32, frac_bits)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> i32 {
        self.frac_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn raw_min(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn raw_max(&self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    /// Value of one least-significant bit.
    pub fn lsb(&self) -> f64 {
        (-self.frac_bits as f64).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.raw_min() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.raw_max() as f64 * self.lsb()
    }

    pub fn clamp_raw(&self, raw: i128) -> i64 {
        raw.clamp(self.raw_min() as i128, self.raw_max() as i128) as i64
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { "s" } else { "u" };
        write!(f, "{s}{}.{}", self.total_bits, self.frac_bits)
    }
}

/// A fixed-point number. The raw value is always within `fmt`'s range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FxValue {
    raw: i64,
    fmt: QFormat,
}

impl FxValue {
    /// Builds a value from a raw integer, saturating into the format.
    pub fn from_raw(raw: i64, fmt: QFormat) -> Self {
        Self {
            raw: fmt.clamp_raw(raw as i128),
            fmt,
        }
    }

    pub fn zero(fmt: QFormat) -> Self {
        Self { raw: 0, fmt }
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> QFormat {
        self.fmt
    }

    pub fn to_f64(&self) -> f64 {
        dequantize(*self)
    }

    /// Re-expresses the value in another format (round half away from zero,
    /// then saturate).
    pub fn rescale(&self, fmt: QFormat) -> Self {
        let raw = shift_round(self.raw as i128, fmt.frac_bits - self.fmt.frac_bits);
        Self {
            raw: fmt.clamp_raw(raw),
            fmt,
        }
    }

    pub fn relu(&self) -> Self {
        Self {
            raw: self.raw.max(0),
            fmt: self.fmt,
        }
    }
}

/// Multiplies `v` by `2^shift`, rounding half away from zero when the shift
/// discards bits. Left shifts saturate at the `i128` range.
pub fn shift_round(v: i128, shift: i32) -> i128 {
    if shift >= 0 {
        let s = shift.min(100) as u32;
        v.checked_mul(1i128 << s)
            .unwrap_or(if v < 0 { i128::MIN } else { i128::MAX })
    } else {
        let s = (-shift).min(126) as u32;
        let half = 1i128 << (s - 1);
        if v >= 0 {
            (v + half) >> s
        } else {
            -((-v + half) >> s)
        }
    }
}

/// Rounds `x · 2^frac_bits` half away from zero and clamps to the raw range.
/// NaN maps to zero.
pub fn quantize(x: f64, fmt: QFormat) -> FxValue {
    if x.is_nan() {
        return FxValue::zero(fmt);
    }
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round();
    let raw = if scaled >= fmt.raw_max() as f64 {
        fmt.raw_max()
    } else if scaled <= fmt.raw_min() as f64 {
        fmt.raw_min()
    } else {
        scaled as i64
    };
    FxValue { raw, fmt }
}

/// Exact real value `raw / 2^frac_bits`.
pub fn dequantize(v: FxValue) -> f64 {
    v.raw as f64 * v.fmt.lsb()
}

/// Multiply-accumulate: `saturate(ps + m1·m2)` in `ps`'s format.
///
/// The product is formed exactly at `m1.frac + m2.frac` fraction bits, then
/// aligned to the partial-sum format before the saturating add.
pub fn mac(m1: FxValue, m2: FxValue, ps: FxValue) -> FxValue {
    let product = m1.raw as i128 * m2.raw as i128;
    let product_frac = m1.fmt.frac_bits + m2.fmt.frac_bits;
    let aligned = shift_round(product, ps.fmt.frac_bits - product_frac);
    let sum = (ps.raw as i128).saturating_add(aligned);
    FxValue {
        raw: ps.fmt.clamp_raw(sum),
        fmt: ps.fmt,
    }
}

/// Quantizes a slice into one format.
pub fn quantize_slice(xs: &[f64], fmt: QFormat) -> Vec<FxValue> {
    xs.iter().map(|&x| quantize(x, fmt)).collect()
}

/// Chooses the fraction-bit count for a `total_bits` signed format whose range
/// covers `max_abs`: the finest power-of-two scale with
/// `max_abs <= raw_max · 2^-frac`. A zero tensor gets scale 1 (`frac = 0`).
pub fn covering_frac_bits(max_abs: f64, total_bits: u32) -> i32 {
    if !(max_abs > 0.0) || !max_abs.is_finite() {
        return 0;
    }
    let raw_max = ((1u64 << (total_bits - 1)) - 1) as f64;
    let frac = (raw_max / max_abs).log2().floor() as i32;
    frac.clamp(MIN_FRAC_BITS, MAX_FRAC_BITS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_half_in_q10_7() {
        let v = quantize(0.5, QFormat::signed(10, 7));
        assert_eq!(v.raw(), 64);
        assert_eq!(dequantize(v), 0.5);
    }

    #[test]
    fn quantize_zero_is_zero() {
        for fmt in [
            QFormat::signed(4, 0),
            QFormat::signed(10, 7),
            QFormat::signed(32, 20),
        ] {
            assert_eq!(quantize(0.0, fmt).raw(), 0);
            assert_eq!(quantize(-0.0, fmt).raw(), 0);
        }
    }

    #[test]
    fn quantize_saturates() {
        let fmt = QFormat::signed(4, 0);
        assert_eq!(quantize(100.0, fmt).raw(), 7);
        assert_eq!(quantize(-100.0, fmt).raw(), -8);
        assert_eq!(quantize(f64::INFINITY, fmt).raw(), 7);
        assert_eq!(quantize(f64::NAN, fmt).raw(), 0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let fmt = QFormat::signed(8, 0);
        assert_eq!(quantize(2.5, fmt).raw(), 3);
        assert_eq!(quantize(-2.5, fmt).raw(), -3);
        assert_eq!(shift_round(5, -1), 3);
        assert_eq!(shift_round(-5, -1), -3);
        assert_eq!(shift_round(-4, -1), -2);
    }

    #[test]
    fn dequantize_examples() {
        let fmt = QFormat::signed(10, 7);
        assert_eq!(dequantize(FxValue::from_raw(64, fmt)), 0.5);
        assert_eq!(dequantize(FxValue::from_raw(0, fmt)), 0.0);
    }

    #[test]
    fn mac_identity_and_zero() {
        let f = QFormat::signed(10, 7);
        let acc = QFormat::accumulator(14);
        let one = quantize(1.0, QFormat::signed(10, 8));
        let r = mac(one, one, FxValue::zero(acc));
        assert_eq!(dequantize(r), 1.0);
        let p = quantize(-1.25, acc);
        for x in [-3.0, 0.1, 2.0] {
            assert_eq!(mac(FxValue::zero(f), quantize(x, f), p), p);
        }
    }

    #[test]
    fn format_validation() {
        assert!(QFormat::new(1, 0, true).is_err());
        assert!(QFormat::new(33, 0, true).is_err());
        assert!(QFormat::new(8, 60, true).is_err());
        let u = QFormat::new(4, 0, false).unwrap();
        assert_eq!((u.raw_min(), u.raw_max()), (0, 15));
        assert_eq!(quantize(-1.0, u).raw(), 0);
    }

    #[test]
    fn covering_scale() {
        assert_eq!(covering_frac_bits(1.0, 8), 6);
        assert_eq!(covering_frac_bits(0.0, 4), 0);
        let f = covering_frac_bits(0.3, 4);
        assert!(0.3 <= QFormat::signed(4, f).max_value());
        assert!(0.3 > QFormat::signed(4, f + 1).max_value());
    }
}
