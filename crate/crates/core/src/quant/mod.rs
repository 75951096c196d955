//! Post-training quantization: calibration over representative data, per-tensor
//! affine int8 (or 16-bit shadow) parameters, and a pure-integer forward pass.

mod calib;
mod io;
mod model;

pub use calib::{calibrate, BoundaryStats, CalibrationMode, CalibrationStats, BOUNDARIES};
pub use io::{load_qmodel, save_qmodel, QMODEL_FORMAT_VERSION};
pub use model::{
    accuracy_delta, binary_accuracy, q_forward_frame, q_predict_clip, quantize_net, quantize_net_16,
    AccuracyDelta, QConv, QDense, QGate, QGru, QNetParams, QState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest scale handed out for a degenerate (zero-width) range.
pub const MIN_SCALE: f64 = 1e-8;

/// Signed integer storage for quantized values.
pub trait QInt: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const BITS: u32;
    const MIN: i32;
    const MAX: i32;
    fn from_i32_sat(v: i32) -> Self;
    fn to_i32(self) -> i32;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(b: &[u8]) -> Self;

    /// Number of representable levels minus one (255 for int8).
    fn span() -> i32 {
        Self::MAX - Self::MIN
    }
}

impl QInt for i8 {
    const BITS: u32 = 8;
    const MIN: i32 = i8::MIN as i32;
    const MAX: i32 = i8::MAX as i32;
    fn from_i32_sat(v: i32) -> Self {
        v.clamp(<Self as QInt>::MIN, <Self as QInt>::MAX) as i8
    }
    fn to_i32(self) -> i32 {
        self as i32
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        i8::from_le_bytes([b[0]])
    }
}

impl QInt for i16 {
    const BITS: u32 = 16;
    const MIN: i32 = i16::MIN as i32;
    const MAX: i32 = i16::MAX as i32;
    fn from_i32_sat(v: i32) -> Self {
        v.clamp(<Self as QInt>::MIN, <Self as QInt>::MAX) as i16
    }
    fn to_i32(self) -> i32 {
        self as i32
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        i16::from_le_bytes([b[0], b[1]])
    }
}

/// Affine mapping `real = scale · (q − zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QParams {
    /// Asymmetric parameters covering `[min, max]` (extended to include 0).
    pub fn asymmetric<T: QInt>(min: f64, max: f64) -> Self {
        let lo = min.min(0.0);
        let hi = max.max(0.0);
        let mut scale = (hi - lo) / T::span() as f64;
        if !(scale >= MIN_SCALE) {
            log::warn!("degenerate calibration range [{min}, {max}]; scale floored at {MIN_SCALE}");
            scale = MIN_SCALE;
        }
        let zero_point = ((-lo / scale).round() as i64 + T::MIN as i64).clamp(T::MIN as i64, T::MAX as i64) as i32;
        Self { scale, zero_point }
    }

    /// Fixed output mapping of a sigmoid LUT: `[0, 1]` over the full integer span.
    pub fn sigmoid_output<T: QInt>() -> Self {
        Self {
            scale: 1.0 / T::span() as f64,
            zero_point: T::MIN,
        }
    }

    /// Fixed output mapping of a tanh LUT: `[-1, 1]`, zero point 0.
    pub fn tanh_output<T: QInt>() -> Self {
        Self {
            scale: 1.0 / T::MAX as f64,
            zero_point: 0,
        }
    }

    pub fn quantize<T: QInt>(&self, x: f64) -> T {
        let q = (x / self.scale).round() + self.zero_point as f64;
        T::from_i32_sat(q.clamp(i32::MIN as f64, i32::MAX as f64) as i32)
    }

    pub fn dequantize<T: QInt>(&self, q: T) -> f64 {
        self.scale * (q.to_i32() - self.zero_point) as f64
    }
}

/// Integer tensor with per-tensor scale and zero point.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor<T: QInt> {
    pub values: Vec<T>,
    pub scale: f64,
    pub zero_point: i32,
}

impl<T: QInt> QTensor<T> {
    /// Symmetric quantization (zero point 0, scale = max|x| / MAX).
    pub fn symmetric(x: &[f64]) -> Self {
        let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = (max_abs / T::MAX as f64).max(MIN_SCALE);
        let p = QParams { scale, zero_point: 0 };
        Self {
            values: x.iter().map(|&v| p.quantize(v)).collect(),
            scale,
            zero_point: 0,
        }
    }

    pub fn params(&self) -> QParams {
        QParams {
            scale: self.scale,
            zero_point: self.zero_point,
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let p = self.params();
        self.values.iter().map(|&q| p.dequantize(q)).collect()
    }
}

/// Real multiplier `M ≈ mult · 2^(−shift)` with a 32-bit significand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub mult: i32,
    pub shift: u32,
}

impl FixedMultiplier {
    pub fn new(m: f64) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Numeric(format!("invalid requantization multiplier {m}")));
        }
        if m == 0.0 {
            return Ok(Self { mult: 0, shift: 0 });
        }
        let mut e = m.log2().floor() as i32 + 1;
        let mut m0 = m / 2f64.powi(e);
        if m0 >= 1.0 {
            m0 /= 2.0;
            e += 1;
        } else if m0 < 0.5 {
            m0 *= 2.0;
            e -= 1;
        }
        let mut mult = (m0 * (1u64 << 31) as f64).round() as i64;
        if mult == 1 << 31 {
            mult /= 2;
            e += 1;
        }
        let shift = 31 - e;
        if shift < 0 {
            return Err(Error::Numeric(format!("requantization multiplier {m} too large")));
        }
        if shift > 120 {
            return Ok(Self { mult: 0, shift: 0 });
        }
        Ok(Self {
            mult: mult as i32,
            shift: shift as u32,
        })
    }

    pub fn as_f64(&self) -> f64 {
        self.mult as f64 / 2f64.powi(self.shift as i32)
    }

    /// `round(acc · M)`, halves rounded away from zero.
    #[inline]
    pub fn apply(&self, acc: i64) -> i64 {
        rshift_round(acc as i128 * self.mult as i128, self.shift) as i64
    }
}

#[inline]
pub(crate) fn rshift_round(x: i128, shift: u32) -> i128 {
    if shift == 0 {
        return x;
    }
    let half = 1i128 << (shift - 1);
    if x >= 0 {
        (x + half) >> shift
    } else {
        -((-x + half) >> shift)
    }
}
