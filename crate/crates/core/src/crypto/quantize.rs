use super::{CryptoError, FieldElement, MODULUS};

pub const DEFAULT_SCALE_BITS: u32 = 16;

/// Inputs must stay strictly below this magnitude so that sums over up to
/// `2²⁰` users cannot wrap around the field.
pub const QUANTIZE_HEADROOM: f64 = (1u64 << 20) as f64;

/// Fixed-point embedding of reals into the field. Negative values map to the
/// upper half of `[0, P)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    scale: f64,
}

impl Default for Quantizer {
    fn default() -> Self {
        Quantizer::with_scale_bits(DEFAULT_SCALE_BITS)
    }
}

impl Quantizer {
    pub fn with_scale_bits(bits: u32) -> Self {
        assert!(bits <= 30, "scale of 2^{bits} leaves no headroom");
        Quantizer { scale: (1u64 << bits) as f64 }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn quantize_one(&self, v: f64) -> Result<FieldElement, CryptoError> {
        if !v.is_finite() || v.abs() >= QUANTIZE_HEADROOM {
            return Err(CryptoError::QuantizationOverflow(v));
        }
        let q = (v * self.scale).round() as i64;
        Ok(if q >= 0 { FieldElement::new(q as u64) } else { -FieldElement::new(q.unsigned_abs()) })
    }

    pub fn quantize(&self, v: &[f64]) -> Result<Vec<FieldElement>, CryptoError> {
        v.iter().map(|&x| self.quantize_one(x)).collect()
    }

    /// Signed value of a field element (upper half is negative), unscaled.
    pub fn dequantize_one(&self, x: FieldElement) -> f64 {
        let v = x.value();
        let signed = if v > MODULUS / 2 { -((MODULUS - v) as i64) } else { v as i64 };
        signed as f64 / self.scale
    }

    pub fn dequantize(&self, x: &[FieldElement]) -> Vec<f64> {
        x.iter().map(|&e| self.dequantize_one(e)).collect()
    }
}
