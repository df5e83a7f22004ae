//! Feature quantization: FP32 passthrough, IEEE binary16 and 8-bit E4M3.

use half::f16;

use super::FeatureTensor;
use crate::error::{Error, Result};
use crate::profile::QuantLevel;

/// Largest finite E4M3 magnitude (`1.75 * 2^8`).
pub const E4M3_MAX: f32 = 448.0;

const E4M3_BIAS: i32 = 7;
const E4M3_MAX_CODE: u8 = 0x7E;
/// Smallest normal E4M3 magnitude, `2^-6`.
const E4M3_MIN_NORMAL: f32 = 0.015625;
/// Subnormal spacing, `2^-9`.
const E4M3_SUBNORMAL_STEP: f32 = 0.001953125;

/// Encodes to E4M3 (1 sign, 4 exponent, 3 mantissa bits, bias 7, no
/// infinities), rounding to nearest-even and saturating at +/-448.
pub fn encode_e4m3(v: f32) -> u8 {
    let sign = if v.is_sign_negative() { 0x80 } else { 0x00 };
    let a = v.abs();
    if a.is_nan() {
        return 0x7F;
    }
    if a >= E4M3_MAX {
        return sign | E4M3_MAX_CODE;
    }
    if a < E4M3_MIN_NORMAL {
        // q == 8 lands exactly on the smallest normal code 0x08.
        let q = (a / E4M3_SUBNORMAL_STEP).round_ties_even() as u8;
        return sign | q;
    }
    let mut exp = ((a.to_bits() >> 23) & 0xFF) as i32 - 127;
    let significand = a / 2f32.powi(exp);
    let mut mant = ((significand - 1.0) * 8.0).round_ties_even() as u32;
    if mant == 8 {
        mant = 0;
        exp += 1;
    }
    let code = (((exp + E4M3_BIAS) as u32) << 3) | mant;
    sign | (code.min(E4M3_MAX_CODE as u32) as u8)
}

pub fn decode_e4m3(b: u8) -> f32 {
    let sign = if b & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = ((b >> 3) & 0x0F) as i32;
    let mant = (b & 0x07) as f32;
    if exp == 0x0F && b & 0x07 == 0x07 {
        return f32::NAN;
    }
    let mag = if exp == 0 {
        mant * E4M3_SUBNORMAL_STEP
    } else {
        (1.0 + mant / 8.0) * 2f32.powi(exp - E4M3_BIAS)
    };
    sign * mag
}

fn encode_f16(v: f32) -> f16 {
    let h = f16::from_f32(v);
    if h.is_infinite() {
        if v.is_sign_negative() {
            f16::MIN
        } else {
            f16::MAX
        }
    } else {
        h
    }
}

/// Round-trips a single value through the wire precision of `q`.
pub fn quantize_value(v: f32, q: QuantLevel) -> f32 {
    match q {
        QuantLevel::Fp32 => v,
        QuantLevel::Fp16 => encode_f16(v).to_f32(),
        QuantLevel::Fp8 => decode_e4m3(encode_e4m3(v)),
    }
}

pub fn quantize(t: &FeatureTensor, q: QuantLevel) -> FeatureTensor {
    match q {
        QuantLevel::Fp32 => t.clone(),
        _ => t.map(|v| quantize_value(v, q)),
    }
}

/// Little-endian packed elements at the bit width of `q`.
pub fn serialize_quantized(t: &FeatureTensor, q: QuantLevel) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * q.bytes_per_element());
    match q {
        QuantLevel::Fp32 => t.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        QuantLevel::Fp16 => t
            .values()
            .iter()
            .for_each(|&v| out.extend_from_slice(&encode_f16(v).to_bits().to_le_bytes())),
        QuantLevel::Fp8 => out.extend(t.values().iter().map(|&v| encode_e4m3(v))),
    }
    out
}

pub fn deserialize_quantized(
    bytes: &[u8],
    dims: (usize, usize, usize),
    q: QuantLevel,
) -> Result<FeatureTensor> {
    let (c, h, w) = dims;
    let n = c * h * w;
    let expected = n * q.bytes_per_element();
    if bytes.len() != expected {
        return Err(Error::Decode(format!(
            "{c}x{h}x{w} at {q} needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let values: Vec<f32> = match q {
        QuantLevel::Fp32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        QuantLevel::Fp16 => bytes
            .chunks_exact(2)
            .map(|b| f16::from_bits(u16::from_le_bytes([b[0], b[1]])).to_f32())
            .collect(),
        QuantLevel::Fp8 => bytes.iter().map(|&b| decode_e4m3(b)).collect(),
    };
    FeatureTensor::new(c, h, w, values).map_err(|e| Error::Decode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nearest representable value by exhaustive search over all finite codes,
    /// ties to the even code.
    fn nearest_by_enumeration(v: f64, codes: &[(u32, f64)]) -> f64 {
        let mut best = codes[0];
        for &(code, x) in codes {
            let d = (x - v).abs();
            let bd = (best.1 - v).abs();
            if d < bd || (d == bd && code % 2 == 0 && best.0 % 2 == 1) {
                best = (code, x);
            }
        }
        best.1
    }

    fn binary16_codes() -> Vec<(u32, f64)> {
        (0u32..=0xFFFF)
            .filter_map(|bits| {
                let exp = (bits >> 10) & 0x1F;
                let mant = (bits & 0x3FF) as f64;
                if exp == 0x1F {
                    return None;
                }
                let mag = if exp == 0 {
                    mant * 2f64.powi(-24)
                } else {
                    (1.0 + mant / 1024.0) * 2f64.powi(exp as i32 - 15)
                };
                Some((bits, if bits & 0x8000 != 0 { -mag } else { mag }))
            })
            .collect()
    }

    fn e4m3_codes() -> Vec<(u32, f64)> {
        (0u32..=0xFF)
            .filter_map(|bits| {
                let exp = (bits >> 3) & 0xF;
                let mant = (bits & 0x7) as f64;
                if exp == 0xF && mant == 7.0 {
                    return None;
                }
                let mag = if exp == 0 {
                    mant * 2f64.powi(-9)
                } else {
                    (1.0 + mant / 8.0) * 2f64.powi(exp as i32 - 7)
                };
                Some((bits, if bits & 0x80 != 0 { -mag } else { mag }))
            })
            .collect()
    }

    #[test]
    fn fp16_matches_enumeration_oracle() {
        let codes = binary16_codes();
        assert_eq!(nearest_by_enumeration(0.1, &codes), 0.0999755859375);
        assert_eq!(f64::from(quantize_value(0.1, QuantLevel::Fp16)), 0.0999755859375);
        for v in [1.0f32, -2.5, 3.14159, 1e-5, -6.1e-5, 1234.567, 65000.0, 0.333_333_3] {
            let expect = nearest_by_enumeration(f64::from(v), &codes);
            assert_eq!(f64::from(quantize_value(v, QuantLevel::Fp16)), expect, "v={v}");
        }
    }

    #[test]
    fn fp8_matches_enumeration_oracle() {
        let codes = e4m3_codes();
        let mut v = -460.0f32;
        while v < 460.0 {
            let expect = nearest_by_enumeration(f64::from(v).clamp(-448.0, 448.0), &codes);
            assert_eq!(f64::from(quantize_value(v, QuantLevel::Fp8)), expect, "v={v}");
            v += 0.37;
        }
        let mut v = -0.05f32;
        while v < 0.05 {
            let expect = nearest_by_enumeration(f64::from(v), &codes);
            assert_eq!(f64::from(quantize_value(v, QuantLevel::Fp8)).abs(), expect.abs(), "v={v}");
            v += 0.000_173;
        }
    }

    #[test]
    fn e4m3_code_round_trip() {
        for b in 0u8..=0xFF {
            if b & 0x7F == 0x7F {
                assert!(decode_e4m3(b).is_nan());
                continue;
            }
            assert_eq!(encode_e4m3(decode_e4m3(b)), b, "code {b:#04x}");
        }
    }

    #[test]
    fn saturation_and_exact_values() {
        assert_eq!(quantize_value(1e6, QuantLevel::Fp8), E4M3_MAX);
        assert_eq!(quantize_value(-1e6, QuantLevel::Fp8), -E4M3_MAX);
        assert_eq!(quantize_value(1e6, QuantLevel::Fp16), 65504.0);
        assert_eq!(quantize_value(-1e9, QuantLevel::Fp16), -65504.0);
        for q in QuantLevel::ALL {
            assert_eq!(quantize_value(1.0, q), 1.0);
        }
        // halfway between 1.0 and 1.125 rounds to even mantissa (1.0)
        assert_eq!(quantize_value(1.0625, QuantLevel::Fp8), 1.0);
        assert_eq!(quantize_value(1.1875, QuantLevel::Fp8), 1.25);
    }

    #[test]
    fn serialized_sizes_and_round_trip() {
        let t = FeatureTensor::new(1, 2, 2, vec![0.1, -3.7, 250.0, 1e-4]).unwrap();
        assert_eq!(serialize_quantized(&t, QuantLevel::Fp8).len(), 4);
        assert_eq!(serialize_quantized(&t, QuantLevel::Fp16).len(), 8);
        assert_eq!(serialize_quantized(&t, QuantLevel::Fp32).len(), 16);
        for q in QuantLevel::ALL {
            let back = deserialize_quantized(&serialize_quantized(&t, q), (1, 2, 2), q).unwrap();
            assert_eq!(back, quantize(&t, q));
        }
        assert!(deserialize_quantized(&[0; 3], (1, 2, 2), QuantLevel::Fp8).is_err());
    }

    #[test]
    fn fp32_is_bit_identical() {
        let t = FeatureTensor::synthetic(2, 3, 4, 1).unwrap();
        let q = quantize(&t, QuantLevel::Fp32);
        assert!(t
            .values()
            .iter()
            .zip(q.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
