//! Onboard feature data path (backbone prefix, percentile clipping,
//! quantization, lossless compression) and its cloud-side inverse.

mod codec;
mod quant;
mod stage;

pub use codec::{
    compress, decompress, CompressedPayload, PayloadMeta, DEFLATE_LEVEL, PAYLOAD_HEADER_LEN,
    PAYLOAD_MAGIC, PAYLOAD_VERSION,
};
pub use quant::{
    decode_e4m3, deserialize_quantized, encode_e4m3, quantize, quantize_value,
    serialize_quantized, E4M3_MAX,
};
pub use stage::{run_cloud_stage, run_local_stage, StubBackbone, DEFAULT_STUB_DEPTH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StudentT};

use crate::error::{Error, Result};

/// A dense `C x H x W` feature map stored row-major (C outer, W inner).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::domain(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::domain("tensor dimensions overflow"))?;
        if values.len() != expected {
            return Err(Error::domain(format!(
                "expected {expected} values for {channels}x{height}x{width}, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("tensor values must be finite, found {v}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Heavy-tailed (Student-t, 3 d.o.f.) synthetic features for a fixed seed.
    pub fn synthetic(channels: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = StudentT::new(3.0).expect("valid degrees of freedom");
        let n = channels * height * width;
        let values = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
        Self::new(channels, height, width, values)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Same shape, values replaced element-wise.
    pub(crate) fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Lower/upper clipping percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    low_percentile: f64,
    high_percentile: f64,
}

impl ClipSpec {
    pub fn new(low_percentile: f64, high_percentile: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&low_percentile) || !(0.0..=100.0).contains(&high_percentile) {
            return Err(Error::domain("clip percentiles must be within [0, 100]"));
        }
        if low_percentile >= high_percentile {
            return Err(Error::domain(format!(
                "low percentile {low_percentile} must be below high percentile {high_percentile}"
            )));
        }
        Ok(Self {
            low_percentile,
            high_percentile,
        })
    }

    pub fn low(&self) -> f64 {
        self.low_percentile
    }

    pub fn high(&self) -> f64 {
        self.high_percentile
    }
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            low_percentile: 10.0,
            high_percentile: 90.0,
        }
    }
}

/// Linear-interpolation percentile over the sorted flattened values:
/// `r = p/100 * (n-1)`, `v[floor r] + frac(r) * (v[floor r + 1] - v[floor r])`.
pub fn percentile(t: &FeatureTensor, p: f64) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::domain("percentile of an empty tensor"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::domain(format!("percentile must be in [0, 100], got {p}")));
    }
    let mut sorted: Vec<f64> = t.values.iter().map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let base = sorted[lo];
    Ok(match sorted.get(lo + 1) {
        Some(&next) if frac > 0.0 => base + frac * (next - base),
        _ => base,
    })
}

/// Clamps every value to `[lo, hi]`.
pub fn clip(t: &FeatureTensor, lo: f32, hi: f32) -> Result<FeatureTensor> {
    if !(lo <= hi) {
        return Err(Error::domain(format!("clip bounds inverted: lo={lo} > hi={hi}")));
    }
    Ok(t.map(|v| v.clamp(lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_ten() -> FeatureTensor {
        FeatureTensor::new(1, 2, 5, (1..=10).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn percentile_examples() {
        let t = one_to_ten();
        assert!((percentile(&t, 10.0).unwrap() - 1.9).abs() < 1e-12);
        assert!((percentile(&t, 90.0).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(percentile(&t, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&t, 100.0).unwrap(), 10.0);
        assert_eq!(percentile(&t, 50.0).unwrap(), 5.5);

        let c = FeatureTensor::filled(2, 3, 3, -4.25).unwrap();
        for p in [0.0, 17.0, 50.0, 100.0] {
            assert_eq!(percentile(&c, p).unwrap(), -4.25);
        }
        assert!(percentile(&t, 101.0).is_err());
    }

    #[test]
    fn clip_examples() {
        let t = one_to_ten();
        let c = clip(&t, 1.9, 9.1).unwrap();
        assert_eq!(c.values()[0], 1.9);
        assert_eq!(c.values()[9], 9.1);
        assert_eq!(c.values()[4], 5.0);
        assert_eq!(c.dims(), t.dims());
        assert_eq!(clip(&t, 0.0, 20.0).unwrap(), t);
        assert_eq!(clip(&c, 1.9, 9.1).unwrap(), c);
        assert!(clip(&t, 2.0, 1.0).is_err());
    }

    #[test]
    fn tensor_construction_checks() {
        assert!(FeatureTensor::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ClipSpec::new(90.0, 10.0).is_err());
        assert!(ClipSpec::new(-1.0, 10.0).is_err());
        assert_eq!(ClipSpec::default(), ClipSpec::new(10.0, 90.0).unwrap());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = FeatureTensor::synthetic(4, 8, 8, 7).unwrap();
        let b = FeatureTensor::synthetic(4, 8, 8, 7).unwrap();
        let c = FeatureTensor::synthetic(4, 8, 8, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
