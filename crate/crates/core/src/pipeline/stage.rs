//! Onboard and cloud stages over a deterministic stub backbone.

use super::codec::{compress, decompress, CompressedPayload, PayloadMeta, DEFLATE_LEVEL};
use super::quant::{deserialize_quantized, serialize_quantized};
use super::{clip, percentile, ClipSpec, FeatureTensor};
use crate::error::{Error, Result};
use crate::profile::QuantLevel;

pub const DEFAULT_STUB_DEPTH: usize = 5;

const LAYER_SCALE: [f32; 5] = [0.9, 1.1, 0.95, 1.05, 1.0];
const LAYER_SHIFT: [f32; 5] = [0.1, -0.05, 0.02, -0.01, 0.0];

/// Stand-in for a convolutional backbone. Every layer is a 2x2 average pool
/// (ceiling division on H and W, channels unchanged) followed by a fixed
/// per-layer affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubBackbone {
    depth: usize,
}

impl Default for StubBackbone {
    fn default() -> Self {
        Self {
            depth: DEFAULT_STUB_DEPTH,
        }
    }
}

impl StubBackbone {
    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::domain("stub backbone needs at least one layer"));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Output dimensions after `layers` layers.
    pub fn dims_after(input: (usize, usize, usize), layers: usize) -> (usize, usize, usize) {
        let (c, mut h, mut w) = input;
        for _ in 0..layers {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (c, h, w)
    }

    /// Applies layer `layer` (1-based).
    pub fn apply_layer(t: &FeatureTensor, layer: usize) -> FeatureTensor {
        let (c, h, w) = t.dims();
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let scale = LAYER_SCALE[(layer - 1) % LAYER_SCALE.len()];
        let shift = LAYER_SHIFT[(layer - 1) % LAYER_SHIFT.len()];
        let src = t.values();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let mut sum = 0.0f32;
                    let mut n = 0u32;
                    for y in 2 * i..(2 * i + 2).min(h) {
                        for x in 2 * j..(2 * j + 2).min(w) {
                            sum += plane[y * w + x];
                            n += 1;
                        }
                    }
                    out.push(scale * (sum / n as f32) + shift);
                }
            }
        }
        FeatureTensor::new(c, oh, ow, out).expect("pooling preserves invariants")
    }

    /// Runs layers `from..=to` (1-based, inclusive); empty when `from > to`.
    pub fn run(&self, t: &FeatureTensor, from: usize, to: usize) -> FeatureTensor {
        (from..=to).fold(t.clone(), |acc, layer| Self::apply_layer(&acc, layer))
    }
}

/// Vehicle side: backbone up to `split`, percentile clip, quantize, DEFLATE.
pub fn run_local_stage(
    input: &FeatureTensor,
    split: u8,
    spec: ClipSpec,
    q: QuantLevel,
) -> Result<CompressedPayload> {
    let backbone = StubBackbone::default();
    if split == 0 || split as usize > backbone.depth() {
        return Err(Error::domain(format!(
            "split layer {split} outside 1..={}",
            backbone.depth()
        )));
    }
    let features = backbone.run(input, 1, split as usize);
    let lo = percentile(&features, spec.low())? as f32;
    let hi = percentile(&features, spec.high())? as f32;
    let clipped = clip(&features, lo, hi)?;
    let raw = serialize_quantized(&clipped, q);
    let (c, h, w) = clipped.dims();
    Ok(CompressedPayload {
        meta: PayloadMeta {
            channels: c as u32,
            height: h as u32,
            width: w as u32,
            quant: q,
            thres_low: f64::from(lo),
            thres_up: f64::from(hi),
            split_layer: split,
            level: DEFLATE_LEVEL as u8,
        },
        data: compress(&raw),
    })
}

/// Cloud side: inflate, dequantize and finish the backbone up to `n_layers`.
pub fn run_cloud_stage(p: &CompressedPayload, n_layers: usize) -> Result<FeatureTensor> {
    let split = p.meta.split_layer as usize;
    if split == 0 || split > n_layers {
        return Err(Error::domain(format!(
            "payload split layer {split} is not within 1..={n_layers}"
        )));
    }
    let raw = decompress(&p.data)?;
    if raw.len() != p.meta.raw_len() {
        return Err(Error::Decode(format!(
            "payload declares {} bytes of features, stream holds {}",
            p.meta.raw_len(),
            raw.len()
        )));
    }
    let features = deserialize_quantized(&raw, p.meta.dims(), p.meta.quant)?;
    Ok(StubBackbone::new(n_layers)?.run(&features, split + 1, n_layers))
}
