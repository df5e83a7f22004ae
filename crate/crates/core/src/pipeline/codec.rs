//! Lossless DEFLATE stage and the feature payload wire format.
//!
//! Payload layout (little-endian):
//!
//! ```text
//! magic "SPFV" | version u8 | quant u8 | split u8 | level u8
//! C u32 | H u32 | W u32 | thres_low f64 | thres_up f64
//! deflate_len u32 | DEFLATE bytes
//! ```
//!
//! `quant` is the element bit width (32, 16 or 8). The byte after `split` is
//! the reserved slot; it carries the DEFLATE level used by the encoder and is
//! ignored on decode.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::profile::QuantLevel;

pub const PAYLOAD_MAGIC: [u8; 4] = *b"SPFV";
pub const PAYLOAD_VERSION: u8 = 1;
pub const PAYLOAD_HEADER_LEN: usize = 4 + 4 + 12 + 16 + 4;
pub const DEFLATE_LEVEL: u32 = 6;

/// Raw DEFLATE (RFC 1951) at [`DEFLATE_LEVEL`].
pub fn compress(bytes: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(
        Vec::with_capacity(bytes.len() / 2 + 64),
        Compression::new(DEFLATE_LEVEL),
    );
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

pub fn decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    DeflateDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::Decode(format!("corrupt DEFLATE stream: {e}")))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadMeta {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub quant: QuantLevel,
    pub thres_low: f64,
    pub thres_up: f64,
    pub split_layer: u8,
    pub level: u8,
}

impl PayloadMeta {
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.channels as usize,
            self.height as usize,
            self.width as usize,
        )
    }

    /// Size of the quantized tensor before compression.
    pub fn raw_len(&self) -> usize {
        let (c, h, w) = self.dims();
        c * h * w * self.quant.bytes_per_element()
    }
}

/// Clipped, quantized and compressed feature map plus the metadata the cloud
/// needs to resume inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPayload {
    pub meta: PayloadMeta,
    pub data: Vec<u8>,
}

impl CompressedPayload {
    pub fn encoded_len(&self) -> usize {
        PAYLOAD_HEADER_LEN + self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&PAYLOAD_MAGIC);
        out.push(PAYLOAD_VERSION);
        out.push(m.quant.bits_per_element() as u8);
        out.push(m.split_layer);
        out.push(m.level);
        out.extend_from_slice(&m.channels.to_le_bytes());
        out.extend_from_slice(&m.height.to_le_bytes());
        out.extend_from_slice(&m.width.to_le_bytes());
        out.extend_from_slice(&m.thres_low.to_le_bytes());
        out.extend_from_slice(&m.thres_up.to_le_bytes());
        out.extend_from_slice(&(self.data.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PAYLOAD_HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != PAYLOAD_MAGIC {
                return Err(bad_magic(bytes));
            }
            return Err(Error::Truncated {
                needed: PAYLOAD_HEADER_LEN,
                available: bytes.len(),
            });
        }
        if bytes[..4] != PAYLOAD_MAGIC {
            return Err(bad_magic(bytes));
        }
        if bytes[4] != PAYLOAD_VERSION {
            return Err(Error::Decode(format!("unsupported payload version {}", bytes[4])));
        }
        let quant = QuantLevel::from_bits(u32::from(bytes[5]))
            .ok_or_else(|| Error::Decode(format!("unknown quantization code {}", bytes[5])))?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let meta = PayloadMeta {
            quant,
            split_layer: bytes[6],
            level: bytes[7],
            channels: u32_at(8),
            height: u32_at(12),
            width: u32_at(16),
            thres_low: f64_at(20),
            thres_up: f64_at(28),
        };
        if meta.channels == 0 || meta.height == 0 || meta.width == 0 {
            return Err(Error::Decode("payload dimensions must be positive".into()));
        }
        let len = u32_at(36) as usize;
        let body = &bytes[PAYLOAD_HEADER_LEN..];
        if body.len() < len {
            return Err(Error::Truncated {
                needed: PAYLOAD_HEADER_LEN + len,
                available: bytes.len(),
            });
        }
        if body.len() > len {
            return Err(Error::Decode(format!(
                "{} trailing bytes after payload",
                body.len() - len
            )));
        }
        Ok(Self {
            meta,
            data: body.to_vec(),
        })
    }
}

fn bad_magic(bytes: &[u8]) -> Error {
    Error::BadMagic {
        expected: PAYLOAD_MAGIC,
        found: bytes[..4.min(bytes.len())].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_compress_well() {
        let zeros = vec![0u8; 1 << 20];
        let c = compress(&zeros);
        // measured once with flate2 level 6
        assert_eq!(c.len(), ZEROS_MIB_DEFLATE_LEN);
        assert!(c.len() < 2048);
        assert_eq!(decompress(&c).unwrap(), zeros);
    }

    const ZEROS_MIB_DEFLATE_LEN: usize = 1_033;

    #[test]
    fn empty_round_trip() {
        let c = compress(&[]);
        assert!(!c.is_empty());
        assert!(decompress(&c).unwrap().is_empty());
    }

    #[test]
    fn corrupt_stream_is_rejected() {
        // BTYPE = 11 is reserved
        assert!(decompress(&[0x07, 0x00, 0x00]).is_err());
    }

    #[test]
    fn header_framing() {
        let p = CompressedPayload {
            meta: PayloadMeta {
                channels: 3,
                height: 5,
                width: 7,
                quant: QuantLevel::Fp16,
                thres_low: -1.25,
                thres_up: 2.5,
                split_layer: 2,
                level: DEFLATE_LEVEL as u8,
            },
            data: compress(&[1, 2, 3, 4]),
        };
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), p.encoded_len());
        assert_eq!(&bytes[..4], b"SPFV");
        assert_eq!(CompressedPayload::from_bytes(&bytes).unwrap(), p);

        assert!(matches!(
            CompressedPayload::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            CompressedPayload::from_bytes(&bytes[..10]),
            Err(Error::Truncated { .. })
        ));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(CompressedPayload::from_bytes(&wrong), Err(Error::BadMagic { .. })));
        let mut quant = bytes;
        quant[5] = 4;
        assert!(matches!(CompressedPayload::from_bytes(&quant), Err(Error::Decode(_))));
    }
}
