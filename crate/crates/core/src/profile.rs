//! Profiled configuration space: split layer x quantization level.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Perception cycles per second assumed when converting a bandwidth-usage
/// column into bits per frame.
pub const REFERENCE_RATE_HZ: f64 = 10.0;

pub const MIN_SPLIT_LAYER: u8 = 1;
pub const MAX_SPLIT_LAYER: u8 = 5;

/// Header line of the profile CSV format.
pub const PROFILE_CSV_HEADER: &str =
    "split,quant,backbone_ms,compress_ms,v2c_ref_ms,c2v_ms,decompress_ms,head_ms,end_to_end_ms,nds,bw_mbps";

/// Numeric precision of the transmitted feature values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantLevel {
    Fp8,
    Fp16,
    Fp32,
}

impl QuantLevel {
    pub const ALL: [QuantLevel; 3] = [QuantLevel::Fp32, QuantLevel::Fp16, QuantLevel::Fp8];

    pub fn bits_per_element(self) -> u32 {
        match self {
            QuantLevel::Fp32 => 32,
            QuantLevel::Fp16 => 16,
            QuantLevel::Fp8 => 8,
        }
    }

    pub fn bytes_per_element(self) -> usize {
        self.bits_per_element() as usize / 8
    }

    /// Inverse of [`QuantLevel::bits_per_element`].
    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(QuantLevel::Fp32),
            16 => Some(QuantLevel::Fp16),
            8 => Some(QuantLevel::Fp8),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantLevel::Fp32 => "FP32",
            QuantLevel::Fp16 => "FP16",
            QuantLevel::Fp8 => "FP8",
        }
    }
}

impl fmt::Display for QuantLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FP32" | "32" => Ok(QuantLevel::Fp32),
            "FP16" | "16" => Ok(QuantLevel::Fp16),
            "FP8" | "8" => Ok(QuantLevel::Fp8),
            other => Err(Error::domain(format!(
                "unknown quantization level {other:?} (expected FP32, FP16 or FP8)"
            ))),
        }
    }
}

/// A `(split layer, quantization)` tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitConfig {
    pub split_layer: u8,
    pub quant: QuantLevel,
}

impl SplitConfig {
    pub fn new(split_layer: u8, quant: QuantLevel) -> Result<Self> {
        if !(MIN_SPLIT_LAYER..=MAX_SPLIT_LAYER).contains(&split_layer) {
            return Err(Error::range("split", split_layer));
        }
        Ok(Self { split_layer, quant })
    }

    /// Lexicographic `(split_layer, quant bits)` key, the last tie-break level.
    pub(crate) fn order_key(&self) -> (u8, u32) {
        (self.split_layer, self.quant.bits_per_element())
    }
}

impl fmt::Display for SplitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "split={} quant={}", self.split_layer, self.quant)
    }
}

impl FromStr for SplitConfig {
    type Err = Error;

    /// Parses `SPLIT,QUANT`, e.g. `1,FP32`.
    fn from_str(s: &str) -> Result<Self> {
        let (split, quant) = s
            .split_once(',')
            .ok_or_else(|| Error::domain(format!("expected SPLIT,QUANT, got {s:?}")))?;
        let split: u8 = split
            .trim()
            .parse()
            .map_err(|_| Error::domain(format!("invalid split layer {split:?}")))?;
        SplitConfig::new(split, quant.parse()?)
    }
}

/// Standard deviations recorded next to each profiled mean. Carried as
/// metadata only; the selector works on means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSpread {
    pub backbone_ms: f64,
    pub compress_ms: f64,
    pub v2c_ms: f64,
    pub c2v_ms: f64,
    pub decompress_ms: f64,
    pub head_ms: f64,
    pub end_to_end_ms: f64,
}

/// One profiled configuration: latency components, accuracy and uplink usage.
#[derive(Debug, Clone, Copy)]
pub struct ConfigProfile {
    pub config: SplitConfig,
    pub t_backbone_ms: f64,
    pub t_compress_ms: f64,
    /// Measured V2C transfer time; the latency model replaces it with
    /// payload / bandwidth.
    pub t_v2c_ref_ms: f64,
    pub t_c2v_ms: f64,
    pub t_decompress_ms: f64,
    pub t_head_ms: f64,
    pub end_to_end_ref_ms: f64,
    pub nds: f64,
    pub bw_usage_mbps: f64,
    pub spread: Option<ComponentSpread>,
}

// `spread` is inert metadata and does not take part in equality.
impl PartialEq for ConfigProfile {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.t_backbone_ms == other.t_backbone_ms
            && self.t_compress_ms == other.t_compress_ms
            && self.t_v2c_ref_ms == other.t_v2c_ref_ms
            && self.t_c2v_ms == other.t_c2v_ms
            && self.t_decompress_ms == other.t_decompress_ms
            && self.t_head_ms == other.t_head_ms
            && self.end_to_end_ref_ms == other.end_to_end_ref_ms
            && self.nds == other.nds
            && self.bw_usage_mbps == other.bw_usage_mbps
    }
}

impl ConfigProfile {
    /// Sum of the six profiled components, in table column order.
    pub fn component_sum_ms(&self) -> f64 {
        self.t_backbone_ms
            + self.t_compress_ms
            + self.t_v2c_ref_ms
            + self.t_c2v_ms
            + self.t_decompress_ms
            + self.t_head_ms
    }

    fn check(&self) -> Result<()> {
        let latencies = [
            ("backbone_ms", self.t_backbone_ms),
            ("compress_ms", self.t_compress_ms),
            ("v2c_ref_ms", self.t_v2c_ref_ms),
            ("c2v_ms", self.t_c2v_ms),
            ("decompress_ms", self.t_decompress_ms),
            ("head_ms", self.t_head_ms),
            ("end_to_end_ms", self.end_to_end_ref_ms),
        ];
        for (field, v) in latencies {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::range(field, v));
            }
        }
        if !(0.0..=1.0).contains(&self.nds) {
            return Err(Error::range("nds", self.nds));
        }
        if !self.bw_usage_mbps.is_finite() || self.bw_usage_mbps <= 0.0 {
            return Err(Error::range("bw_mbps", self.bw_usage_mbps));
        }
        if !(MIN_SPLIT_LAYER..=MAX_SPLIT_LAYER).contains(&self.config.split_layer) {
            return Err(Error::range("split", self.config.split_layer));
        }
        Ok(())
    }
}

/// Feature payload per perception cycle, in bits, at the reference frame rate.
pub fn payload_bits(row: &ConfigProfile) -> f64 {
    row.bw_usage_mbps * 1e6 / REFERENCE_RATE_HZ
}

/// A non-empty set of profiled configurations without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    rows: Vec<ConfigProfile>,
}

impl ProfileTable {
    pub fn new(rows: Vec<ConfigProfile>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("profile table must not be empty"));
        }
        let mut seen = HashSet::with_capacity(rows.len());
        for row in &rows {
            row.check()?;
            if !seen.insert(row.config) {
                return Err(Error::DuplicateConfig(row.config));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ConfigProfile] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, config: SplitConfig) -> Option<&ConfigProfile> {
        self.rows.iter().find(|r| r.config == config)
    }

    /// Serializes the table in the profile CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(PROFILE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.config.split_layer,
                r.config.quant,
                r.t_backbone_ms,
                r.t_compress_ms,
                r.t_v2c_ref_ms,
                r.t_c2v_ms,
                r.t_decompress_ms,
                r.t_head_ms,
                r.end_to_end_ref_ms,
                r.nds,
                r.bw_usage_mbps
            ));
        }
        out
    }
}

/// Parses a profile table from the CSV format (see [`PROFILE_CSV_HEADER`]).
///
/// Lines starting with `#` are comments. Errors carry the 1-based line number.
pub fn load_profile<R: Read>(source: R) -> Result<ProfileTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let mut header_seen = false;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                line,
                msg: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !header_seen {
            let header: Vec<&str> = record.iter().collect();
            let expected: Vec<&str> = PROFILE_CSV_HEADER.split(',').collect();
            if header != expected {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `{PROFILE_CSV_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        if record.len() != 11 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 11 fields, found {}", record.len()),
            });
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid {name} value {:?}", &record[idx]),
            })
        };
        let split: u8 = record[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid split value {:?}", &record[0]),
        })?;
        let quant: QuantLevel = record[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid quant value {:?}", &record[1]),
        })?;
        let row = ConfigProfile {
            config: SplitConfig {
                split_layer: split,
                quant,
            },
            t_backbone_ms: num(2, "backbone_ms")?,
            t_compress_ms: num(3, "compress_ms")?,
            t_v2c_ref_ms: num(4, "v2c_ref_ms")?,
            t_c2v_ms: num(5, "c2v_ms")?,
            t_decompress_ms: num(6, "decompress_ms")?,
            t_head_ms: num(7, "head_ms")?,
            end_to_end_ref_ms: num(8, "end_to_end_ms")?,
            nds: num(9, "nds")?,
            bw_usage_mbps: num(10, "bw_mbps")?,
            spread: None,
        };
        row.check()?;
        if !seen.insert(row.config) {
            return Err(Error::DuplicateConfig(row.config));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: if header_seen { 1 } else { 0 },
            msg: "no rows".into(),
        });
    }
    ProfileTable::new(rows)
}

/// Per-row outcome of [`validate_profile`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowResidual {
    pub config: SplitConfig,
    pub component_sum_ms: f64,
    pub end_to_end_ref_ms: f64,
    /// `|component_sum - end_to_end|`.
    pub residual_ms: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub tol_ms: f64,
    pub rows: Vec<RowResidual>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RowResidual> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

/// Slack for binary representation of 0.1 ms-resolution decimals.
const SUM_EPS_MS: f64 = 1e-9;

/// Checks that the six components of each row add up to its end-to-end column.
pub fn validate_profile(table: &ProfileTable, tol_ms: f64) -> Result<ValidationReport> {
    if !(tol_ms >= 0.0) {
        return Err(Error::domain(format!("tolerance must be >= 0, got {tol_ms}")));
    }
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            let sum = r.component_sum_ms();
            let residual = (sum - r.end_to_end_ref_ms).abs();
            RowResidual {
                config: r.config,
                component_sum_ms: sum,
                end_to_end_ref_ms: r.end_to_end_ref_ms,
                residual_ms: residual,
                pass: residual <= tol_ms + SUM_EPS_MS,
            }
        })
        .collect();
    Ok(ValidationReport { tol_ms, rows })
}

/// Accuracy ranking used by the selector: NDS descending, then lower reference
/// end-to-end latency, lower bandwidth, and finally `(split, quant bits)`.
pub fn nds_rank_cmp(a: &ConfigProfile, b: &ConfigProfile) -> Ordering {
    b.nds
        .total_cmp(&a.nds)
        .then_with(|| a.end_to_end_ref_ms.total_cmp(&b.end_to_end_ref_ms))
        .then_with(|| a.bw_usage_mbps.total_cmp(&b.bw_usage_mbps))
        .then_with(|| a.config.order_key().cmp(&b.config.order_key()))
}

/// Rows in non-increasing NDS order with the deterministic tie-break of
/// [`nds_rank_cmp`].
pub fn sorted_by_nds(table: &ProfileTable) -> Vec<ConfigProfile> {
    let mut rows = table.rows().to_vec();
    rows.sort_by(nds_rank_cmp);
    rows
}

#[rustfmt::skip]
const REFERENCE_ROWS: [(u8, u32, [(f64, f64); 7], f64, f64); 15] = [
    // split, bits, [backbone, compress, v2c, c2v, decompress, head, end-to-end] (mean, sd), nds, bw
    (1, 32, [(17.2, 2.10), (10.7, 1.85), (65.8, 4.00), (11.6, 1.15), (2.6, 0.60), (20.8, 1.35), (128.7, 4.20)], 0.52, 10.5),
    (2, 32, [(22.3, 1.75), (8.6, 1.55), (58.0, 3.90), (9.8, 0.95), (2.4, 0.55), (18.4, 1.25), (119.6, 3.90)], 0.50, 8.4),
    (3, 32, [(30.5, 1.90), (7.3, 1.50), (48.9, 3.75), (8.4, 0.85), (2.5, 0.50), (15.9, 1.30), (113.5, 3.80)], 0.48, 6.8),
    (4, 32, [(39.8, 1.65), (6.4, 1.30), (54.5, 3.50), (7.0, 0.75), (2.3, 0.45), (14.7, 1.10), (124.7, 3.60)], 0.47, 5.9),
    (5, 32, [(55.4, 1.45), (5.1, 1.10), (56.3, 3.20), (5.8, 0.70), (2.5, 0.40), (12.6, 0.95), (137.7, 3.40)], 0.46, 5.4),
    // The decompression mean of this row is missing in the source table;
    // 2.1 makes the components add up to the printed 109.0.
    (1, 16, [(9.3, 1.70), (9.1, 1.50), (57.6, 3.10), (12.7, 0.95), (2.1, 0.50), (18.2, 1.30), (109.0, 3.90)], 0.51, 9.0),
    (2, 16, [(11.7, 1.50), (7.3, 1.30), (39.3, 2.95), (7.6, 0.85), (2.2, 0.45), (16.6, 1.20), (84.7, 3.70)], 0.49, 6.6),
    (3, 16, [(15.3, 1.35), (6.2, 1.20), (44.1, 2.80), (6.6, 0.80), (2.1, 0.40), (14.3, 1.05), (88.7, 3.50)], 0.47, 5.6),
    (4, 16, [(18.5, 1.25), (5.2, 1.05), (42.3, 2.65), (8.6, 0.75), (2.0, 0.35), (13.4, 0.95), (90.0, 3.25)], 0.46, 4.6),
    (5, 16, [(20.4, 1.10), (4.3, 0.95), (31.2, 2.50), (7.1, 0.70), (2.0, 0.30), (12.2, 0.85), (77.2, 3.05)], 0.45, 4.3),
    (1, 8, [(5.1, 1.45), (8.2, 1.45), (33.6, 2.80), (9.8, 0.90), (1.6, 0.50), (15.5, 1.25), (73.8, 3.90)], 0.47, 8.4),
    (2, 8, [(6.2, 1.25), (6.7, 1.30), (40.4, 2.60), (8.1, 0.85), (1.6, 0.45), (14.1, 1.15), (77.1, 3.60)], 0.46, 6.9),
    (3, 8, [(7.3, 1.10), (5.7, 1.10), (44.3, 2.40), (6.3, 0.80), (1.5, 0.40), (12.6, 1.00), (77.7, 3.50)], 0.44, 5.5),
    (4, 8, [(8.4, 1.05), (4.7, 1.00), (33.4, 2.20), (5.6, 0.75), (1.5, 0.35), (11.9, 0.90), (65.5, 3.25)], 0.43, 4.7),
    (5, 8, [(9.1, 0.90), (3.6, 0.90), (29.3, 2.00), (7.0, 0.70), (1.4, 0.30), (11.0, 0.85), (61.9, 3.00)], 0.43, 4.1),
];

/// The 15-row BEVFormer/ResNet101 profile (split layers 1-5 at FP32, FP16, FP8).
pub fn builtin_paper_profile() -> ProfileTable {
    let rows = REFERENCE_ROWS
        .iter()
        .map(|&(split, bits, c, nds, bw)| ConfigProfile {
            config: SplitConfig {
                split_layer: split,
                quant: QuantLevel::from_bits(bits).expect("valid bit width"),
            },
            t_backbone_ms: c[0].0,
            t_compress_ms: c[1].0,
            t_v2c_ref_ms: c[2].0,
            t_c2v_ms: c[3].0,
            t_decompress_ms: c[4].0,
            t_head_ms: c[5].0,
            end_to_end_ref_ms: c[6].0,
            nds,
            bw_usage_mbps: bw,
            spread: Some(ComponentSpread {
                backbone_ms: c[0].1,
                compress_ms: c[1].1,
                v2c_ms: c[2].1,
                c2v_ms: c[3].1,
                decompress_ms: c[4].1,
                head_ms: c[5].1,
                end_to_end_ms: c[6].1,
            }),
        })
        .collect();
    ProfileTable::new(rows).expect("builtin profile is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(split: u8, q: QuantLevel) -> SplitConfig {
        SplitConfig::new(split, q).unwrap()
    }

    #[test]
    fn builtin_rows_match_source_table() {
        let t = builtin_paper_profile();
        assert_eq!(t.len(), 15);

        let r = t.get(cfg(1, QuantLevel::Fp32)).unwrap();
        assert_eq!(
            [r.t_backbone_ms, r.t_compress_ms, r.t_v2c_ref_ms, r.t_c2v_ms, r.t_decompress_ms, r.t_head_ms],
            [17.2, 10.7, 65.8, 11.6, 2.6, 20.8]
        );
        assert_eq!(r.end_to_end_ref_ms, 128.7);
        assert_eq!(r.nds, 0.52);
        assert_eq!(r.bw_usage_mbps, 10.5);
        assert_eq!(r.spread.unwrap().end_to_end_ms, 4.20);

        let r = t.get(cfg(5, QuantLevel::Fp8)).unwrap();
        assert_eq!((r.end_to_end_ref_ms, r.nds, r.bw_usage_mbps), (61.9, 0.43, 4.1));

        let r = t.get(cfg(3, QuantLevel::Fp16)).unwrap();
        assert_eq!((r.end_to_end_ref_ms, r.nds, r.bw_usage_mbps), (88.7, 0.47, 5.6));
    }

    #[test]
    fn validate_residuals() {
        let t = builtin_paper_profile();
        let report = validate_profile(&t, 1.0).unwrap();
        assert!(report.all_pass());

        let row = |c| report.rows.iter().find(|r| r.config == c).unwrap().clone();
        assert!(row(cfg(3, QuantLevel::Fp32)).residual_ms < 1e-9);
        let r = row(cfg(5, QuantLevel::Fp8));
        assert!((r.component_sum_ms - 61.4).abs() < 1e-9);
        assert!((r.residual_ms - 0.5).abs() < 1e-9);

        let strict = validate_profile(&t, 0.0).unwrap();
        let failed: Vec<_> = strict.failures().map(|r| r.config).collect();
        assert!(failed.contains(&cfg(5, QuantLevel::Fp8)));
        assert!(!strict.all_pass());

        assert!(validate_profile(&t, -1.0).is_err());
    }

    #[test]
    fn payload_bits_at_ten_hz() {
        let t = builtin_paper_profile();
        assert_eq!(payload_bits(t.get(cfg(1, QuantLevel::Fp32)).unwrap()), 1_050_000.0);
        assert!((payload_bits(t.get(cfg(5, QuantLevel::Fp8)).unwrap()) - 410_000.0).abs() < 1e-6);
        let mut r = *t.get(cfg(1, QuantLevel::Fp32)).unwrap();
        r.bw_usage_mbps = 10.0;
        assert_eq!(payload_bits(&r), 1_000_000.0);
    }

    #[test]
    fn nds_sort_and_tie_rule() {
        let t = builtin_paper_profile();
        let sorted = sorted_by_nds(&t);
        assert_eq!(sorted[0].config, cfg(1, QuantLevel::Fp32));
        assert!(sorted.windows(2).all(|w| w[0].nds >= w[1].nds));

        let pos = |c| sorted.iter().position(|r| r.config == c).unwrap();
        assert!(pos(cfg(1, QuantLevel::Fp8)) < pos(cfg(3, QuantLevel::Fp16)));
        assert!(pos(cfg(1, QuantLevel::Fp8)) < pos(cfg(4, QuantLevel::Fp32)));
        // 0.43 tie: 61.9 ms beats 65.5 ms
        assert!(pos(cfg(5, QuantLevel::Fp8)) < pos(cfg(4, QuantLevel::Fp8)));

        let single = ProfileTable::new(vec![sorted[3]]).unwrap();
        assert_eq!(sorted_by_nds(&single), vec![sorted[3]]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let t = builtin_paper_profile();
        let csv = t.to_csv();
        assert_eq!(load_profile(csv.as_bytes()).unwrap(), t);

        let commented = format!("# profiled on the vehicle platform\n{csv}");
        assert_eq!(load_profile(commented.as_bytes()).unwrap(), t);

        match load_profile("".as_bytes()) {
            Err(Error::Parse { msg, .. }) => assert_eq!(msg, "no rows"),
            other => panic!("unexpected {other:?}"),
        }
        let header_only = format!("{PROFILE_CSV_HEADER}\n");
        assert!(matches!(load_profile(header_only.as_bytes()), Err(Error::Parse { .. })));

        let bad_nds = format!("{PROFILE_CSV_HEADER}\n1,FP32,1,1,1,1,1,1,6,1.3,10\n");
        assert!(matches!(
            load_profile(bad_nds.as_bytes()),
            Err(Error::Range { field: "nds", .. })
        ));

        let negative = format!("{PROFILE_CSV_HEADER}\n1,FP32,-1,1,1,1,1,1,6,0.3,10\n");
        assert!(matches!(load_profile(negative.as_bytes()), Err(Error::Range { .. })));

        let dup = format!(
            "{PROFILE_CSV_HEADER}\n1,FP32,1,1,1,1,1,1,6,0.3,10\n1,FP32,1,1,1,1,1,1,6,0.3,10\n"
        );
        assert!(matches!(load_profile(dup.as_bytes()), Err(Error::DuplicateConfig(_))));

        let garbage = format!("{PROFILE_CSV_HEADER}\n1,FP32,1,1,1,1,1,1,6,0.3,10\n2,FP16,x,1,1,1,1,1,6,0.3,10\n");
        match load_profile(garbage.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quant_level_parsing() {
        assert_eq!("fp16".parse::<QuantLevel>().unwrap(), QuantLevel::Fp16);
        assert!("FP4".parse::<QuantLevel>().is_err());
        assert_eq!("5,FP8".parse::<SplitConfig>().unwrap(), cfg(5, QuantLevel::Fp8));
        assert!("6,FP8".parse::<SplitConfig>().is_err());
    }
}
