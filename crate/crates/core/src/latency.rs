//! Four-phase end-to-end latency model.
//!
//! `total = local + uplink + cloud + downlink`, where the onboard and cloud
//! phases come straight from the profile, the uplink phase is the per-cycle
//! payload divided by the available uplink bandwidth, and the downlink phase
//! follows a [`DownlinkPolicy`]. Propagation delay is not modelled.

use crate::error::{Error, Result};
use crate::profile::{payload_bits, ConfigProfile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub lat_local_ms: f64,
    pub lat_upl_ms: f64,
    pub lat_cloud_ms: f64,
    pub lat_dwn_ms: f64,
    pub total_ms: f64,
}

impl LatencyBreakdown {
    /// Builds a breakdown whose total is the sum of the four phases.
    pub fn from_phases(local: f64, upl: f64, cloud: f64, dwn: f64) -> Self {
        Self {
            lat_local_ms: local,
            lat_upl_ms: upl,
            lat_cloud_ms: cloud,
            lat_dwn_ms: dwn,
            total_ms: local + upl + cloud + dwn,
        }
    }

    /// Same breakdown with the uplink phase replaced, e.g. by a measured value.
    pub fn with_uplink(&self, upl_ms: f64) -> Self {
        Self::from_phases(self.lat_local_ms, upl_ms, self.lat_cloud_ms, self.lat_dwn_ms)
    }
}

/// How the cloud-to-vehicle phase is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DownlinkPolicy {
    /// Profiled average C2V latency of the row.
    #[default]
    ProfiledC2V,
    FixedMs(f64),
    /// `cpm_bits / bw_dwn_mbps`.
    Bandwidth { bw_dwn_mbps: f64, cpm_bits: f64 },
}

impl DownlinkPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DownlinkPolicy::ProfiledC2V => Ok(()),
            DownlinkPolicy::FixedMs(ms) if ms.is_finite() && ms >= 0.0 => Ok(()),
            DownlinkPolicy::FixedMs(ms) => {
                Err(Error::domain(format!("fixed downlink latency must be >= 0, got {ms}")))
            }
            DownlinkPolicy::Bandwidth {
                bw_dwn_mbps,
                cpm_bits,
            } if bw_dwn_mbps > 0.0 && cpm_bits > 0.0 && cpm_bits.is_finite() => Ok(()),
            DownlinkPolicy::Bandwidth { .. } => Err(Error::domain(
                "downlink bandwidth and CPM size must both be > 0",
            )),
        }
    }

    fn downlink_ms(&self, row: &ConfigProfile) -> f64 {
        match *self {
            DownlinkPolicy::ProfiledC2V => row.t_c2v_ms,
            DownlinkPolicy::FixedMs(ms) => ms,
            DownlinkPolicy::Bandwidth {
                bw_dwn_mbps,
                cpm_bits,
            } => transfer_ms(cpm_bits, bw_dwn_mbps),
        }
    }
}

/// Ideal transfer time of `bits` over `mbps`, in milliseconds.
pub fn transfer_ms(bits: f64, mbps: f64) -> f64 {
    bits / (mbps * 1e3)
}

fn check_bandwidth(bw_upl_mbps: f64) -> Result<()> {
    // +inf is accepted and yields a zero uplink phase.
    if bw_upl_mbps > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("uplink bandwidth must be > 0, got {bw_upl_mbps}")))
    }
}

/// Estimated latency of `row` at uplink bandwidth `bw_upl_mbps`.
pub fn estimate_latency(
    row: &ConfigProfile,
    bw_upl_mbps: f64,
    dwn: DownlinkPolicy,
) -> Result<LatencyBreakdown> {
    check_bandwidth(bw_upl_mbps)?;
    dwn.validate()?;
    Ok(estimate_unchecked(row, bw_upl_mbps, dwn))
}

pub(crate) fn estimate_unchecked(
    row: &ConfigProfile,
    bw_upl_mbps: f64,
    dwn: DownlinkPolicy,
) -> LatencyBreakdown {
    LatencyBreakdown::from_phases(
        row.t_backbone_ms + row.t_compress_ms,
        transfer_ms(payload_bits(row), bw_upl_mbps),
        row.t_decompress_ms + row.t_head_ms,
        dwn.downlink_ms(row),
    )
}

/// `total <= lat_max` (inclusive bound).
pub fn within_bound(b: &LatencyBreakdown, lat_max_ms: f64) -> bool {
    b.total_ms <= lat_max_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{builtin_paper_profile, QuantLevel, SplitConfig};

    fn row(split: u8, q: QuantLevel) -> ConfigProfile {
        *builtin_paper_profile()
            .get(SplitConfig::new(split, q).unwrap())
            .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn split1_fp32_at_100_mbps() {
        let b = estimate_latency(&row(1, QuantLevel::Fp32), 100.0, DownlinkPolicy::ProfiledC2V).unwrap();
        assert!(close(b.lat_local_ms, 27.9));
        assert!(close(b.lat_upl_ms, 10.5));
        assert!(close(b.lat_cloud_ms, 23.4));
        assert!(close(b.lat_dwn_ms, 11.6));
        assert!(close(b.total_ms, 73.4));
        assert!(within_bound(&b, 100.0));

        let measured = b.with_uplink(65.8);
        assert!(close(measured.total_ms, 128.7));
        assert!(!within_bound(&measured, 100.0));
    }

    #[test]
    fn infinite_bandwidth_limit() {
        let r = row(3, QuantLevel::Fp16);
        let b = estimate_latency(&r, f64::INFINITY, DownlinkPolicy::ProfiledC2V).unwrap();
        assert_eq!(b.lat_upl_ms, 0.0);
        assert_eq!(b.total_ms, b.lat_local_ms + b.lat_cloud_ms + b.lat_dwn_ms);
    }

    #[test]
    fn bound_is_inclusive() {
        let b = LatencyBreakdown::from_phases(10.0, 20.0, 30.0, 40.0);
        assert!(within_bound(&b, 100.0));
        assert!(!within_bound(&b, 99.999));
    }

    #[test]
    fn downlink_policies() {
        let r = row(2, QuantLevel::Fp8);
        let fixed = estimate_latency(&r, 50.0, DownlinkPolicy::FixedMs(3.0)).unwrap();
        assert_eq!(fixed.lat_dwn_ms, 3.0);
        let bw = DownlinkPolicy::Bandwidth {
            bw_dwn_mbps: 8.0,
            cpm_bits: 8000.0,
        };
        assert!(close(estimate_latency(&r, 50.0, bw).unwrap().lat_dwn_ms, 1.0));
        assert!(estimate_latency(&r, 50.0, DownlinkPolicy::FixedMs(-1.0)).is_err());
        assert!(estimate_latency(
            &r,
            50.0,
            DownlinkPolicy::Bandwidth {
                bw_dwn_mbps: 0.0,
                cpm_bits: 1.0
            }
        )
        .is_err());
    }

    #[test]
    fn rejects_non_positive_bandwidth() {
        let r = row(1, QuantLevel::Fp32);
        for bw in [0.0, -5.0, f64::NAN] {
            assert!(matches!(
                estimate_latency(&r, bw, DownlinkPolicy::ProfiledC2V),
                Err(Error::Domain(_))
            ));
        }
    }
}
