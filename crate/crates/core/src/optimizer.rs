//! Per-cycle selection of the split layer and quantization level.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::latency::{estimate_latency, DownlinkPolicy, LatencyBreakdown};
use crate::profile::{ConfigProfile, ProfileTable, SplitConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub config: SplitConfig,
    pub nds: f64,
    pub breakdown: LatencyBreakdown,
    /// Whether the latency bound was met.
    pub feasible: bool,
    /// Number of latency estimates performed to reach the decision.
    pub evaluations: usize,
}

fn check_inputs(len: usize, bw_upl_mbps: f64, lat_max_ms: f64) -> Result<()> {
    if len == 0 {
        return Err(Error::domain("configuration array must not be empty"));
    }
    if !(bw_upl_mbps > 0.0) {
        return Err(Error::domain(format!("uplink bandwidth must be > 0, got {bw_upl_mbps}")));
    }
    if !(lat_max_ms > 0.0) {
        return Err(Error::domain(format!("latency bound must be > 0, got {lat_max_ms}")));
    }
    Ok(())
}

/// Walks `sorted` (non-increasing NDS) and returns the first configuration
/// whose estimated total latency is within `lat_max_ms`. If none is, returns
/// the first configuration with the minimum estimated latency, marked
/// infeasible.
pub fn opt_par(
    sorted: &[ConfigProfile],
    bw_upl_mbps: f64,
    dwn: DownlinkPolicy,
    lat_max_ms: f64,
) -> Result<Selection> {
    check_inputs(sorted.len(), bw_upl_mbps, lat_max_ms)?;
    if sorted.windows(2).any(|w| w[0].nds < w[1].nds) {
        return Err(Error::domain("configuration array is not sorted by non-increasing NDS"));
    }

    let mut lat_min = f64::INFINITY;
    let mut lat_min_idx = 0;
    let mut best: Option<LatencyBreakdown> = None;
    for (idx, row) in sorted.iter().enumerate() {
        let b = estimate_latency(row, bw_upl_mbps, dwn)?;
        if b.total_ms <= lat_max_ms {
            return Ok(Selection {
                config: row.config,
                nds: row.nds,
                breakdown: b,
                feasible: true,
                evaluations: idx + 1,
            });
        } else if b.total_ms < lat_min {
            lat_min = b.total_ms;
            lat_min_idx = idx;
            best = Some(b);
        }
    }
    let row = &sorted[lat_min_idx];
    let breakdown = match best {
        Some(b) => b,
        // Every total was NaN-free and > lat_max, so `best` is set unless all
        // totals were +inf.
        None => estimate_latency(row, bw_upl_mbps, dwn)?,
    };
    Ok(Selection {
        config: row.config,
        nds: row.nds,
        breakdown,
        feasible: false,
        evaluations: sorted.len(),
    })
}

/// Independent exhaustive selector used to check [`opt_par`].
///
/// Scores every row; among rows within the bound it takes the highest NDS,
/// otherwise the lowest total latency. Ties are broken by lower reference
/// end-to-end latency, then lower bandwidth, then `(split, quant bits)`.
pub fn oracle_select(
    table: &ProfileTable,
    bw_upl_mbps: f64,
    dwn: DownlinkPolicy,
    lat_max_ms: f64,
) -> Result<Selection> {
    check_inputs(table.len(), bw_upl_mbps, lat_max_ms)?;

    let scored = table
        .rows()
        .iter()
        .map(|r| estimate_latency(r, bw_upl_mbps, dwn).map(|b| (r, b)))
        .collect::<Result<Vec<_>>>()?;

    let tie = |a: &ConfigProfile, b: &ConfigProfile| -> Ordering {
        a.end_to_end_ref_ms
            .partial_cmp(&b.end_to_end_ref_ms)
            .unwrap_or(Ordering::Equal)
            .then(
                a.bw_usage_mbps
                    .partial_cmp(&b.bw_usage_mbps)
                    .unwrap_or(Ordering::Equal),
            )
            .then(a.config.split_layer.cmp(&b.config.split_layer))
            .then(
                a.config
                    .quant
                    .bits_per_element()
                    .cmp(&b.config.quant.bits_per_element()),
            )
    };

    // "better" means strictly preferred under the respective criterion.
    let feasible_better = |a: &(&ConfigProfile, LatencyBreakdown), b: &(&ConfigProfile, LatencyBreakdown)| {
        a.0.nds > b.0.nds || (a.0.nds == b.0.nds && tie(a.0, b.0) == Ordering::Less)
    };
    let fallback_better = |a: &(&ConfigProfile, LatencyBreakdown), b: &(&ConfigProfile, LatencyBreakdown)| {
        a.1.total_ms < b.1.total_ms
            || (a.1.total_ms == b.1.total_ms
                && (a.0.nds > b.0.nds || (a.0.nds == b.0.nds && tie(a.0, b.0) == Ordering::Less)))
    };

    let mut feasible_pick: Option<&(&ConfigProfile, LatencyBreakdown)> = None;
    let mut fallback_pick = &scored[0];
    for cand in &scored {
        if cand.1.total_ms <= lat_max_ms {
            feasible_pick = match feasible_pick {
                Some(cur) if !feasible_better(cand, cur) => Some(cur),
                _ => Some(cand),
            };
        }
        if fallback_better(cand, fallback_pick) {
            fallback_pick = cand;
        }
    }

    let (pick, feasible) = match feasible_pick {
        Some(p) => (p, true),
        None => (fallback_pick, false),
    };
    Ok(Selection {
        config: pick.0.config,
        nds: pick.0.nds,
        breakdown: pick.1,
        feasible,
        evaluations: scored.len(),
    })
}
