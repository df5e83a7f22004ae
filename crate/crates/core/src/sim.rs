//! Bandwidth-trace replay of the adaptive perception loop and of static
//! baselines.
//!
//! Each trace sample is one perception cycle: the effective uplink is the
//! sample scaled by the perception budget, a configuration is selected (or
//! fixed), and the latency model decides whether the cycle met its bound.
//! Nothing sleeps; the replay is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::latency::{estimate_latency, DownlinkPolicy, LatencyBreakdown};
use crate::metrics::accuracy_gain;
use crate::optimizer::opt_par;
use crate::profile::{sorted_by_nds, ConfigProfile, ProfileTable, SplitConfig};

/// Synthetic traces never go below this uplink rate.
pub const TRACE_FLOOR_MBPS: f64 = 0.5;

pub const TRACE_CSV_HEADER: &str = "t_s,uplink_mbps";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSample {
    pub t_s: f64,
    pub uplink_mbps: f64,
}

/// Time-ordered uplink bandwidth samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    samples: Vec<BandwidthSample>,
    pub provenance: String,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<BandwidthSample>, provenance: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("bandwidth trace must not be empty"));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.uplink_mbps > 0.0) || !s.uplink_mbps.is_finite() {
                return Err(Error::domain(format!(
                    "sample {i}: uplink must be finite and > 0, got {}",
                    s.uplink_mbps
                )));
            }
            if !s.t_s.is_finite() {
                return Err(Error::domain(format!("sample {i}: timestamp must be finite")));
            }
            if i > 0 && s.t_s <= samples[i - 1].t_s {
                return Err(Error::domain(format!(
                    "sample {i}: timestamps must be strictly increasing ({} after {})",
                    s.t_s,
                    samples[i - 1].t_s
                )));
            }
        }
        Ok(Self {
            samples,
            provenance: provenance.into(),
        })
    }

    /// 1 Hz trace from a list of uplink rates.
    pub fn from_rates(rates: &[f64], provenance: impl Into<String>) -> Result<Self> {
        let samples = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| BandwidthSample {
                t_s: i as f64,
                uplink_mbps: r,
            })
            .collect();
        Self::new(samples, provenance)
    }

    pub fn samples(&self) -> &[BandwidthSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_mbps(&self) -> f64 {
        self.samples.iter().map(|s| s.uplink_mbps).sum::<f64>() / self.len() as f64
    }

    /// Population standard deviation of the uplink samples.
    pub fn std_mbps(&self) -> f64 {
        let m = self.mean_mbps();
        let var = self
            .samples
            .iter()
            .map(|s| (s.uplink_mbps - m).powi(2))
            .sum::<f64>()
            / self.len() as f64;
        var.sqrt()
    }

    /// Same timestamps, every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| BandwidthSample {
                t_s: s.t_s,
                uplink_mbps: s.uplink_mbps * factor,
            })
            .collect();
        Self::new(samples, format!("{} x{factor}", self.provenance))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.t_s, s.uplink_mbps);
        }
        out
    }
}

/// Parses a `t_s,uplink_mbps` CSV trace. Lines starting with `#` are skipped.
pub fn load_trace<R: Read>(source: R) -> Result<BandwidthTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let mut header_seen = false;
    let mut samples: Vec<BandwidthSample> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !header_seen {
            if record.len() != 2 || &record[0] != "t_s" || &record[1] != "uplink_mbps" {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `{TRACE_CSV_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let parse = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number {:?}", &record[i]),
            })
        };
        let sample = BandwidthSample {
            t_s: parse(0)?,
            uplink_mbps: parse(1)?,
        };
        if !(sample.uplink_mbps > 0.0) || !sample.uplink_mbps.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("uplink must be > 0, got {}", sample.uplink_mbps),
            });
        }
        if let Some(prev) = samples.last() {
            if !(sample.t_s > prev.t_s) {
                return Err(Error::Parse {
                    line,
                    msg: format!("timestamp {} does not increase (previous {})", sample.t_s, prev.t_s),
                });
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no samples".into(),
        });
    }
    BandwidthTrace::new(samples, "csv")
}

/// Location/scale of a normal whose truncation to `[floor, inf)` has the
/// requested mean and standard deviation.
fn untruncated_params(mean: f64, std: f64, floor: f64) -> Result<(f64, f64)> {
    let unit = StdNormal::standard();
    let (mut mu, mut sigma) = (mean, std);
    for _ in 0..500 {
        let alpha = (floor - mu) / sigma;
        let lambda = unit.pdf(alpha) / unit.sf(alpha);
        let var_factor = 1.0 + alpha * lambda - lambda * lambda;
        if !(var_factor > 0.0) || !lambda.is_finite() {
            break;
        }
        let next_sigma = std / var_factor.sqrt();
        let next_mu = mean - next_sigma * lambda;
        let done = (next_sigma - sigma).abs() < 1e-12 && (next_mu - mu).abs() < 1e-12;
        mu = next_mu;
        sigma = next_sigma;
        if done {
            return Ok((mu, sigma));
        }
    }
    Err(Error::domain(format!(
        "no normal truncated at {floor} Mbps has mean {mean} and std {std}"
    )))
}

/// `n` samples at 1 Hz from a normal distribution truncated below at
/// [`TRACE_FLOOR_MBPS`], parameterised so that the truncated distribution has
/// the requested mean and standard deviation.
pub fn synth_trace(n: usize, mean_mbps: f64, std_mbps: f64, seed: u64) -> Result<BandwidthTrace> {
    if n == 0 {
        return Err(Error::domain("trace length must be >= 1"));
    }
    if !(mean_mbps > TRACE_FLOOR_MBPS) || !mean_mbps.is_finite() {
        return Err(Error::domain(format!(
            "mean must exceed the {TRACE_FLOOR_MBPS} Mbps floor, got {mean_mbps}"
        )));
    }
    if !(std_mbps >= 0.0) || !std_mbps.is_finite() {
        return Err(Error::domain(format!("std must be >= 0, got {std_mbps}")));
    }
    let provenance = format!("synthetic n={n} mean={mean_mbps} std={std_mbps} seed={seed}");
    if std_mbps == 0.0 {
        return BandwidthTrace::from_rates(&vec![mean_mbps; n], provenance);
    }
    let (mu, sigma) = untruncated_params(mean_mbps, std_mbps, TRACE_FLOOR_MBPS)?;
    let dist = Normal::new(mu, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates: Vec<f64> = (0..n)
        .map(|_| loop {
            let v = dist.sample(&mut rng);
            if v >= TRACE_FLOOR_MBPS {
                break v;
            }
        })
        .collect();
    BandwidthTrace::from_rates(&match_moments(rates, mean_mbps, std_mbps), provenance)
}

/// Pulls the sample moments onto the targets: affine rescale, clamp at the
/// floor, repeat. A raw draw of a few hundred samples can miss the target
/// std by more than 5% on its own.
fn match_moments(mut rates: Vec<f64>, mean: f64, std: f64) -> Vec<f64> {
    if rates.len() < 2 {
        return rates;
    }
    for _ in 0..50 {
        let n = rates.len() as f64;
        let m = rates.iter().sum::<f64>() / n;
        let s = (rates.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        if s == 0.0 {
            break;
        }
        if (m - mean).abs() <= 1e-9 * mean && (s - std).abs() <= 1e-9 * std {
            break;
        }
        for v in rates.iter_mut() {
            *v = (mean + (*v - m) * std / s).max(TRACE_FLOOR_MBPS);
        }
    }
    rates
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub lat_max_ms: f64,
    /// Share of the measured uplink reserved for perception, in (0, 1].
    pub budget_fraction: f64,
    pub dwn: DownlinkPolicy,
    /// Cycle period; `None` means equal to `lat_max_ms`.
    pub cycle_ms: Option<f64>,
}

impl SimParams {
    pub fn new(lat_max_ms: f64, budget_fraction: f64) -> Result<Self> {
        let p = Self {
            lat_max_ms,
            budget_fraction,
            dwn: DownlinkPolicy::ProfiledC2V,
            cycle_ms: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat_max_ms > 0.0) {
            return Err(Error::domain(format!("lat_max must be > 0, got {}", self.lat_max_ms)));
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::domain(format!(
                "budget fraction must be in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if let Some(c) = self.cycle_ms {
            if !(c > 0.0) {
                return Err(Error::domain(format!("cycle period must be > 0, got {c}")));
            }
        }
        self.dwn.validate()
    }

    pub fn cycle_ms(&self) -> f64 {
        self.cycle_ms.unwrap_or(self.lat_max_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub t_s: f64,
    pub effective_uplink_mbps: f64,
    pub config: SplitConfig,
    pub nds: f64,
    pub breakdown: LatencyBreakdown,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageEntry {
    pub config: SplitConfig,
    pub count: usize,
    pub fraction: f64,
}

/// Outcome of one replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub policy: String,
    pub params: SimParams,
    pub records: Vec<CycleRecord>,
    /// Selection counts, ordered by `(split, quant bits)`.
    pub usage: Vec<UsageEntry>,
    pub violations: usize,
    pub mean_nds: f64,
    pub mean_total_ms: f64,
}

impl SimReport {
    fn assemble(policy: String, params: SimParams, records: Vec<CycleRecord>) -> Self {
        let cycles = records.len();
        let mut counts: BTreeMap<(u8, u32), (SplitConfig, usize)> = BTreeMap::new();
        for r in &records {
            counts.entry(r.config.order_key()).or_insert((r.config, 0)).1 += 1;
        }
        let usage = counts
            .into_values()
            .map(|(config, count)| UsageEntry {
                config,
                count,
                fraction: count as f64 / cycles as f64,
            })
            .collect();
        Self {
            policy,
            params,
            violations: records.iter().filter(|r| !r.feasible).count(),
            mean_nds: records.iter().map(|r| r.nds).sum::<f64>() / cycles as f64,
            mean_total_ms: records.iter().map(|r| r.breakdown.total_ms).sum::<f64>() / cycles as f64,
            records,
            usage,
        }
    }

    pub fn cycles(&self) -> usize {
        self.records.len()
    }

    /// Fraction of cycles that selected any of `configs`.
    pub fn usage_share(&self, configs: &[SplitConfig]) -> f64 {
        self.usage
            .iter()
            .filter(|u| configs.contains(&u.config))
            .fold(0.0, |acc, u| acc + u.fraction)
    }

    /// Key-value summary followed by the usage histogram as CSV.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "policy={}", self.policy);
        let _ = writeln!(out, "cycles={}", self.cycles());
        let _ = writeln!(out, "lat_max_ms={}", self.params.lat_max_ms);
        let _ = writeln!(out, "budget_fraction={}", self.params.budget_fraction);
        let _ = writeln!(out, "violations={}", self.violations);
        let _ = writeln!(out, "mean_nds={:.6}", self.mean_nds);
        let _ = writeln!(out, "mean_total_ms={:.3}", self.mean_total_ms);
        out.push_str("split,quant,count,fraction\n");
        for u in &self.usage {
            let _ = writeln!(
                out,
                "{},{},{},{:.6}",
                u.config.split_layer, u.config.quant, u.count, u.fraction
            );
        }
        out
    }

    /// Per-cycle records as CSV.
    pub fn cycles_csv(&self) -> String {
        let mut out = String::from(
            "t_s,effective_uplink_mbps,split,quant,nds,local_ms,upl_ms,cloud_ms,dwn_ms,total_ms,feasible\n",
        );
        for r in &self.records {
            let b = &r.breakdown;
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
                r.t_s,
                r.effective_uplink_mbps,
                r.config.split_layer,
                r.config.quant,
                r.nds,
                b.lat_local_ms,
                b.lat_upl_ms,
                b.lat_cloud_ms,
                b.lat_dwn_ms,
                b.total_ms,
                r.feasible
            );
        }
        out
    }
}

pub fn save_report<W: Write>(report: &SimReport, mut sink: W) -> Result<()> {
    sink.write_all(report.to_text().as_bytes())?;
    Ok(())
}

/// Replays the adaptive loop: one selection per trace sample.
pub fn replay_dynamic(
    trace: &BandwidthTrace,
    table: &ProfileTable,
    params: &SimParams,
) -> Result<SimReport> {
    params.validate()?;
    let sorted = sorted_by_nds(table);
    let records = trace
        .samples()
        .iter()
        .map(|s| {
            let bw = s.uplink_mbps * params.budget_fraction;
            let sel = opt_par(&sorted, bw, params.dwn, params.lat_max_ms)?;
            Ok(CycleRecord {
                t_s: s.t_s,
                effective_uplink_mbps: bw,
                config: sel.config,
                nds: sel.nds,
                breakdown: sel.breakdown,
                feasible: sel.feasible,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimReport::assemble("dynamic".into(), *params, records))
}

/// Replays a fixed configuration over the trace.
pub fn replay_static(
    trace: &BandwidthTrace,
    row: &ConfigProfile,
    params: &SimParams,
) -> Result<SimReport> {
    params.validate()?;
    let records = trace
        .samples()
        .iter()
        .map(|s| {
            let bw = s.uplink_mbps * params.budget_fraction;
            let b = estimate_latency(row, bw, params.dwn)?;
            Ok(CycleRecord {
                t_s: s.t_s,
                effective_uplink_mbps: bw,
                config: row.config,
                nds: row.nds,
                breakdown: b,
                feasible: b.total_ms <= params.lat_max_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimReport::assemble(
        format!("static({})", row.config),
        *params,
        records,
    ))
}

/// The static configuration with the fewest latency violations on `trace`;
/// ties go to the lower mean latency, then to the accuracy ranking.
pub fn violation_minimizing_static(
    trace: &BandwidthTrace,
    table: &ProfileTable,
    params: &SimParams,
) -> Result<SimReport> {
    let mut best: Option<SimReport> = None;
    for row in sorted_by_nds(table) {
        let r = replay_static(trace, &row, params)?;
        let better = match &best {
            None => true,
            Some(b) => {
                r.violations < b.violations
                    || (r.violations == b.violations && r.mean_total_ms < b.mean_total_ms)
            }
        };
        if better {
            best = Some(r);
        }
    }
    Ok(best.expect("table is non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCell {
    pub budget_fraction: f64,
    pub lat_max_ms: f64,
    pub dynamic_mean_nds: f64,
    pub baseline: SplitConfig,
    pub baseline_mean_nds: f64,
    pub gain: f64,
    pub dynamic_violations: usize,
    pub baseline_violations: usize,
}

/// Accuracy gain of the dynamic policy over the violation-minimizing static
/// configuration on a `lat_max x budget` grid. `cells[i][j]` belongs to
/// `lat_maxes[i]` and `budgets[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSurface {
    pub budgets: Vec<f64>,
    pub lat_maxes: Vec<f64>,
    pub cells: Vec<Vec<GainCell>>,
}

impl GainSurface {
    pub fn cell(&self, lat_max_idx: usize, budget_idx: usize) -> &GainCell {
        &self.cells[lat_max_idx][budget_idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GainCell> {
        self.cells.iter().flatten()
    }

    pub const CSV_HEADER: &'static str = "budget,lat_max_ms,dynamic_mean_nds,baseline_split,baseline_quant,baseline_mean_nds,gain,dynamic_violations,baseline_violations";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in self.iter() {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{:.6},{:.6},{},{}",
                c.budget_fraction,
                c.lat_max_ms,
                c.dynamic_mean_nds,
                c.baseline.split_layer,
                c.baseline.quant,
                c.baseline_mean_nds,
                c.gain,
                c.dynamic_violations,
                c.baseline_violations
            );
        }
        out
    }
}

pub fn sweep(
    trace: &BandwidthTrace,
    table: &ProfileTable,
    budgets: &[f64],
    lat_maxes: &[f64],
    dwn: DownlinkPolicy,
) -> Result<GainSurface> {
    if budgets.is_empty() || lat_maxes.is_empty() {
        return Err(Error::domain("sweep grids must not be empty"));
    }
    let cells = lat_maxes
        .iter()
        .map(|&lat_max_ms| {
            budgets
                .iter()
                .map(|&budget_fraction| {
                    let params = SimParams {
                        lat_max_ms,
                        budget_fraction,
                        dwn,
                        cycle_ms: None,
                    };
                    let dynamic = replay_dynamic(trace, table, &params)?;
                    let baseline = violation_minimizing_static(trace, table, &params)?;
                    Ok(GainCell {
                        budget_fraction,
                        lat_max_ms,
                        dynamic_mean_nds: dynamic.mean_nds,
                        baseline: baseline.records[0].config,
                        baseline_mean_nds: baseline.mean_nds,
                        gain: accuracy_gain(dynamic.mean_nds, baseline.mean_nds)?,
                        dynamic_violations: dynamic.violations,
                        baseline_violations: baseline.violations,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSurface {
        budgets: budgets.to_vec(),
        lat_maxes: lat_maxes.to_vec(),
        cells,
    })
}
