//! Optimizer, latency model, metrics and replay properties against
//! brute-force references written here.

use adaptive_offload::latency::{estimate_latency, DownlinkPolicy};
use adaptive_offload::metrics::{accuracy_gain, nds, DetectionScores};
use adaptive_offload::profile::{load_profile, sorted_by_nds};
use adaptive_offload::sim::{replay_dynamic, replay_static, sweep, synth_trace, BandwidthTrace, SimParams};
use adaptive_offload::{
    builtin_paper_profile, opt_par, oracle_select, ConfigProfile, ProfileTable, QuantLevel, SplitConfig,
};
use proptest::prelude::*;

fn total(r: &ConfigProfile, bw: f64) -> f64 {
    r.t_backbone_ms
        + r.t_compress_ms
        + r.bw_usage_mbps * 1e5 / (bw * 1e3)
        + r.t_decompress_ms
        + r.t_head_ms
        + r.t_c2v_ms
}

/// Tables built from a random subset of the 15 configurations with values on
/// a coarse grid so that NDS and latency ties are common.
fn arb_table() -> impl Strategy<Value = ProfileTable> {
    let row = (
        prop::collection::vec(0u32..400, 6),
        0u32..=20,
        1u32..=120,
    );
    (prop::sample::subsequence((0..15).collect::<Vec<usize>>(), 1..=15), prop::collection::vec(row, 15)).prop_map(
        |(picked, rows)| {
            let rows = picked
                .into_iter()
                .map(|i| {
                    let (t, nds, bw) = &rows[i];
                    let ms = |k: usize| f64::from(t[k]) / 10.0 * if k == 2 { 3.0 } else { 1.0 };
                    let mut r = ConfigProfile {
                        config: SplitConfig::new((i % 5) as u8 + 1, QuantLevel::ALL[i / 5]).unwrap(),
                        t_backbone_ms: ms(0),
                        t_compress_ms: ms(1),
                        t_v2c_ref_ms: ms(2),
                        t_c2v_ms: ms(3),
                        t_decompress_ms: ms(4),
                        t_head_ms: ms(5),
                        end_to_end_ref_ms: 0.0,
                        nds: f64::from(*nds) / 20.0 * 0.2 + 0.35,
                        bw_usage_mbps: f64::from(*bw) / 10.0,
                        spread: None,
                    };
                    r.end_to_end_ref_ms = (r.component_sum_ms() * 10.0).round() / 10.0;
                    r
                })
                .collect();
            ProfileTable::new(rows).unwrap()
        },
    )
}

/// Reference: best NDS within the bound, ranked with the same tie-break as
/// the sorted input; otherwise the first minimum-latency row in that order.
fn reference(table: &ProfileTable, bw: f64, lat_max: f64) -> (SplitConfig, bool) {
    let sorted = sorted_by_nds(table);
    if let Some(r) = sorted.iter().find(|r| total(r, bw) <= lat_max) {
        let best = sorted
            .iter()
            .filter(|c| total(c, bw) <= lat_max)
            .map(|c| c.nds)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.nds, best);
        return (r.config, true);
    }
    let min = sorted.iter().map(|r| total(r, bw)).fold(f64::INFINITY, f64::min);
    let r = sorted.iter().find(|r| total(r, bw) == min).unwrap();
    (r.config, false)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn opt_par_matches_exhaustive_search(table in arb_table(), bw in 0.05f64..300.0, lat_max in 5.0f64..400.0) {
        let dwn = DownlinkPolicy::ProfiledC2V;
        let sel = opt_par(&sorted_by_nds(&table), bw, dwn, lat_max).unwrap();
        let (want, feasible) = reference(&table, bw, lat_max);
        prop_assert_eq!(sel.config, want);
        prop_assert_eq!(sel.feasible, feasible);
        let oracle = oracle_select(&table, bw, dwn, lat_max).unwrap();
        prop_assert_eq!(oracle.config, sel.config);
        prop_assert_eq!(oracle.feasible, sel.feasible);
    }

    #[test]
    fn selection_dominance(table in arb_table(), bw in 0.05f64..300.0, lat_max in 5.0f64..400.0) {
        let sel = opt_par(&sorted_by_nds(&table), bw, DownlinkPolicy::ProfiledC2V, lat_max).unwrap();
        for r in table.rows() {
            let t = total(r, bw);
            if sel.feasible {
                prop_assert!(sel.breakdown.total_ms <= lat_max);
                prop_assert!(!(t <= lat_max && r.nds > sel.nds), "{} beats the selection", r.config);
            } else {
                prop_assert!(t > lat_max);
                prop_assert!(t >= sel.breakdown.total_ms - 1e-9);
            }
        }
    }

    #[test]
    fn selected_accuracy_is_monotone(table in arb_table(), bw in 0.05f64..150.0, dbw in 0.0f64..150.0,
                                     lat_max in 5.0f64..300.0, dlat in 0.0f64..100.0) {
        let sorted = sorted_by_nds(&table);
        let dwn = DownlinkPolicy::ProfiledC2V;
        let base = opt_par(&sorted, bw, dwn, lat_max).unwrap();
        let more_bw = opt_par(&sorted, bw + dbw, dwn, lat_max).unwrap();
        let looser = opt_par(&sorted, bw, dwn, lat_max + dlat).unwrap();
        if base.feasible {
            prop_assert!(more_bw.feasible && more_bw.nds >= base.nds);
            prop_assert!(looser.feasible && looser.nds >= base.nds);
        }
    }

    #[test]
    fn latency_components_and_monotonicity(table in arb_table(), bw in 0.05f64..300.0, k in 1.0f64..10.0) {
        for r in table.rows() {
            let b = estimate_latency(r, bw, DownlinkPolicy::ProfiledC2V).unwrap();
            prop_assert_eq!(b.total_ms, b.lat_local_ms + b.lat_upl_ms + b.lat_cloud_ms + b.lat_dwn_ms);
            prop_assert!((b.total_ms - total(r, bw)).abs() < 1e-9);
            let faster = estimate_latency(r, bw * k, DownlinkPolicy::ProfiledC2V).unwrap();
            prop_assert!(faster.total_ms <= b.total_ms);
            prop_assert_eq!(faster.lat_local_ms, b.lat_local_ms);
        }
    }

    #[test]
    fn csv_round_trip(table in arb_table()) {
        prop_assert_eq!(load_profile(table.to_csv().as_bytes()).unwrap(), table);
    }

    #[test]
    fn nds_is_bounded_and_capped(map in 0.0f64..=1.0, e in prop::array::uniform5(0.0f64..5.0)) {
        let s = nds(&DetectionScores::new(map, e).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
        let capped = e.map(|v| v.min(1.0));
        prop_assert_eq!(s, nds(&DetectionScores::new(map, capped).unwrap()));
    }

    #[test]
    fn synthetic_traces_hit_their_moments(seed in any::<u64>(), n in 500usize..1500,
                                         mean in 5.0f64..60.0, rel_std in 0.05f64..0.8) {
        let std = rel_std * (mean - 0.5);
        let t = synth_trace(n, mean, std, seed).unwrap();
        prop_assert!((t.mean_mbps() - mean).abs() <= 0.05 * mean);
        prop_assert!((t.std_mbps() - std).abs() <= 0.05 * std);
        prop_assert!(t.samples().iter().all(|s| s.uplink_mbps >= 0.5));
    }
}

#[test]
fn builtin_profile_round_trips_through_csv() {
    let t = builtin_paper_profile();
    assert_eq!(load_profile(t.to_csv().as_bytes()).unwrap(), t);
}

#[test]
fn fallback_example() {
    let sel = opt_par(
        &sorted_by_nds(&builtin_paper_profile()),
        1.0,
        DownlinkPolicy::ProfiledC2V,
        100.0,
    )
    .unwrap();
    assert_eq!(sel.config, SplitConfig::new(5, QuantLevel::Fp8).unwrap());
    assert!(!sel.feasible);
    // 9.1 + 3.6 + 410000 / 1000 + 1.4 + 11.0 + 7.0
    assert!((sel.breakdown.total_ms - 442.1).abs() < 1e-9);
}

#[test]
fn replay_budget_equals_scaled_trace() {
    let table = builtin_paper_profile();
    let trace = synth_trace(300, 20.0, 8.0, 11).unwrap();
    let half = trace.scaled(0.5).unwrap();
    let a = replay_dynamic(&trace, &table, &SimParams::new(100.0, 0.5).unwrap()).unwrap();
    let b = replay_dynamic(&half, &table, &SimParams::new(100.0, 1.0).unwrap()).unwrap();
    let configs = |r: &adaptive_offload::sim::SimReport| r.records.iter().map(|c| c.config).collect::<Vec<_>>();
    assert_eq!(configs(&a), configs(&b));
    assert_eq!(a.violations, b.violations);
}

#[test]
fn replay_histogram_sums_to_one() {
    let table = builtin_paper_profile();
    let trace = synth_trace(654, 25.8, 12.1, 42).unwrap();
    for budget in [0.1, 0.3, 0.7, 1.0] {
        let r = replay_dynamic(&trace, &table, &SimParams::new(120.0, budget).unwrap()).unwrap();
        let sum: f64 = r.usage.iter().map(|u| u.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(r.violations <= r.cycles());
    }
}

#[test]
fn dynamic_violations_never_exceed_fastest_static() {
    let table = builtin_paper_profile();
    let trace = synth_trace(654, 25.8, 12.1, 42).unwrap();
    let fastest = table.get(SplitConfig::new(5, QuantLevel::Fp8).unwrap()).unwrap();
    for lat_max in [50.0, 75.0, 100.0, 150.0, 250.0] {
        for budget in [0.2, 0.5, 1.0] {
            let p = SimParams::new(lat_max, budget).unwrap();
            let d = replay_dynamic(&trace, &table, &p).unwrap();
            let s = replay_static(&trace, fastest, &p).unwrap();
            assert_eq!(d.violations, s.violations, "lat_max={lat_max} budget={budget}");
            assert!(d.mean_nds >= s.mean_nds);
        }
    }
}

#[test]
fn single_point_sweep_matches_direct_replays() {
    let table = builtin_paper_profile();
    let trace = synth_trace(200, 25.8, 12.1, 7).unwrap();
    let s = sweep(&trace, &table, &[0.6], &[120.0], DownlinkPolicy::ProfiledC2V).unwrap();
    assert_eq!(s.cells.len(), 1);
    assert_eq!(s.cells[0].len(), 1);
    let c = s.cell(0, 0);
    let p = SimParams::new(120.0, 0.6).unwrap();
    let d = replay_dynamic(&trace, &table, &p).unwrap();
    let base = replay_static(&trace, table.get(c.baseline).unwrap(), &p).unwrap();
    assert_eq!(c.dynamic_mean_nds, d.mean_nds);
    assert_eq!(c.baseline_mean_nds, base.mean_nds);
    assert_eq!(c.gain, accuracy_gain(d.mean_nds, base.mean_nds).unwrap());
    // no static configuration has fewer violations than the baseline
    for r in table.rows() {
        assert!(replay_static(&trace, r, &p).unwrap().violations >= c.baseline_violations);
    }
}

#[test]
fn constant_trace_replays() {
    let table = builtin_paper_profile();
    let fast = BandwidthTrace::from_rates(&[100.0; 30], "constant").unwrap();
    let r = replay_dynamic(&fast, &table, &SimParams::new(100.0, 1.0).unwrap()).unwrap();
    assert!(r.records.iter().all(|c| c.config == SplitConfig::new(1, QuantLevel::Fp32).unwrap()));
    assert!((r.mean_nds - 0.52).abs() < 1e-12);
    assert_eq!(r.violations, 0);
}
