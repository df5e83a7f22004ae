//! `offload`: command-line front end for the offloading toolkit.
//!
//! Exit codes: 0 success, 1 domain error (including failed checks),
//! 2 usage error or unreadable input file.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adaptive_offload::cpm::{decode_cpm, encode_cpm, random_message};
use adaptive_offload::net::{
    cloud_spawn, run_loopback_demo, vehicle_run, CloudConfig, ShaperConfig, VehicleConfig,
    VehicleSummary, DEFAULT_BURST_MTUS, DEFAULT_MTU_BYTES,
};
use adaptive_offload::pipeline::{
    clip, compress, percentile, run_local_stage, serialize_quantized, ClipSpec, FeatureTensor,
    StubBackbone,
};
use adaptive_offload::profile::{load_profile, sorted_by_nds, validate_profile};
use adaptive_offload::sim::{
    load_trace, replay_dynamic, replay_static, sweep, synth_trace, BandwidthTrace, SimParams,
};
use adaptive_offload::{
    builtin_paper_profile, opt_par, DownlinkPolicy, Error, ProfileTable, QuantLevel, SplitConfig,
};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const PROFILE_ENV: &str = "OFFLOAD_PROFILE";

#[derive(Parser)]
#[command(name = "offload", version, about = "Split-computing offload selection, replay and demo tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that each profile row's components add up to its end-to-end latency.
    ValidateProfile(ValidateArgs),
    /// Select the configuration for one bandwidth and latency bound.
    Optimize(OptimizeArgs),
    /// Replay a bandwidth trace with the adaptive or a fixed configuration.
    Replay(ReplayArgs),
    /// Accuracy gain over the best static configuration on a budget x bound grid.
    Sweep(SweepArgs),
    /// Run the onboard data path once and report sizes, timings and a payload hash.
    PipelineBench(BenchArgs),
    /// Randomized CPM encode/decode round trips.
    Cpm(CpmArgs),
    /// UDP vehicle/cloud demo.
    Demo(DemoArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["profile", "builtin"])))]
struct ValidateArgs {
    /// Profile CSV.
    #[arg(long, env = PROFILE_ENV)]
    profile: Option<PathBuf>,
    /// Use the built-in 15-row profile.
    #[arg(long)]
    builtin: bool,
    #[arg(long, default_value_t = 1.0)]
    tol_ms: f64,
}

#[derive(Args)]
struct ProfileArg {
    /// Profile CSV; the built-in profile when absent.
    #[arg(long, env = PROFILE_ENV)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct DownlinkArgs {
    /// Fixed downlink time instead of the profiled C2V latency.
    #[arg(long, conflicts_with = "dwn_mbps")]
    dwn_ms: Option<f64>,
    /// Downlink bandwidth; the CPM size comes from --cpm-bits.
    #[arg(long, requires = "cpm_bits")]
    dwn_mbps: Option<f64>,
    #[arg(long)]
    cpm_bits: Option<f64>,
}

impl DownlinkArgs {
    fn policy(&self) -> DownlinkPolicy {
        match (self.dwn_ms, self.dwn_mbps, self.cpm_bits) {
            (Some(ms), _, _) => DownlinkPolicy::FixedMs(ms),
            (None, Some(bw), Some(bits)) => DownlinkPolicy::Bandwidth {
                bw_dwn_mbps: bw,
                cpm_bits: bits,
            },
            _ => DownlinkPolicy::ProfiledC2V,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    bw_mbps: f64,
    #[arg(long)]
    lat_max_ms: f64,
    #[command(flatten)]
    profile: ProfileArg,
    #[command(flatten)]
    dwn: DownlinkArgs,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace CSV (`t_s,uplink_mbps`).
    #[arg(long, conflicts_with = "synth")]
    trace: Option<PathBuf>,
    /// Synthetic trace `N,MEAN,STD,SEED`; default 654,25.8,12.1,42.
    #[arg(long)]
    synth: Option<String>,
}

impl TraceArgs {
    fn load(&self) -> Result<BandwidthTrace, Failure> {
        if let Some(path) = &self.trace {
            return Ok(load_trace(BufReader::new(open(path)?))?);
        }
        let spec = self.synth.as_deref().unwrap_or("654,25.8,12.1,42");
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let bad = || Failure::Usage(format!("--synth expects N,MEAN,STD,SEED, got {spec:?}"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let n: usize = parts[0].parse().map_err(|_| bad())?;
        let mean: f64 = parts[1].parse().map_err(|_| bad())?;
        let std: f64 = parts[2].parse().map_err(|_| bad())?;
        let seed: u64 = parts[3].parse().map_err(|_| bad())?;
        Ok(synth_trace(n, mean, std, seed)?)
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Share of the measured uplink available to perception.
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
    #[arg(long, default_value_t = 100.0)]
    lat_max_ms: f64,
    /// Replay a fixed configuration `SPLIT,QUANT` instead of adapting.
    #[arg(long = "static", value_name = "SPLIT,QUANT")]
    fixed: Option<String>,
    /// Emit per-cycle records as CSV instead of the summary.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    profile: ProfileArg,
    #[command(flatten)]
    dwn: DownlinkArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
    budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "50,75,100,150,250")]
    lat_maxes: Vec<f64>,
    #[command(flatten)]
    profile: ProfileArg,
    #[command(flatten)]
    dwn: DownlinkArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Input tensor `C,H,W`.
    #[arg(long, default_value = "64,100,100")]
    dims: String,
    #[arg(long, default_value_t = 3)]
    split: u8,
    #[arg(long, default_value = "FP16")]
    quant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave out the wall-clock lines so the output is reproducible.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct CpmArgs {
    #[arg(long, default_value_t = 1000)]
    roundtrip: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    max_objects: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Vehicle,
    Cloud,
    /// Both endpoints in this process on 127.0.0.1.
    Loopback,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, value_enum)]
    role: Role,
    /// Cloud bind address, or the address the vehicle sends to.
    #[arg(long, default_value = "127.0.0.1:47000")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 100.0)]
    rate_mbps: f64,
    #[arg(long, default_value_t = DEFAULT_BURST_MTUS * DEFAULT_MTU_BYTES)]
    burst_bytes: usize,
    #[arg(long, default_value_t = DEFAULT_MTU_BYTES)]
    mtu: usize,
    #[arg(long, default_value_t = 100)]
    cycles: usize,
    #[arg(long, default_value = "16,64,64")]
    dims: String,
    #[arg(long, default_value_t = 2)]
    split: u8,
    #[arg(long, default_value = "FP16")]
    quant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
    /// Minimum time between cycle starts.
    #[arg(long)]
    period_ms: Option<u64>,
    /// Cloud role only: stop after this many seconds and print statistics.
    #[arg(long)]
    duration_s: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Io(io) if io.kind() == io::ErrorKind::NotFound => Failure::Usage(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_table(path: Option<&Path>) -> Result<ProfileTable, Failure> {
    match path {
        Some(p) => load_profile(BufReader::new(open(p)?))
            .map_err(|e| Failure::Domain(format!("{}: {e}", p.display()))),
        None => Ok(builtin_paper_profile()),
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), Failure> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--dims expects C,H,W, got {s:?}")))?;
    match v[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Failure::Usage(format!("--dims expects C,H,W, got {s:?}"))),
    }
}

fn parse_quant(s: &str) -> Result<QuantLevel, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

type Out<'a> = &'a mut dyn Write;

fn validate(args: ValidateArgs, out: Out) -> Result<bool, Failure> {
    let table = if args.builtin {
        builtin_paper_profile()
    } else {
        load_table(args.profile.as_deref())?
    };
    let report = validate_profile(&table, args.tol_ms)?;
    let _ = writeln!(out, "split,quant,component_sum_ms,end_to_end_ms,residual_ms,pass");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{:.1},{}",
            r.config.split_layer, r.config.quant, r.component_sum_ms, r.end_to_end_ref_ms, r.residual_ms, r.pass
        );
    }
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!("{failed} of {} rows exceed {} ms", report.rows.len(), args.tol_ms);
    }
    Ok(failed == 0)
}

fn optimize(args: OptimizeArgs, out: Out) -> Result<bool, Failure> {
    let table = load_table(args.profile.profile.as_deref())?;
    let sel = opt_par(&sorted_by_nds(&table), args.bw_mbps, args.dwn.policy(), args.lat_max_ms)?;
    let _ = writeln!(
        out,
        "{} total={:.1}ms feasible={}",
        sel.config, sel.breakdown.total_ms, sel.feasible
    );
    Ok(true)
}

fn replay(args: ReplayArgs, out: Out) -> Result<bool, Failure> {
    let table = load_table(args.profile.profile.as_deref())?;
    let trace = args.trace.load()?;
    let mut params = SimParams::new(args.lat_max_ms, args.budget)?;
    params.dwn = args.dwn.policy();
    let report = match &args.fixed {
        Some(s) => {
            let config: SplitConfig = s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let row = table
                .get(config)
                .ok_or_else(|| Failure::Domain(format!("{config} is not in the profile")))?;
            replay_static(&trace, row, &params)?
        }
        None => replay_dynamic(&trace, &table, &params)?,
    };
    let text = if args.csv { report.cycles_csv() } else { report.to_text() };
    let _ = out.write_all(text.as_bytes());
    Ok(true)
}

fn sweep_cmd(args: SweepArgs, out: Out) -> Result<bool, Failure> {
    let table = load_table(args.profile.profile.as_deref())?;
    let trace = args.trace.load()?;
    let surface = sweep(&trace, &table, &args.budgets, &args.lat_maxes, args.dwn.policy())?;
    let _ = out.write_all(surface.to_csv().as_bytes());
    Ok(true)
}

fn bench(args: BenchArgs, out: Out) -> Result<bool, Failure> {
    let (c, h, w) = parse_dims(&args.dims)?;
    let quant = parse_quant(&args.quant)?;
    let backbone = StubBackbone::default();
    if args.split == 0 || args.split as usize > backbone.depth() {
        return Err(Failure::Domain(format!(
            "split layer {} outside 1..={}",
            args.split,
            backbone.depth()
        )));
    }
    let input = FeatureTensor::synthetic(c, h, w, args.seed)?;
    let spec = ClipSpec::default();

    let t = Instant::now();
    let features = backbone.run(&input, 1, args.split as usize);
    let t_backbone = t.elapsed();
    let t = Instant::now();
    let lo = percentile(&features, spec.low())? as f32;
    let hi = percentile(&features, spec.high())? as f32;
    let clipped = clip(&features, lo, hi)?;
    let t_clip = t.elapsed();
    let t = Instant::now();
    let raw = serialize_quantized(&clipped, quant);
    let t_quant = t.elapsed();
    let t = Instant::now();
    let deflated = compress(&raw);
    let t_deflate = t.elapsed();

    let payload = run_local_stage(&input, args.split, spec, quant)?;
    let bytes = payload.to_bytes();
    let (fc, fh, fw) = features.dims();
    let _ = writeln!(out, "input_dims={c},{h},{w}");
    let _ = writeln!(out, "feature_dims={fc},{fh},{fw}");
    let _ = writeln!(out, "split={} quant={quant}", args.split);
    let _ = writeln!(out, "thres_low={lo} thres_up={hi}");
    let _ = writeln!(out, "raw_bytes={}", raw.len());
    let _ = writeln!(out, "compressed_bytes={}", deflated.len());
    let _ = writeln!(out, "payload_bytes={}", bytes.len());
    let _ = writeln!(out, "ratio={:.4}", deflated.len() as f64 / raw.len() as f64);
    let _ = writeln!(out, "sha256={:x}", Sha256::digest(&bytes));
    if !args.no_timings {
        let _ = writeln!(out, "t_backbone_ms={:.3}", ms(t_backbone));
        let _ = writeln!(out, "t_clip_ms={:.3}", ms(t_clip));
        let _ = writeln!(out, "t_quant_ms={:.3}", ms(t_quant));
        let _ = writeln!(out, "t_deflate_ms={:.3}", ms(t_deflate));
    }
    Ok(true)
}

fn cpm(args: CpmArgs, out: Out) -> Result<bool, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut ok = 0;
    let mut total_bytes = 0;
    for i in 0..args.roundtrip {
        let m = random_message(&mut rng, args.max_objects);
        let bytes = encode_cpm(&m)?;
        total_bytes += bytes.len();
        match decode_cpm(&bytes) {
            Ok(back) if back == m => ok += 1,
            Ok(_) => eprintln!("message {i}: decoded message differs"),
            Err(e) => eprintln!("message {i}: {e}"),
        }
    }
    let _ = writeln!(out, "roundtrips={} ok={ok} bytes={total_bytes}", args.roundtrip);
    Ok(ok == args.roundtrip)
}

fn demo(args: DemoArgs, out: Out) -> Result<bool, Failure> {
    let shaper = ShaperConfig::new(args.rate_mbps, args.burst_bytes, args.mtu)?;
    let vehicle = || -> Result<VehicleConfig, Failure> {
        Ok(VehicleConfig {
            cycles: args.cycles,
            dims: parse_dims(&args.dims)?,
            split: args.split,
            quant: parse_quant(&args.quant)?,
            seed: args.seed,
            response_timeout: Duration::from_millis(args.timeout_ms),
            period: args.period_ms.map(Duration::from_millis),
            ..VehicleConfig::new(args.addr, shaper)
        })
    };
    let report = |summary: &VehicleSummary, out: Out| {
        let _ = out.write_all(summary.to_csv().as_bytes());
        eprintln!(
            "cycles={} cpms={} lost={}",
            args.cycles,
            summary.timings.len(),
            summary.lost.len()
        );
    };
    match args.role {
        Role::Vehicle => {
            let summary = vehicle_run(&vehicle()?)?;
            report(&summary, out);
            Ok(true)
        }
        Role::Loopback => {
            let (summary, stats) = run_loopback_demo(&vehicle()?, CloudConfig::default())?;
            report(&summary, out);
            eprintln!(
                "cloud delivered={} dropped={} cpms_sent={}",
                stats.reassembly.delivered, stats.reassembly.dropped, stats.cpms_sent
            );
            Ok(true)
        }
        Role::Cloud => {
            let handle = cloud_spawn(CloudConfig {
                bind: args.addr,
                ..CloudConfig::default()
            })?;
            eprintln!("cloud listening on {}", handle.local_addr());
            match args.duration_s {
                Some(s) if s.is_finite() && s >= 0.0 => std::thread::sleep(Duration::from_secs_f64(s)),
                Some(s) => return Err(Failure::Domain(format!("invalid duration {s}"))),
                None => loop {
                    std::thread::park();
                },
            }
            let stats = handle.shutdown()?;
            let r = &stats.reassembly;
            let _ = writeln!(
                out,
                "delivered={} dropped={} duplicate_fragments={} malformed={} cpms_sent={}",
                r.delivered, r.dropped, r.duplicate_fragments, stats.malformed, stats.cpms_sent
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let out: Out = &mut lock;
    let result = match cli.command {
        Command::ValidateProfile(a) => validate(a, out),
        Command::Optimize(a) => optimize(a, out),
        Command::Replay(a) => replay(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::PipelineBench(a) => bench(a, out),
        Command::Cpm(a) => cpm(a, out),
        Command::Demo(a) => demo(a, out),
    };
    let _ = lock.flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
