//! Two-endpoint UDP harness: a vehicle runs the onboard stage and ships the
//! payload through a token-bucket shaper, a cloud endpoint reassembles it,
//! finishes the backbone and answers with a CPM.
//!
//! Every datagram starts with a 14-byte cycle header (little-endian):
//! `"SPCY" | cycle_id u32 | split u8 | quant u8 | frag_index u16 | frag_count u16`.
//! Cloud responses reuse the header (`frag 0/1`) followed by the cloud
//! processing time in microseconds (`u32`) and the encoded CPM.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::cpm::{encode_cpm, objects_from_features, CpmMessage, ItsPduHeader, ManagementContainer, SensorInfo};
use crate::error::{Error, Result};
use crate::pipeline::{run_cloud_stage, run_local_stage, ClipSpec, CompressedPayload, FeatureTensor};
use crate::profile::QuantLevel;

pub const CYCLE_MAGIC: [u8; 4] = *b"SPCY";
pub const CYCLE_HEADER_LEN: usize = 14;
pub const DEFAULT_MTU_BYTES: usize = 1400;
/// With a one-MTU bucket every sleep overshoot is lost to the capacity cap
/// and the achieved rate drifts low.
pub const DEFAULT_BURST_MTUS: usize = 4;

const POLL_INTERVAL: Duration = Duration::from_millis(20);
const MAX_DATAGRAM: usize = 65_535;
const RECENT_IDS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleHeader {
    pub cycle_id: u32,
    pub split: u8,
    pub quant: u8,
    pub frag_index: u16,
    pub frag_count: u16,
}

impl CycleHeader {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&CYCLE_MAGIC);
        out.extend_from_slice(&self.cycle_id.to_le_bytes());
        out.push(self.split);
        out.push(self.quant);
        out.extend_from_slice(&self.frag_index.to_le_bytes());
        out.extend_from_slice(&self.frag_count.to_le_bytes());
    }

    /// Splits a datagram into its header and body.
    pub fn parse(datagram: &[u8]) -> Result<(CycleHeader, &[u8])> {
        if datagram.len() < CYCLE_HEADER_LEN {
            return Err(Error::Truncated {
                needed: CYCLE_HEADER_LEN,
                available: datagram.len(),
            });
        }
        if datagram[..4] != CYCLE_MAGIC {
            return Err(Error::BadMagic {
                expected: CYCLE_MAGIC,
                found: datagram[..4].to_vec(),
            });
        }
        let h = CycleHeader {
            cycle_id: u32::from_le_bytes(datagram[4..8].try_into().unwrap()),
            split: datagram[8],
            quant: datagram[9],
            frag_index: u16::from_le_bytes([datagram[10], datagram[11]]),
            frag_count: u16::from_le_bytes([datagram[12], datagram[13]]),
        };
        if h.frag_count == 0 || h.frag_index >= h.frag_count {
            return Err(Error::Decode(format!(
                "fragment {} of {} is out of range",
                h.frag_index, h.frag_count
            )));
        }
        Ok((h, &datagram[CYCLE_HEADER_LEN..]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShaperConfig {
    pub rate_mbps: f64,
    pub burst_bytes: usize,
    pub mtu_bytes: usize,
}

impl ShaperConfig {
    /// Shaper with the default MTU and a burst of [`DEFAULT_BURST_MTUS`] MTUs.
    pub fn with_rate(rate_mbps: f64) -> Result<Self> {
        Self::new(rate_mbps, DEFAULT_BURST_MTUS * DEFAULT_MTU_BYTES, DEFAULT_MTU_BYTES)
    }

    pub fn new(rate_mbps: f64, burst_bytes: usize, mtu_bytes: usize) -> Result<Self> {
        let cfg = Self {
            rate_mbps,
            burst_bytes,
            mtu_bytes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_mbps > 0.0) || !self.rate_mbps.is_finite() {
            return Err(Error::domain(format!("shaper rate must be > 0, got {}", self.rate_mbps)));
        }
        if self.mtu_bytes <= CYCLE_HEADER_LEN || self.mtu_bytes > MAX_DATAGRAM {
            return Err(Error::domain(format!(
                "mtu must be in {}..={MAX_DATAGRAM}, got {}",
                CYCLE_HEADER_LEN + 1,
                self.mtu_bytes
            )));
        }
        if self.burst_bytes < self.mtu_bytes {
            return Err(Error::domain(format!(
                "burst ({}) must be at least one mtu ({})",
                self.burst_bytes, self.mtu_bytes
            )));
        }
        Ok(())
    }

    fn fragment_len(&self) -> usize {
        self.mtu_bytes - CYCLE_HEADER_LEN
    }
}

/// Token bucket over payload bytes; starts full.
#[derive(Debug)]
pub struct TokenBucket {
    rate_bytes_per_s: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(rate_mbps: f64, burst_bytes: usize) -> Self {
        Self {
            rate_bytes_per_s: rate_mbps * 1e6 / 8.0,
            capacity: burst_bytes as f64,
            tokens: burst_bytes as f64,
            last: Instant::now(),
        }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let dt = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.rate_bytes_per_s).min(self.capacity);
    }

    /// Blocks until `n` tokens are available, then consumes them.
    pub fn acquire(&mut self, n: usize) {
        let n = n as f64;
        loop {
            self.refill();
            if self.tokens >= n {
                self.tokens -= n;
                return;
            }
            let wait = (n - self.tokens) / self.rate_bytes_per_s;
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// Where shaped datagrams go.
pub trait DatagramSink {
    fn send_datagram(&mut self, datagram: &[u8]) -> io::Result<()>;
}

/// A connected socket.
impl DatagramSink for UdpSocket {
    fn send_datagram(&mut self, datagram: &[u8]) -> io::Result<()> {
        self.send(datagram).map(|_| ())
    }
}

impl DatagramSink for &UdpSocket {
    fn send_datagram(&mut self, datagram: &[u8]) -> io::Result<()> {
        self.send(datagram).map(|_| ())
    }
}

impl DatagramSink for Vec<Vec<u8>> {
    fn send_datagram(&mut self, datagram: &[u8]) -> io::Result<()> {
        self.push(datagram.to_vec());
        Ok(())
    }
}

impl DatagramSink for Sender<Vec<u8>> {
    fn send_datagram(&mut self, datagram: &[u8]) -> io::Result<()> {
        self.send(datagram.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "receiver dropped"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendReport {
    pub payload_bytes: usize,
    pub wire_bytes: usize,
    pub datagrams: usize,
    pub elapsed: Duration,
}

impl SendReport {
    pub fn goodput_mbps(&self) -> f64 {
        self.payload_bytes as f64 * 8.0 / self.elapsed.as_secs_f64() / 1e6
    }

    pub fn elapsed_ms(&self) -> f64 {
        self.elapsed.as_secs_f64() * 1e3
    }
}

/// Fragmenting, rate-limited sender. Keeps its bucket across calls.
#[derive(Debug)]
pub struct Shaper {
    cfg: ShaperConfig,
    bucket: TokenBucket,
}

impl Shaper {
    pub fn new(cfg: ShaperConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            bucket: TokenBucket::new(cfg.rate_mbps, cfg.burst_bytes),
            cfg,
        })
    }

    pub fn config(&self) -> &ShaperConfig {
        &self.cfg
    }

    /// Sends `payload` as one cycle: `ceil(len / (mtu - header))` datagrams,
    /// each paced by the bucket on its payload bytes.
    pub fn send<S: DatagramSink + ?Sized>(
        &mut self,
        sink: &mut S,
        cycle_id: u32,
        split: u8,
        quant: u8,
        payload: &[u8],
    ) -> Result<SendReport> {
        let frag_len = self.cfg.fragment_len();
        let frag_count = payload.len().div_ceil(frag_len).max(1);
        let frag_count_u16 = u16::try_from(frag_count).map_err(|_| {
            Error::domain(format!("payload of {} bytes needs too many fragments", payload.len()))
        })?;
        let start = Instant::now();
        let mut wire = 0;
        let mut buf = Vec::with_capacity(self.cfg.mtu_bytes);
        for idx in 0..frag_count {
            let chunk = &payload[(idx * frag_len).min(payload.len())..((idx + 1) * frag_len).min(payload.len())];
            self.bucket.acquire(chunk.len());
            buf.clear();
            CycleHeader {
                cycle_id,
                split,
                quant,
                frag_index: idx as u16,
                frag_count: frag_count_u16,
            }
            .write(&mut buf);
            buf.extend_from_slice(chunk);
            sink.send_datagram(&buf)?;
            wire += buf.len();
        }
        Ok(SendReport {
            payload_bytes: payload.len(),
            wire_bytes: wire,
            datagrams: frag_count,
            elapsed: start.elapsed(),
        })
    }
}

/// One-shot shaped transfer with a fresh bucket.
pub fn shaped_send<S: DatagramSink + ?Sized>(
    sink: &mut S,
    bytes: &[u8],
    cfg: ShaperConfig,
) -> Result<SendReport> {
    Shaper::new(cfg)?.send(sink, 0, 0, 0, bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedCycle {
    pub cycle_id: u32,
    pub split: u8,
    pub quant: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug)]
struct Partial {
    first_seen: Instant,
    split: u8,
    quant: u8,
    frags: Vec<Option<Vec<u8>>>,
    received: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReassemblyStats {
    pub delivered: usize,
    pub dropped: usize,
    pub duplicate_fragments: usize,
    pub late_fragments: usize,
}

/// Per-cycle fragment reassembly with a deadline measured from the first
/// fragment. Each cycle id is delivered at most once; incomplete cycles are
/// dropped when their deadline passes.
#[derive(Debug)]
pub struct Reassembler {
    deadline: Duration,
    partial: HashMap<u32, Partial>,
    finished: HashSet<u32>,
    finished_order: VecDeque<u32>,
    stats: ReassemblyStats,
}

impl Reassembler {
    pub fn new(deadline: Duration) -> Self {
        Self {
            deadline,
            partial: HashMap::new(),
            finished: HashSet::new(),
            finished_order: VecDeque::new(),
            stats: ReassemblyStats::default(),
        }
    }

    pub fn stats(&self) -> &ReassemblyStats {
        &self.stats
    }

    fn finish(&mut self, id: u32) {
        if self.finished.insert(id) {
            self.finished_order.push_back(id);
            if self.finished_order.len() > RECENT_IDS {
                if let Some(old) = self.finished_order.pop_front() {
                    self.finished.remove(&old);
                }
            }
        }
    }

    pub fn push(&mut self, header: CycleHeader, body: &[u8], now: Instant) -> Option<CompletedCycle> {
        self.expire(now);
        if self.finished.contains(&header.cycle_id) {
            self.stats.late_fragments += 1;
            return None;
        }
        let count = header.frag_count as usize;
        let entry = self.partial.entry(header.cycle_id).or_insert_with(|| Partial {
            first_seen: now,
            split: header.split,
            quant: header.quant,
            frags: vec![None; count],
            received: 0,
        });
        if entry.frags.len() != count {
            self.stats.duplicate_fragments += 1;
            return None;
        }
        let slot = &mut entry.frags[header.frag_index as usize];
        if slot.is_some() {
            self.stats.duplicate_fragments += 1;
            return None;
        }
        *slot = Some(body.to_vec());
        entry.received += 1;
        if entry.received < count {
            return None;
        }
        let p = self.partial.remove(&header.cycle_id).expect("entry exists");
        self.finish(header.cycle_id);
        self.stats.delivered += 1;
        Some(CompletedCycle {
            cycle_id: header.cycle_id,
            split: p.split,
            quant: p.quant,
            payload: p.frags.into_iter().flatten().flatten().collect(),
        })
    }

    /// Drops partial cycles older than the deadline; returns how many.
    pub fn expire(&mut self, now: Instant) -> usize {
        let deadline = self.deadline;
        let expired: Vec<u32> = self
            .partial
            .iter()
            .filter(|(_, p)| now.duration_since(p.first_seen) > deadline)
            .map(|(&id, _)| id)
            .collect();
        for id in &expired {
            self.partial.remove(id);
            self.finish(*id);
        }
        self.stats.dropped += expired.len();
        expired.len()
    }
}

#[derive(Debug, Clone)]
pub struct CloudConfig {
    pub bind: SocketAddr,
    pub reassembly_deadline: Duration,
    /// Total stub backbone depth; the cloud runs `split+1..=n_layers`.
    pub n_layers: usize,
    pub max_objects: usize,
    pub station_id: u32,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            reassembly_deadline: Duration::from_millis(500),
            n_layers: crate::pipeline::DEFAULT_STUB_DEPTH,
            max_objects: 16,
            station_id: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CloudStats {
    pub reassembly: ReassemblyStats,
    pub cpms_sent: usize,
    pub malformed: usize,
    pub processing_errors: usize,
    /// Cycle ids handed to the cloud stage, in completion order.
    pub delivered_ids: Vec<u32>,
}

pub struct CloudHandle {
    local_addr: SocketAddr,
    stop: Sender<()>,
    receiver: JoinHandle<()>,
    worker: JoinHandle<CloudStats>,
}

impl CloudHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops both activities and returns the final statistics.
    pub fn shutdown(self) -> Result<CloudStats> {
        let _ = self.stop.send(());
        self.receiver
            .join()
            .map_err(|_| Error::domain("cloud receive thread panicked"))?;
        self.worker
            .join()
            .map_err(|_| Error::domain("cloud worker thread panicked"))
    }
}

struct Inbound {
    from: SocketAddr,
    datagram: Vec<u8>,
    at: Instant,
}

fn cloud_response(
    cfg: &CloudConfig,
    cycle: &CompletedCycle,
) -> Result<Vec<u8>> {
    let start = Instant::now();
    let payload = CompressedPayload::from_bytes(&cycle.payload)?;
    let out = run_cloud_stage(&payload, cfg.n_layers)?;
    let msg = CpmMessage {
        header: ItsPduHeader {
            protocol_version: 2,
            message_id: 14,
            station_id: cfg.station_id,
        },
        management: ManagementContainer {
            latitude: 41_157_900,
            longitude: -8_629_100,
            altitude_cm: 0,
            generation_time_ms: u64::from(cycle.cycle_id) * 100,
        },
        sensors: vec![SensorInfo {
            sensor_id: 0,
            sensor_type: 1,
        }],
        objects: objects_from_features(&out, cfg.max_objects),
    };
    let cpm = encode_cpm(&msg)?;
    let cloud_us = start.elapsed().as_micros().min(u32::MAX as u128) as u32;
    let mut buf = Vec::with_capacity(CYCLE_HEADER_LEN + 4 + cpm.len());
    CycleHeader {
        cycle_id: cycle.cycle_id,
        split: cycle.split,
        quant: cycle.quant,
        frag_index: 0,
        frag_count: 1,
    }
    .write(&mut buf);
    buf.extend_from_slice(&cloud_us.to_le_bytes());
    buf.extend_from_slice(&cpm);
    Ok(buf)
}

/// Binds the cloud endpoint and starts its receive and processing threads.
pub fn cloud_spawn(cfg: CloudConfig) -> Result<CloudHandle> {
    let socket = UdpSocket::bind(cfg.bind)?;
    socket.set_read_timeout(Some(POLL_INTERVAL))?;
    let local_addr = socket.local_addr()?;
    let reply_socket = socket.try_clone()?;
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let (in_tx, in_rx) = mpsc::channel::<Inbound>();

    let receiver = thread::spawn(move || {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            match stop_rx.try_recv() {
                Ok(()) | Err(TryRecvError::Disconnected) => break,
                Err(TryRecvError::Empty) => {}
            }
            match socket.recv_from(&mut buf) {
                Ok((n, from)) => {
                    let msg = Inbound {
                        from,
                        datagram: buf[..n].to_vec(),
                        at: Instant::now(),
                    };
                    if in_tx.send(msg).is_err() {
                        break;
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                // ICMP port unreachable from a vanished vehicle surfaces here
                Err(_) => {}
            }
        }
    });

    let worker = thread::spawn(move || {
        let mut reasm = Reassembler::new(cfg.reassembly_deadline);
        let mut stats = CloudStats::default();
        loop {
            let msg = match in_rx.recv_timeout(POLL_INTERVAL) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    reasm.expire(Instant::now());
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let (header, body) = match CycleHeader::parse(&msg.datagram) {
                Ok(v) => v,
                Err(_) => {
                    stats.malformed += 1;
                    continue;
                }
            };
            let Some(cycle) = reasm.push(header, body, msg.at) else {
                continue;
            };
            stats.delivered_ids.push(cycle.cycle_id);
            match cloud_response(&cfg, &cycle) {
                Ok(resp) => {
                    if reply_socket.send_to(&resp, msg.from).is_ok() {
                        stats.cpms_sent += 1;
                    }
                }
                Err(_) => stats.processing_errors += 1,
            }
        }
        reasm.expire(Instant::now() + cfg.reassembly_deadline * 2);
        stats.reassembly = reasm.stats().clone();
        stats
    });

    Ok(CloudHandle {
        local_addr,
        stop: stop_tx,
        receiver,
        worker,
    })
}

#[derive(Debug, Clone)]
pub struct VehicleConfig {
    pub cloud_addr: SocketAddr,
    pub bind: SocketAddr,
    pub shaper: ShaperConfig,
    pub cycles: usize,
    /// Input tensor dimensions `(C, H, W)`.
    pub dims: (usize, usize, usize),
    pub split: u8,
    pub quant: QuantLevel,
    pub clip: ClipSpec,
    pub seed: u64,
    /// How long to wait for the CPM of a cycle before counting it lost.
    pub response_timeout: Duration,
    /// Minimum time between cycle starts.
    pub period: Option<Duration>,
}

impl VehicleConfig {
    pub fn new(cloud_addr: SocketAddr, shaper: ShaperConfig) -> Self {
        Self {
            cloud_addr,
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            shaper,
            cycles: 10,
            dims: (16, 64, 64),
            split: 2,
            quant: QuantLevel::Fp16,
            clip: ClipSpec::default(),
            seed: 0,
            response_timeout: Duration::from_millis(1000),
            period: None,
        }
    }
}

/// Measured phases of one perception cycle, vehicle clock only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleTiming {
    pub cycle_id: u32,
    pub payload_bytes: usize,
    pub t_local_ms: f64,
    pub t_upl_ms: f64,
    /// Reported by the cloud as a duration.
    pub t_cloud_ms: f64,
    /// Remainder of the total after local, uplink and cloud time.
    pub t_dwn_ms: f64,
    pub t_total_ms: f64,
}

pub const CYCLE_TIMING_CSV_HEADER: &str =
    "cycle_id,payload_bytes,t_local_ms,t_upl_ms,t_cloud_ms,t_dwn_ms,t_total_ms";

impl CycleTiming {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3}",
            self.cycle_id,
            self.payload_bytes,
            self.t_local_ms,
            self.t_upl_ms,
            self.t_cloud_ms,
            self.t_dwn_ms,
            self.t_total_ms
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleSummary {
    pub timings: Vec<CycleTiming>,
    /// Cycles whose CPM did not arrive in time.
    pub lost: Vec<u32>,
}

impl VehicleSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CYCLE_TIMING_CSV_HEADER);
        out.push('\n');
        for t in &self.timings {
            let _ = writeln!(out, "{}", t.csv_row());
        }
        out
    }
}

struct Response {
    cycle_id: u32,
    cloud_us: u32,
    at: Instant,
}

/// Runs `cfg.cycles` perception cycles against a cloud endpoint.
pub fn vehicle_run(cfg: &VehicleConfig) -> Result<VehicleSummary> {
    let socket = UdpSocket::bind(cfg.bind)?;
    socket.connect(cfg.cloud_addr)?;
    socket.set_read_timeout(Some(POLL_INTERVAL))?;
    let rx_socket = socket.try_clone()?;
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let (resp_tx, resp_rx) = mpsc::channel::<Response>();

    let receiver = thread::spawn(move || {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        loop {
            match stop_rx.try_recv() {
                Ok(()) | Err(TryRecvError::Disconnected) => break,
                Err(TryRecvError::Empty) => {}
            }
            let n = match rx_socket.recv(&mut buf) {
                Ok(n) => n,
                Err(_) => continue,
            };
            let at = Instant::now();
            let Ok((h, body)) = CycleHeader::parse(&buf[..n]) else {
                continue;
            };
            if body.len() < 4 || crate::cpm::decode_cpm(&body[4..]).is_err() {
                continue;
            }
            let cloud_us = u32::from_le_bytes(body[..4].try_into().unwrap());
            if resp_tx
                .send(Response {
                    cycle_id: h.cycle_id,
                    cloud_us,
                    at,
                })
                .is_err()
            {
                break;
            }
        }
    });

    let result = run_cycles(cfg, &socket, &resp_rx);
    let _ = stop_tx.send(());
    let _ = receiver.join();
    result
}

fn run_cycles(cfg: &VehicleConfig, socket: &UdpSocket, responses: &Receiver<Response>) -> Result<VehicleSummary> {
    let mut shaper = Shaper::new(cfg.shaper)?;
    let mut summary = VehicleSummary::default();
    let (c, h, w) = cfg.dims;
    let quant_code = cfg.quant.bits_per_element() as u8;
    for i in 0..cfg.cycles {
        let cycle_id = i as u32;
        let frame = FeatureTensor::synthetic(c, h, w, cfg.seed.wrapping_add(i as u64))?;
        let t0 = Instant::now();
        let payload = run_local_stage(&frame, cfg.split, cfg.clip, cfg.quant)?.to_bytes();
        let t1 = Instant::now();
        let mut sink = socket;
        shaper.send(&mut sink, cycle_id, cfg.split, quant_code, &payload)?;
        let t2 = Instant::now();

        let deadline = t2 + cfg.response_timeout;
        let mut got = None;
        while got.is_none() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            match responses.recv_timeout(left) {
                Ok(r) if r.cycle_id == cycle_id => got = Some(r),
                Ok(_) => {}
                Err(_) => break,
            }
        }
        match got {
            Some(r) => {
                let since_t0 = |t: Instant| t.duration_since(t0).as_secs_f64() * 1e3;
                let cloud_ms = f64::from(r.cloud_us) / 1e3;
                let total_ms = since_t0(r.at);
                let local_ms = since_t0(t1);
                // On a busy host the reply can land before this thread reads
                // the clock after its last send. The upload cannot have ended
                // after the cloud started working, so clamp it there.
                let upl_end_ms = since_t0(t2).min(total_ms - cloud_ms).max(local_ms);
                let cloud_ms = cloud_ms.min(total_ms - upl_end_ms);
                summary.timings.push(CycleTiming {
                    cycle_id,
                    payload_bytes: payload.len(),
                    t_local_ms: local_ms,
                    t_upl_ms: upl_end_ms - local_ms,
                    t_cloud_ms: cloud_ms,
                    t_dwn_ms: (total_ms - upl_end_ms - cloud_ms).max(0.0),
                    t_total_ms: total_ms,
                });
            }
            None => summary.lost.push(cycle_id),
        }
        if let Some(period) = cfg.period {
            let spent = t0.elapsed();
            if spent < period {
                thread::sleep(period - spent);
            }
        }
    }
    Ok(summary)
}

/// Cloud and vehicle on loopback in one process.
pub fn run_loopback_demo(
    vehicle: &VehicleConfig,
    cloud: CloudConfig,
) -> Result<(VehicleSummary, CloudStats)> {
    let handle = cloud_spawn(cloud)?;
    let mut vcfg = vehicle.clone();
    vcfg.cloud_addr = handle.local_addr();
    let summary = vehicle_run(&vcfg);
    let stats = handle.shutdown()?;
    Ok((summary?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_errors() {
        let h = CycleHeader {
            cycle_id: 77,
            split: 3,
            quant: 16,
            frag_index: 2,
            frag_count: 5,
        };
        let mut buf = Vec::new();
        h.write(&mut buf);
        assert_eq!(buf.len(), CYCLE_HEADER_LEN);
        buf.extend_from_slice(b"abc");
        let (back, body) = CycleHeader::parse(&buf).unwrap();
        assert_eq!(back, h);
        assert_eq!(body, b"abc");
        assert!(matches!(CycleHeader::parse(&buf[..5]), Err(Error::Truncated { .. })));
        let mut bad = buf.clone();
        bad[0] = 0;
        assert!(matches!(CycleHeader::parse(&bad), Err(Error::BadMagic { .. })));
        let mut out_of_range = buf;
        out_of_range[10] = 9;
        assert!(CycleHeader::parse(&out_of_range).is_err());
    }

    #[test]
    fn shaper_config_checks() {
        assert!(ShaperConfig::new(0.0, 1400, 1400).is_err());
        assert!(ShaperConfig::new(10.0, 1000, 1400).is_err());
        assert!(ShaperConfig::new(10.0, 1400, 10).is_err());
        assert!(ShaperConfig::with_rate(10.0).is_ok());
    }

    #[test]
    fn fragmentation_respects_mtu() {
        let cfg = ShaperConfig::new(1000.0, 1 << 20, 200).unwrap();
        let payload: Vec<u8> = (0..1000u32).map(|i| i as u8).collect();
        let mut sink: Vec<Vec<u8>> = Vec::new();
        let report = shaped_send(&mut sink, &payload, cfg).unwrap();
        assert_eq!(report.datagrams, 1000usize.div_ceil(186));
        assert!(sink.iter().all(|d| d.len() <= 200));
        let mut r = Reassembler::new(Duration::from_secs(1));
        let now = Instant::now();
        let mut done = None;
        for d in sink.iter().rev() {
            let (h, body) = CycleHeader::parse(d).unwrap();
            if let Some(c) = r.push(h, body, now) {
                done = Some(c);
            }
        }
        assert_eq!(done.unwrap().payload, payload);
    }

    #[test]
    fn small_payload_is_not_paced() {
        let cfg = ShaperConfig::new(0.1, 64 * 1024, 1400).unwrap();
        let mut sink: Vec<Vec<u8>> = Vec::new();
        let report = shaped_send(&mut sink, &[7u8; 60_000], cfg).unwrap();
        // 60 kB at 0.1 Mbps would take 4.8 s if paced
        assert!(report.elapsed < Duration::from_millis(50), "{:?}", report.elapsed);
    }

    #[test]
    fn pacing_lower_bound() {
        // 50 kB at 2 Mbps: at least (50000 - burst) * 8 / 2e6 s
        let cfg = ShaperConfig::with_rate(2.0).unwrap();
        let mut sink: Vec<Vec<u8>> = Vec::new();
        let report = shaped_send(&mut sink, &[1u8; 50_000], cfg).unwrap();
        let burst = cfg.burst_bytes as f64;
        assert!(report.elapsed_ms() >= (50_000.0 - burst) * 8.0 / 2e6 * 1e3);
    }

    #[test]
    fn reassembly_deadline_and_duplicates() {
        let mut r = Reassembler::new(Duration::from_millis(100));
        let t0 = Instant::now();
        let h = |idx, id| CycleHeader {
            cycle_id: id,
            split: 1,
            quant: 8,
            frag_index: idx,
            frag_count: 2,
        };
        assert!(r.push(h(0, 1), b"a", t0).is_none());
        assert!(r.push(h(0, 1), b"a", t0).is_none());
        assert_eq!(r.stats().duplicate_fragments, 1);
        // second fragment arrives after the deadline
        assert!(r.push(h(1, 1), b"b", t0 + Duration::from_millis(150)).is_none());
        assert_eq!(r.stats().dropped, 1);
        assert_eq!(r.stats().late_fragments, 1);

        assert!(r.push(h(1, 2), b"d", t0).is_none());
        let c = r.push(h(0, 2), b"c", t0).unwrap();
        assert_eq!(c.payload, b"cd");
        assert!(r.push(h(0, 2), b"c", t0).is_none());
        assert_eq!(r.stats().delivered, 1);
    }
}
