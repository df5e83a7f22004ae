//! Python module `adaptive_offload`.

use std::fs::File;
use std::io::BufReader;
use std::time::Duration;

use ::adaptive_offload as core;
use core::cpm::{decode_cpm, encode_cpm, random_message};
use core::net::{run_loopback_demo, CloudConfig, ShaperConfig, VehicleConfig};
use core::pipeline::{ClipSpec, CompressedPayload, FeatureTensor};
use core::sim::{BandwidthTrace, SimParams, SimReport};
use core::{DownlinkPolicy, Error, ProfileTable, QuantLevel, SplitConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn quant(s: &str) -> PyResult<QuantLevel> {
    s.parse().map_err(to_py)
}

fn config(split: u8, q: &str) -> PyResult<SplitConfig> {
    SplitConfig::new(split, quant(q)?).map_err(to_py)
}

fn downlink(dwn_ms: Option<f64>) -> DownlinkPolicy {
    dwn_ms.map_or(DownlinkPolicy::ProfiledC2V, DownlinkPolicy::FixedMs)
}

fn trace(rates: Vec<f64>) -> PyResult<BandwidthTrace> {
    BandwidthTrace::from_rates(&rates, "python").map_err(to_py)
}

/// Profiled `(split, quant)` configuration table.
#[pyclass(name = "Profile", module = "adaptive_offload", frozen)]
struct PyProfile {
    table: ProfileTable,
}

#[pymethods]
impl PyProfile {
    /// The built-in 15-row table.
    #[staticmethod]
    fn builtin() -> Self {
        Self {
            table: core::builtin_paper_profile(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let table = core::profile::load_profile(BufReader::new(f)).map_err(to_py)?;
        Ok(Self { table })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let table = core::profile::load_profile(text.as_bytes()).map_err(to_py)?;
        Ok(Self { table })
    }

    fn to_csv(&self) -> String {
        self.table.to_csv()
    }

    fn __len__(&self) -> usize {
        self.table.len()
    }

    /// Rows as dictionaries, in table order.
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.table
            .rows()
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("split", r.config.split_layer)?;
                d.set_item("quant", r.config.quant.as_str())?;
                d.set_item("backbone_ms", r.t_backbone_ms)?;
                d.set_item("compress_ms", r.t_compress_ms)?;
                d.set_item("v2c_ref_ms", r.t_v2c_ref_ms)?;
                d.set_item("c2v_ms", r.t_c2v_ms)?;
                d.set_item("decompress_ms", r.t_decompress_ms)?;
                d.set_item("head_ms", r.t_head_ms)?;
                d.set_item("end_to_end_ms", r.end_to_end_ref_ms)?;
                d.set_item("nds", r.nds)?;
                d.set_item("bw_mbps", r.bw_usage_mbps)?;
                Ok(d)
            })
            .collect()
    }

    /// `[(split, quant, residual_ms, pass), ...]`.
    fn validate(&self, tol_ms: f64) -> PyResult<Vec<(u8, &'static str, f64, bool)>> {
        let report = core::profile::validate_profile(&self.table, tol_ms).map_err(to_py)?;
        Ok(report
            .rows
            .iter()
            .map(|r| (r.config.split_layer, r.config.quant.as_str(), r.residual_ms, r.pass))
            .collect())
    }

    /// Four-phase latency estimate for one row.
    #[pyo3(signature = (split, quant, bw_mbps, dwn_ms=None))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        split: u8,
        quant: &str,
        bw_mbps: f64,
        dwn_ms: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = config(split, quant)?;
        let row = self
            .table
            .get(cfg)
            .ok_or_else(|| PyValueError::new_err(format!("{cfg} is not in the profile")))?;
        let b = core::estimate_latency(row, bw_mbps, downlink(dwn_ms)).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("local_ms", b.lat_local_ms)?;
        d.set_item("upl_ms", b.lat_upl_ms)?;
        d.set_item("cloud_ms", b.lat_cloud_ms)?;
        d.set_item("dwn_ms", b.lat_dwn_ms)?;
        d.set_item("total_ms", b.total_ms)?;
        Ok(d)
    }

    /// Configuration choice for one uplink bandwidth and latency bound.
    #[pyo3(signature = (bw_mbps, lat_max_ms, dwn_ms=None))]
    fn optimize(&self, bw_mbps: f64, lat_max_ms: f64, dwn_ms: Option<f64>) -> PyResult<PySelection> {
        let sorted = core::profile::sorted_by_nds(&self.table);
        let s = core::opt_par(&sorted, bw_mbps, downlink(dwn_ms), lat_max_ms).map_err(to_py)?;
        Ok(PySelection {
            split: s.config.split_layer,
            quant: s.config.quant.as_str(),
            nds: s.nds,
            total_ms: s.breakdown.total_ms,
            feasible: s.feasible,
        })
    }

    /// Replays an uplink trace (Mbps, one sample per second).
    #[pyo3(signature = (rates, budget=1.0, lat_max_ms=100.0, fixed=None))]
    fn replay(
        &self,
        rates: Vec<f64>,
        budget: f64,
        lat_max_ms: f64,
        fixed: Option<(u8, String)>,
    ) -> PyResult<PyReport> {
        let t = trace(rates)?;
        let params = SimParams::new(lat_max_ms, budget).map_err(to_py)?;
        let report = match fixed {
            Some((split, q)) => {
                let cfg = config(split, &q)?;
                let row = self
                    .table
                    .get(cfg)
                    .ok_or_else(|| PyValueError::new_err(format!("{cfg} is not in the profile")))?;
                core::sim::replay_static(&t, row, &params)
            }
            None => core::sim::replay_dynamic(&t, &self.table, &params),
        }
        .map_err(to_py)?;
        Ok(PyReport { report })
    }

    /// Gain surface as `[(budget, lat_max_ms, gain, baseline_split, baseline_quant), ...]`.
    fn sweep(
        &self,
        rates: Vec<f64>,
        budgets: Vec<f64>,
        lat_maxes: Vec<f64>,
    ) -> PyResult<Vec<(f64, f64, f64, u8, &'static str)>> {
        let t = trace(rates)?;
        let s = core::sim::sweep(&t, &self.table, &budgets, &lat_maxes, DownlinkPolicy::ProfiledC2V)
            .map_err(to_py)?;
        Ok(s.iter()
            .map(|c| {
                (
                    c.budget_fraction,
                    c.lat_max_ms,
                    c.gain,
                    c.baseline.split_layer,
                    c.baseline.quant.as_str(),
                )
            })
            .collect())
    }
}

#[pyclass(name = "Selection", module = "adaptive_offload", frozen)]
struct PySelection {
    #[pyo3(get)]
    split: u8,
    #[pyo3(get)]
    quant: &'static str,
    #[pyo3(get)]
    nds: f64,
    #[pyo3(get)]
    total_ms: f64,
    #[pyo3(get)]
    feasible: bool,
}

#[pymethods]
impl PySelection {
    fn __repr__(&self) -> String {
        format!(
            "split={} quant={} total={:.1}ms feasible={}",
            self.split, self.quant, self.total_ms, self.feasible
        )
    }
}

#[pyclass(name = "Report", module = "adaptive_offload", frozen)]
struct PyReport {
    report: SimReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn cycles(&self) -> usize {
        self.report.cycles()
    }

    #[getter]
    fn violations(&self) -> usize {
        self.report.violations
    }

    #[getter]
    fn mean_nds(&self) -> f64 {
        self.report.mean_nds
    }

    #[getter]
    fn mean_total_ms(&self) -> f64 {
        self.report.mean_total_ms
    }

    /// `{(split, quant): fraction}`.
    fn usage(&self) -> Vec<((u8, &'static str), f64)> {
        self.report
            .usage
            .iter()
            .map(|u| ((u.config.split_layer, u.config.quant.as_str()), u.fraction))
            .collect()
    }

    fn to_text(&self) -> String {
        self.report.to_text()
    }

    fn cycles_csv(&self) -> String {
        self.report.cycles_csv()
    }
}

/// Dense `C x H x W` float32 tensor.
#[pyclass(name = "Tensor", module = "adaptive_offload", frozen)]
struct PyTensor {
    inner: FeatureTensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> PyResult<Self> {
        let inner = FeatureTensor::new(channels, height, width, values).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Heavy-tailed random tensor.
    #[staticmethod]
    fn synthetic(channels: usize, height: usize, width: usize, seed: u64) -> PyResult<Self> {
        let inner = FeatureTensor::synthetic(channels, height, width, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    fn percentile(&self, p: f64) -> PyResult<f64> {
        core::pipeline::percentile(&self.inner, p).map_err(to_py)
    }

    fn clip(&self, lo: f32, hi: f32) -> PyResult<Self> {
        let inner = core::pipeline::clip(&self.inner, lo, hi).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn quantize(&self, quant: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::pipeline::quantize(&self.inner, self::quant(quant)?),
        })
    }

    /// Onboard stage: stub backbone to `split`, clip, quantize, DEFLATE.
    /// Returns the encoded payload.
    #[pyo3(signature = (split, quant, low_percentile=10.0, high_percentile=90.0))]
    fn encode<'py>(
        &self,
        py: Python<'py>,
        split: u8,
        quant: &str,
        low_percentile: f64,
        high_percentile: f64,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let spec = ClipSpec::new(low_percentile, high_percentile).map_err(to_py)?;
        let q = self::quant(quant)?;
        let p = core::pipeline::run_local_stage(&self.inner, split, spec, q).map_err(to_py)?;
        Ok(PyBytes::new(py, &p.to_bytes()))
    }
}

/// Cloud stage on an encoded payload.
#[pyfunction]
#[pyo3(signature = (payload, n_layers=5))]
fn decode_payload(payload: &[u8], n_layers: usize) -> PyResult<PyTensor> {
    let p = CompressedPayload::from_bytes(payload).map_err(to_py)?;
    let inner = core::pipeline::run_cloud_stage(&p, n_layers).map_err(to_py)?;
    Ok(PyTensor { inner })
}

#[pyfunction]
fn compress<'py>(py: Python<'py>, data: &[u8]) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &core::pipeline::compress(data))
}

#[pyfunction]
fn decompress<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let out = core::pipeline::decompress(data).map_err(to_py)?;
    Ok(PyBytes::new(py, &out))
}

/// Detection score from mAP and the five TP error terms.
#[pyfunction]
fn nds(map: f64, mtp: [f64; 5]) -> PyResult<f64> {
    let s = core::metrics::DetectionScores::new(map, mtp).map_err(to_py)?;
    Ok(core::metrics::nds(&s))
}

/// Floor-truncated normal uplink trace, returned as Mbps samples.
#[pyfunction]
fn synth_trace(n: usize, mean_mbps: f64, std_mbps: f64, seed: u64) -> PyResult<Vec<f64>> {
    let t = core::sim::synth_trace(n, mean_mbps, std_mbps, seed).map_err(to_py)?;
    Ok(t.samples().iter().map(|s| s.uplink_mbps).collect())
}

/// Randomized CPM encode/decode round trips; returns how many matched.
#[pyfunction]
#[pyo3(signature = (n, seed=0, max_objects=64))]
fn cpm_roundtrips(n: usize, seed: u64, max_objects: usize) -> PyResult<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for _ in 0..n {
        let m = random_message(&mut rng, max_objects);
        let bytes = encode_cpm(&m).map_err(to_py)?;
        if decode_cpm(&bytes).map_err(to_py)? == m {
            ok += 1;
        }
    }
    Ok(ok)
}

/// Loopback vehicle/cloud run; returns the per-cycle timing CSV.
#[pyfunction]
#[pyo3(signature = (cycles=20, rate_mbps=100.0, split=2, quant="FP16", seed=0))]
fn loopback_demo(
    py: Python<'_>,
    cycles: usize,
    rate_mbps: f64,
    split: u8,
    quant: &str,
    seed: u64,
) -> PyResult<String> {
    let shaper = ShaperConfig::with_rate(rate_mbps).map_err(to_py)?;
    let cfg = VehicleConfig {
        cycles,
        split,
        quant: self::quant(quant)?,
        seed,
        response_timeout: Duration::from_millis(1000),
        ..VehicleConfig::new(([127, 0, 0, 1], 0).into(), shaper)
    };
    let (summary, _) = py
        .detach(|| run_loopback_demo(&cfg, CloudConfig::default()))
        .map_err(to_py)?;
    Ok(summary.to_csv())
}

#[pymodule(name = "adaptive_offload")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProfile>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(decode_payload, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(decompress, m)?)?;
    m.add_function(wrap_pyfunction!(nds, m)?)?;
    m.add_function(wrap_pyfunction!(synth_trace, m)?)?;
    m.add_function(wrap_pyfunction!(cpm_roundtrips, m)?)?;
    m.add_function(wrap_pyfunction!(loopback_demo, m)?)?;
    Ok(())
}
