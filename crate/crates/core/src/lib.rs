//! Bandwidth-adaptive hybrid edge/cloud offloading for split neural-network
//! perception.
//!
//! The crate is organised around the profiled configuration space of a split
//! backbone (split layer x feature quantization):
//!
//! - [`profile`]: the profiled `(split, quant)` table, its CSV form and
//!   consistency checks.
//! - [`latency`]: the four-phase end-to-end latency model and the latency bound.
//! - [`optimizer`]: per-cycle parameter selection (highest accuracy within the
//!   bound, minimum latency otherwise) plus a brute-force oracle.
//! - [`metrics`]: the nuScenes detection score and accuracy gain.
//! - [`pipeline`]: the onboard clip/quantize/compress data path and its cloud-side
//!   inverse over a deterministic stub backbone.
//! - [`sim`]: bandwidth-trace replay of dynamic and static offloading policies.
//! - [`cpm`]: a compact binary codec for collective perception messages.
//! - [`net`]: a UDP vehicle/cloud harness with token-bucket shaping.

pub mod cpm;
pub mod error;
pub mod latency;
pub mod metrics;
pub mod net;
pub mod optimizer;
pub mod pipeline;
pub mod profile;
pub mod sim;

pub use error::{Error, Result};
pub use latency::{estimate_latency, within_bound, DownlinkPolicy, LatencyBreakdown};
pub use optimizer::{opt_par, oracle_select, Selection};
pub use profile::{builtin_paper_profile, ConfigProfile, ProfileTable, QuantLevel, SplitConfig};
