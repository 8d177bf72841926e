//! Closed-form communication cost models.
//!
//! Every quantity is in seconds or bytes. The three base models are:
//!
//! * postal: `T = alpha + beta * s`
//! * max-rate: `T = alpha + s * max(beta, ppn * t_inject)`
//! * multi-message: `T = n * alpha + n * s * max(beta, ppn * t_inject)`
//!
//! The network injection limit is stored as an inverse rate (`t_inject`, seconds per byte),
//! so it compares directly against the per-byte cost `beta` of a link.

mod paths;

pub use paths::{gpudirect_path_time, three_step_time, Distribution};
pub(crate) use paths::{staged_cost, MessageGroup, StagedPlan};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing model values or composing paths.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} must be finite and non-negative, got {value}")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("{name} must be finite and positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("protocol thresholds must satisfy 0 < short_max_bytes < eager_max_bytes (got {short_max} and {eager_max})")]
    InvalidThresholds { short_max: u64, eager_max: u64 },
    #[error("dedup_fraction must lie in [0, 1], got {0}")]
    InvalidDedup(f64),
    #[error("ppn must be at least 1")]
    ZeroPpn,
    #[error("machine is missing {0}")]
    MissingEntry(String),
    #[error("{active} active cores per node exceed the {available} cores available")]
    PpnExceedsCores { active: u64, available: u64 },
}

fn check_non_negative(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NegativeParameter { name, value })
    }
}

/// Latency / per-byte cost pair for one link class and protocol tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPostal", deny_unknown_fields)]
pub struct PostalParams {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPostal {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawPostal> for PostalParams {
    type Error = ModelError;

    fn try_from(raw: RawPostal) -> Result<Self, Self::Error> {
        PostalParams::new(raw.alpha, raw.beta)
    }
}

impl PostalParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        Ok(PostalParams {
            alpha: check_non_negative("alpha", alpha)?,
            beta: check_non_negative("beta", beta)?,
        })
    }

    /// Message start-up latency, seconds.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Per-byte transport cost, seconds per byte.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Multiplies both parameters by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        PostalParams::new(self.alpha * factor, self.beta * factor)
    }
}

/// Protocol tier of a point-to-point message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Short,
    Eager,
    Rendezvous,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Short, Protocol::Eager, Protocol::Rendezvous];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Short => "short",
            Protocol::Eager => "eager",
            Protocol::Rendezvous => "rendezvous",
        }
    }
}

/// Postal parameters for the short, eager and rendezvous tiers plus the size thresholds
/// separating them. Thresholds are inclusive upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProtocolTable", deny_unknown_fields)]
pub struct ProtocolTable {
    short_max_bytes: u64,
    eager_max_bytes: u64,
    short: PostalParams,
    eager: PostalParams,
    rendezvous: PostalParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocolTable {
    short_max_bytes: u64,
    eager_max_bytes: u64,
    short: PostalParams,
    eager: PostalParams,
    rendezvous: PostalParams,
}

impl TryFrom<RawProtocolTable> for ProtocolTable {
    type Error = ModelError;

    fn try_from(raw: RawProtocolTable) -> Result<Self, Self::Error> {
        ProtocolTable::new(
            raw.short,
            raw.eager,
            raw.rendezvous,
            raw.short_max_bytes,
            raw.eager_max_bytes,
        )
    }
}

impl ProtocolTable {
    pub const DEFAULT_SHORT_MAX_BYTES: u64 = 512;
    pub const DEFAULT_EAGER_MAX_BYTES: u64 = 65536;

    pub fn new(
        short: PostalParams,
        eager: PostalParams,
        rendezvous: PostalParams,
        short_max_bytes: u64,
        eager_max_bytes: u64,
    ) -> Result<Self, ModelError> {
        if short_max_bytes == 0 || short_max_bytes >= eager_max_bytes {
            return Err(ModelError::InvalidThresholds {
                short_max: short_max_bytes,
                eager_max: eager_max_bytes,
            });
        }
        Ok(ProtocolTable {
            short_max_bytes,
            eager_max_bytes,
            short,
            eager,
            rendezvous,
        })
    }

    /// Three tiers with the default 512 B / 64 KiB thresholds.
    pub fn with_default_thresholds(
        short: PostalParams,
        eager: PostalParams,
        rendezvous: PostalParams,
    ) -> Self {
        ProtocolTable {
            short_max_bytes: Self::DEFAULT_SHORT_MAX_BYTES,
            eager_max_bytes: Self::DEFAULT_EAGER_MAX_BYTES,
            short,
            eager,
            rendezvous,
        }
    }

    /// A degenerate table using the same parameters for every tier.
    pub fn uniform(params: PostalParams) -> Self {
        Self::with_default_thresholds(params, params, params)
    }

    pub fn short_max_bytes(&self) -> u64 {
        self.short_max_bytes
    }

    pub fn eager_max_bytes(&self) -> u64 {
        self.eager_max_bytes
    }

    pub fn tier(&self, protocol: Protocol) -> &PostalParams {
        match protocol {
            Protocol::Short => &self.short,
            Protocol::Eager => &self.eager,
            Protocol::Rendezvous => &self.rendezvous,
        }
    }

    /// Tier used for a message of `s` bytes.
    pub fn protocol_for(&self, s: f64) -> Protocol {
        if s <= self.short_max_bytes as f64 {
            Protocol::Short
        } else if s <= self.eager_max_bytes as f64 {
            Protocol::Eager
        } else {
            Protocol::Rendezvous
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Ok(ProtocolTable {
            short: self.short.scaled(factor)?,
            eager: self.eager.scaled(factor)?,
            rendezvous: self.rendezvous.scaled(factor)?,
            ..*self
        })
    }
}

/// Relative placement of two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalityClass {
    OnSocket,
    OnNode,
    OffNode,
}

impl LocalityClass {
    pub const ALL: [LocalityClass; 3] = [
        LocalityClass::OnSocket,
        LocalityClass::OnNode,
        LocalityClass::OffNode,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LocalityClass::OnSocket => "on-socket",
            LocalityClass::OnNode => "on-node",
            LocalityClass::OffNode => "off-node",
        }
    }
}

impl fmt::Display for LocalityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocalityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "on-socket" => Ok(LocalityClass::OnSocket),
            "on-node" => Ok(LocalityClass::OnNode),
            "off-node" => Ok(LocalityClass::OffNode),
            other => Err(format!(
                "unknown locality '{other}' (expected on-socket, on-node or off-node)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopyDirection {
    HostToDevice,
    DeviceToHost,
}

/// Whether a host-device copy stays within the GPU's socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SocketLocality {
    OnSocket,
    OffSocket,
}

/// Postal parameters of one `cudaMemcpyAsync` flavour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemcpyParams {
    pub direction: CopyDirection,
    pub locality: SocketLocality,
    pub params: PostalParams,
}

/// Traffic kind an injection limit applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficKind {
    InterCpu,
    InterGpu,
}

/// Network injection limit of one node, stored as seconds per byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInjection", deny_unknown_fields)]
pub struct InjectionParams {
    t_inject: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInjection {
    t_inject: f64,
}

impl TryFrom<RawInjection> for InjectionParams {
    type Error = ModelError;

    fn try_from(raw: RawInjection) -> Result<Self, Self::Error> {
        InjectionParams::new(raw.t_inject)
    }
}

impl InjectionParams {
    pub fn new(t_inject: f64) -> Result<Self, ModelError> {
        if t_inject.is_finite() && t_inject > 0.0 {
            Ok(InjectionParams { t_inject })
        } else {
            Err(ModelError::NonPositiveParameter {
                name: "t_inject",
                value: t_inject,
            })
        }
    }

    pub fn t_inject(&self) -> f64 {
        self.t_inject
    }
}

/// A batch of identical messages sent by one process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSpec {
    n_messages: u64,
    bytes_per_message: f64,
    ppn: u32,
    dedup_fraction: f64,
}

impl TransferSpec {
    pub fn new(
        n_messages: u64,
        bytes_per_message: f64,
        ppn: u32,
        dedup_fraction: f64,
    ) -> Result<Self, ModelError> {
        check_non_negative("bytes_per_message", bytes_per_message)?;
        if ppn == 0 {
            return Err(ModelError::ZeroPpn);
        }
        if !(0.0..=1.0).contains(&dedup_fraction) {
            return Err(ModelError::InvalidDedup(dedup_fraction));
        }
        Ok(TransferSpec {
            n_messages,
            bytes_per_message,
            ppn,
            dedup_fraction,
        })
    }

    /// One message of `bytes` from a single process, no duplication.
    pub fn single(bytes: f64) -> Result<Self, ModelError> {
        Self::new(1, bytes, 1, 0.0)
    }

    pub fn n_messages(&self) -> u64 {
        self.n_messages
    }

    pub fn bytes_per_message(&self) -> f64 {
        self.bytes_per_message
    }

    pub fn ppn(&self) -> u32 {
        self.ppn
    }

    pub fn dedup_fraction(&self) -> f64 {
        self.dedup_fraction
    }
}

/// Predicted seconds per phase; `total` is always the sum of the phases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostBreakdown {
    phases: Vec<(String, f64)>,
    total: f64,
}

impl CostBreakdown {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_phases<I, S>(phases: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut breakdown = Self::new();
        for (label, seconds) in phases {
            breakdown.push(label, seconds);
        }
        breakdown
    }

    pub fn push(&mut self, label: impl Into<String>, seconds: f64) {
        debug_assert!(seconds >= 0.0, "negative phase time {seconds}");
        self.phases.push((label.into(), seconds));
        self.total = self.phases.iter().map(|(_, s)| s).sum();
    }

    pub fn extend(&mut self, other: CostBreakdown) {
        for (label, seconds) in other.phases {
            self.push(label, seconds);
        }
    }

    pub fn phases(&self) -> &[(String, f64)] {
        &self.phases
    }

    pub fn phase(&self, label: &str) -> Option<f64> {
        self.phases
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, s)| s)
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Postal model: `alpha + beta * s`.
pub fn postal_time(params: &PostalParams, s: f64) -> f64 {
    params.alpha + params.beta * s
}

/// Tier parameters for a message of `s` bytes.
pub fn select_protocol(table: &ProtocolTable, s: f64) -> PostalParams {
    *table.tier(table.protocol_for(s))
}

/// Cheapest tier cost for `s` bytes, regardless of the configured thresholds.
pub fn best_protocol_time(table: &ProtocolTable, s: f64) -> f64 {
    Protocol::ALL
        .iter()
        .map(|&p| postal_time(table.tier(p), s))
        .fold(f64::INFINITY, f64::min)
}

/// Max-rate model for `ppn` processes each sending `s` bytes.
pub fn maxrate_time(params: &PostalParams, inj: &InjectionParams, ppn: u32, s: f64) -> f64 {
    params.alpha + s * per_byte_cost(params, Some(inj), ppn)
}

/// Max-rate model applied to `n` messages of `s` bytes from each process.
pub fn multi_message_time(
    params: &PostalParams,
    inj: &InjectionParams,
    ppn: u32,
    n: u64,
    s: f64,
) -> f64 {
    batch_time(params, Some(inj), ppn, n, s)
}

/// Host-device copy of `s` bytes.
pub fn memcpy_time(mp: &MemcpyParams, s: f64) -> f64 {
    postal_time(&mp.params, s)
}

/// Bytes crossing the host-device boundary, interpolated between no duplication (`n * s`)
/// and full duplication (`s`).
pub fn staged_bytes(spec: &TransferSpec) -> f64 {
    if spec.n_messages == 0 {
        return 0.0;
    }
    let n = spec.n_messages as f64;
    let s = spec.bytes_per_message;
    n * s - spec.dedup_fraction * (n - 1.0) * s
}

fn per_byte_cost(params: &PostalParams, inj: Option<&InjectionParams>, ppn: u32) -> f64 {
    match inj {
        Some(inj) => params.beta.max(ppn as f64 * inj.t_inject),
        None => params.beta,
    }
}

/// `n` messages of `s` bytes; `inj = None` means the path is not injection limited.
pub(crate) fn batch_time(
    params: &PostalParams,
    inj: Option<&InjectionParams>,
    ppn: u32,
    n: u64,
    s: f64,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    n * params.alpha + (n * s) * per_byte_cost(params, inj, ppn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    fn p(alpha: f64, beta: f64) -> PostalParams {
        PostalParams::new(alpha, beta).unwrap()
    }

    fn off_node_cpu() -> ProtocolTable {
        ProtocolTable::with_default_thresholds(
            p(1.38e-6, 3.82e-10),
            p(1.85e-6, 3.93e-10),
            p(6.56e-6, 8.51e-11),
        )
    }

    #[test]
    fn postal_examples() {
        let off = p(4.96e-6, 1.69e-10);
        assert_eq!(postal_time(&off, 0.0), 4.96e-6);
        assert!(close(postal_time(&off, 1e6), 1.7396e-4, 1e-12));
        assert!(close(
            postal_time(&p(1.68e-5, 1.86e-11), 8.0),
            1.68001488e-5,
            1e-12
        ));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PostalParams::new(-1.0, 0.0).is_err());
        assert!(PostalParams::new(0.0, f64::NAN).is_err());
        assert!(PostalParams::new(f64::INFINITY, 0.0).is_err());
        assert!(InjectionParams::new(0.0).is_err());
        let x = p(1.0, 1.0);
        assert!(ProtocolTable::new(x, x, x, 0, 10).is_err());
        assert!(ProtocolTable::new(x, x, x, 10, 10).is_err());
        assert!(TransferSpec::new(1, 1.0, 0, 0.0).is_err());
        assert!(TransferSpec::new(1, 1.0, 1, 1.5).is_err());
        assert!(TransferSpec::new(1, -1.0, 1, 0.0).is_err());
    }

    #[test]
    fn protocol_boundaries_are_inclusive() {
        let t = off_node_cpu();
        assert_eq!(select_protocol(&t, 0.0), *t.tier(Protocol::Short));
        assert_eq!(select_protocol(&t, 512.0), *t.tier(Protocol::Short));
        assert_eq!(select_protocol(&t, 513.0), *t.tier(Protocol::Eager));
        assert_eq!(select_protocol(&t, 65536.0), *t.tier(Protocol::Eager));
        assert_eq!(select_protocol(&t, 65537.0), *t.tier(Protocol::Rendezvous));
    }

    #[test]
    fn best_protocol_examples() {
        let t = off_node_cpu();
        assert!(close(
            best_protocol_time(&t, 1.0),
            1.38e-6 + 3.82e-10,
            1e-12
        ));
        assert!(close(best_protocol_time(&t, 1e6), 9.166e-5, 1e-12));
        let u = ProtocolTable::uniform(p(2e-6, 3e-10));
        assert_eq!(
            best_protocol_time(&u, 1234.0),
            postal_time(&p(2e-6, 3e-10), 1234.0)
        );
    }

    #[test]
    fn maxrate_examples() {
        let params = p(6.56e-6, 8.51e-11);
        let inj = InjectionParams::new(3.0e-11).unwrap();
        assert_eq!(
            maxrate_time(&params, &inj, 1, 1e6),
            postal_time(&params, 1e6)
        );
        assert!(close(
            maxrate_time(&params, &inj, 40, 1e6),
            1.20656e-3,
            1e-12
        ));
        assert_eq!(maxrate_time(&params, &inj, 1, 0.0), 6.56e-6);
    }

    #[test]
    fn multi_message_examples() {
        let params = p(4.96e-6, 1.69e-10);
        let inj = InjectionParams::new(5.1e-11).unwrap();
        assert_eq!(
            multi_message_time(&params, &inj, 3, 1, 777.0),
            maxrate_time(&params, &inj, 3, 777.0)
        );
        assert!(close(
            multi_message_time(&params, &inj, 1, 10, 1e3),
            5.129e-5,
            1e-12
        ));
        assert_eq!(multi_message_time(&params, &inj, 4, 0, 1e9), 0.0);
        // zero-byte messages still pay latency
        assert_eq!(multi_message_time(&params, &inj, 1, 3, 0.0), 3.0 * 4.96e-6);
    }

    #[test]
    fn memcpy_examples() {
        let mk = |direction, locality, a, b| MemcpyParams {
            direction,
            locality,
            params: p(a, b),
        };
        let h2d_on = mk(
            CopyDirection::HostToDevice,
            SocketLocality::OnSocket,
            1.09e-5,
            2.38e-11,
        );
        let d2h_on = mk(
            CopyDirection::DeviceToHost,
            SocketLocality::OnSocket,
            1.09e-5,
            2.36e-11,
        );
        let h2d_off = mk(
            CopyDirection::HostToDevice,
            SocketLocality::OffSocket,
            1.26e-5,
            2.71e-11,
        );
        assert_eq!(memcpy_time(&h2d_on, 0.0), 1.09e-5);
        assert!(close(memcpy_time(&d2h_on, 1e7), 2.469e-4, 1e-12));
        assert!(close(memcpy_time(&h2d_off, 1e6), 3.97e-5, 1e-12));
    }

    #[test]
    fn staged_bytes_examples() {
        let t = |n, s, d| staged_bytes(&TransferSpec::new(n, s, 1, d).unwrap());
        assert_eq!(t(50, 100.0, 0.0), 5000.0);
        assert_eq!(t(50, 100.0, 1.0), 100.0);
        assert_eq!(t(1, 100.0, 0.5), 100.0);
        assert_eq!(t(0, 100.0, 0.5), 0.0);
    }

    #[test]
    fn breakdown_total_tracks_phases() {
        let mut b = CostBreakdown::from_phases([("a", 1.0), ("b", 2.5)]);
        b.push("c", 0.25);
        assert_eq!(b.total(), 3.75);
        assert_eq!(b.phase("b"), Some(2.5));
        assert_eq!(b.phase("z"), None);
    }

    #[test]
    fn locality_order_and_parse() {
        assert!(LocalityClass::OnSocket < LocalityClass::OnNode);
        assert!(LocalityClass::OnNode < LocalityClass::OffNode);
        for l in LocalityClass::ALL {
            assert_eq!(l.as_str().parse::<LocalityClass>().unwrap(), l);
        }
        assert!("nearby".parse::<LocalityClass>().is_err());
    }
}
