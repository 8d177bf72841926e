//! Shared test support: independently transcribed parameters, reference evaluators and
//! synthetic machines. Nothing here calls the library's cost functions.

#![allow(dead_code)]

pub mod golden;
pub mod oracle;

use std::collections::BTreeMap;

use hetcomm::model::{
    CopyDirection, InjectionParams, LocalityClass, PostalParams, ProtocolTable, SocketLocality,
    TrafficKind,
};
use hetcomm::topology::MachineModel;

/// GPU postal pairs per locality, on-socket, on-node, off-node: (alpha, beta).
pub const SUMMIT_GPU: [(&str, f64, f64); 3] = [
    ("on-socket", 1.68e-5, 1.86e-11),
    ("on-node", 1.80e-5, 2.09e-11),
    ("off-node", 4.96e-6, 1.69e-10),
];

/// CPU postal pairs: (locality, protocol, alpha, beta).
pub const SUMMIT_CPU: [(&str, &str, f64, f64); 9] = [
    ("on-socket", "short", 3.51e-7, 2.62e-10),
    ("on-socket", "eager", 4.73e-7, 6.95e-11),
    ("on-socket", "rendezvous", 2.46e-6, 3.31e-11),
    ("on-node", "short", 9.08e-7, 1.46e-9),
    ("on-node", "eager", 1.17e-6, 2.16e-10),
    ("on-node", "rendezvous", 5.81e-6, 1.46e-10),
    ("off-node", "short", 1.38e-6, 3.82e-10),
    ("off-node", "eager", 1.85e-6, 3.93e-10),
    ("off-node", "rendezvous", 6.56e-6, 8.51e-11),
];

/// Memcpy pairs: (socket locality, direction, alpha, beta).
pub const SUMMIT_MEMCPY: [(&str, &str, f64, f64); 4] = [
    ("on-socket", "host-to-device", 1.09e-5, 2.38e-11),
    ("on-socket", "device-to-host", 1.09e-5, 2.36e-11),
    ("off-socket", "host-to-device", 1.26e-5, 2.71e-11),
    ("off-socket", "device-to-host", 1.25e-5, 2.72e-11),
];

pub const SUMMIT_INJECT_CPU: f64 = 3.0e-11;
pub const SUMMIT_INJECT_GPU: f64 = 5.1e-11;

pub fn pp(alpha: f64, beta: f64) -> PostalParams {
    PostalParams::new(alpha, beta).unwrap()
}

/// Per-message cost that never drops across a tier boundary: each tier's extra latency
/// covers the per-byte saving at its lower threshold.
pub fn continuous_table(scale: f64, short_max: u64, eager_max: u64) -> ProtocolTable {
    let (bs, be, br) = (1.0e-9 * scale, 2.0e-10 * scale, 5.0e-11 * scale);
    let a_s = 1.0e-6 * scale;
    let a_e = a_s + (bs - be) * short_max as f64 + 1e-9 * scale;
    let a_r = a_e + (be - br) * eager_max as f64 + 1e-9 * scale;
    ProtocolTable::new(pp(a_s, bs), pp(a_e, be), pp(a_r, br), short_max, eager_max).unwrap()
}

/// Two nodes of 2 sockets x (2 GPUs + 4 cores); two cores serve each GPU.
/// Tables have distinct tiers and never drop in cost as a message grows.
pub fn synthetic_two_node() -> MachineModel {
    let tables = |base: f64| -> BTreeMap<LocalityClass, ProtocolTable> {
        BTreeMap::from([
            (LocalityClass::OnSocket, continuous_table(base, 256, 8192)),
            (
                LocalityClass::OnNode,
                continuous_table(1.5 * base, 256, 8192),
            ),
            (
                LocalityClass::OffNode,
                continuous_table(2.0 * base, 256, 8192),
            ),
        ])
    };
    let mut m = MachineModel {
        name: "synthetic".into(),
        nodes: 2,
        sockets_per_node: 2,
        gpus_per_socket: 2,
        cpu_cores_per_socket: 4,
        cores_per_gpu: 2,
        gpu_tables: tables(0.7),
        cpu_tables: tables(1.0),
        memcpy_tables: BTreeMap::new(),
        injection: BTreeMap::from([
            (
                TrafficKind::InterCpu,
                InjectionParams::new(1.5e-10).unwrap(),
            ),
            (
                TrafficKind::InterGpu,
                InjectionParams::new(2.5e-10).unwrap(),
            ),
        ]),
        contention_factor: 1.3,
    };
    m.insert_memcpy(
        CopyDirection::HostToDevice,
        SocketLocality::OnSocket,
        pp(4.0e-6, 3.0e-11),
    );
    m.insert_memcpy(
        CopyDirection::DeviceToHost,
        SocketLocality::OnSocket,
        pp(3.5e-6, 2.8e-11),
    );
    m.insert_memcpy(
        CopyDirection::HostToDevice,
        SocketLocality::OffSocket,
        pp(5.0e-6, 4.0e-11),
    );
    m.insert_memcpy(
        CopyDirection::DeviceToHost,
        SocketLocality::OffSocket,
        pp(4.5e-6, 3.9e-11),
    );
    m
}

/// Spreadsheet-style reference: latency plus bytes times the binding per-byte cost.
pub fn reference_time(
    alpha: f64,
    beta: f64,
    t_inject: Option<f64>,
    ppn: f64,
    n: f64,
    s: f64,
) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let per_byte = match t_inject {
        Some(t) if ppn * t > beta => ppn * t,
        _ => beta,
    };
    n * alpha + n * s * per_byte
}
