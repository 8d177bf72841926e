//! TOML machine description files.
//!
//! Field names follow [`MachineModel`]. A protocol table is either three tiers
//!
//! ```toml
//! [cpu_tables.off-node]
//! short_max_bytes = 512        # optional, default 512
//! eager_max_bytes = 65536      # optional, default 65536
//! short = { alpha = 1.38e-6, beta = 3.82e-10 }
//! eager = { alpha = 1.85e-6, beta = 3.93e-10 }
//! rendezvous = { alpha = 6.56e-6, beta = 8.51e-11 }
//! ```
//!
//! or a single `alpha`/`beta` pair used for every tier. Memcpy entries live under
//! `[memcpy_tables.<on-socket|off-socket>]` keyed by `host-to-device` / `device-to-host`,
//! and injection limits under `[injection]` keyed by `inter-cpu` / `inter-gpu`.
//! Unknown keys are rejected. Missing entries are accepted here and reported by
//! [`validate_machine`](crate::topology::validate_machine).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CopyDirection, InjectionParams, LocalityClass, ModelError, PostalParams, Protocol,
    ProtocolTable, SocketLocality, TrafficKind,
};
use crate::topology::MachineModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMachine {
    name: String,
    nodes: u32,
    sockets_per_node: u32,
    gpus_per_socket: u32,
    cpu_cores_per_socket: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cores_per_gpu: Option<u32>,
    #[serde(default = "one")]
    contention_factor: f64,
    #[serde(default)]
    gpu_tables: BTreeMap<String, RawTable>,
    #[serde(default)]
    cpu_tables: BTreeMap<String, RawTable>,
    #[serde(default)]
    memcpy_tables: BTreeMap<String, BTreeMap<String, PostalParams>>,
    #[serde(default)]
    injection: BTreeMap<String, InjectionParams>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    short_max_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eager_max_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    short: Option<PostalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eager: Option<PostalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rendezvous: Option<PostalParams>,
}

impl RawTable {
    fn build(&self, key: &str) -> Result<ProtocolTable, ConfigError> {
        let short_max = self
            .short_max_bytes
            .unwrap_or(ProtocolTable::DEFAULT_SHORT_MAX_BYTES);
        let eager_max = self
            .eager_max_bytes
            .unwrap_or(ProtocolTable::DEFAULT_EAGER_MAX_BYTES);
        let err = |e: ModelError| ConfigError::invalid(key, e);
        match (
            self.alpha,
            self.beta,
            self.short,
            self.eager,
            self.rendezvous,
        ) {
            (Some(a), Some(b), None, None, None) => {
                let p = PostalParams::new(a, b).map_err(err)?;
                ProtocolTable::new(p, p, p, short_max, eager_max).map_err(err)
            }
            (None, None, Some(s), Some(e), Some(r)) => {
                ProtocolTable::new(s, e, r, short_max, eager_max).map_err(err)
            }
            _ => Err(ConfigError::invalid(
                key,
                "give either alpha and beta, or all of short, eager and rendezvous",
            )),
        }
    }

    fn from_table(table: &ProtocolTable) -> Self {
        let thresholds = |t: &mut RawTable| {
            if table.short_max_bytes() != ProtocolTable::DEFAULT_SHORT_MAX_BYTES {
                t.short_max_bytes = Some(table.short_max_bytes());
            }
            if table.eager_max_bytes() != ProtocolTable::DEFAULT_EAGER_MAX_BYTES {
                t.eager_max_bytes = Some(table.eager_max_bytes());
            }
        };
        let mut out = RawTable::default();
        thresholds(&mut out);
        let [s, e, r] = Protocol::ALL.map(|p| *table.tier(p));
        if s == e && e == r {
            out.alpha = Some(s.alpha());
            out.beta = Some(s.beta());
        } else {
            out.short = Some(s);
            out.eager = Some(e);
            out.rendezvous = Some(r);
        }
        out
    }
}

fn socket_locality(key: &str) -> Option<SocketLocality> {
    match key {
        "on-socket" => Some(SocketLocality::OnSocket),
        "off-socket" => Some(SocketLocality::OffSocket),
        _ => None,
    }
}

fn copy_direction(key: &str) -> Option<CopyDirection> {
    match key {
        "host-to-device" => Some(CopyDirection::HostToDevice),
        "device-to-host" => Some(CopyDirection::DeviceToHost),
        _ => None,
    }
}

fn traffic_kind(key: &str) -> Option<TrafficKind> {
    match key {
        "inter-cpu" => Some(TrafficKind::InterCpu),
        "inter-gpu" => Some(TrafficKind::InterGpu),
        _ => None,
    }
}

fn tables(
    field: &str,
    raw: &BTreeMap<String, RawTable>,
) -> Result<BTreeMap<LocalityClass, ProtocolTable>, ConfigError> {
    raw.iter()
        .map(|(k, t)| {
            let key = format!("{field}.{k}");
            let locality: LocalityClass = k.parse().map_err(|_| {
                ConfigError::invalid(&key, "expected on-socket, on-node or off-node")
            })?;
            Ok((locality, t.build(&key)?))
        })
        .collect()
}

impl RawMachine {
    fn build(self) -> Result<MachineModel, ConfigError> {
        let mut machine = MachineModel {
            cores_per_gpu: self.cores_per_gpu.unwrap_or_else(|| {
                MachineModel::default_cores_per_gpu(
                    self.sockets_per_node,
                    self.gpus_per_socket,
                    self.cpu_cores_per_socket,
                )
            }),
            gpu_tables: tables("gpu_tables", &self.gpu_tables)?,
            cpu_tables: tables("cpu_tables", &self.cpu_tables)?,
            memcpy_tables: BTreeMap::new(),
            injection: BTreeMap::new(),
            name: self.name,
            nodes: self.nodes,
            sockets_per_node: self.sockets_per_node,
            gpus_per_socket: self.gpus_per_socket,
            cpu_cores_per_socket: self.cpu_cores_per_socket,
            contention_factor: self.contention_factor,
        };
        for (loc_key, entries) in &self.memcpy_tables {
            let locality = socket_locality(loc_key).ok_or_else(|| {
                ConfigError::invalid(
                    format!("memcpy_tables.{loc_key}"),
                    "expected on-socket or off-socket",
                )
            })?;
            for (dir_key, params) in entries {
                let direction = copy_direction(dir_key).ok_or_else(|| {
                    ConfigError::invalid(
                        format!("memcpy_tables.{loc_key}.{dir_key}"),
                        "expected host-to-device or device-to-host",
                    )
                })?;
                machine.insert_memcpy(direction, locality, *params);
            }
        }
        for (key, inj) in &self.injection {
            let kind = traffic_kind(key).ok_or_else(|| {
                ConfigError::invalid(
                    format!("injection.{key}"),
                    "expected inter-cpu or inter-gpu",
                )
            })?;
            machine.injection.insert(kind, *inj);
        }
        Ok(machine)
    }

    fn from_machine(machine: &MachineModel) -> Self {
        let default_cpg = MachineModel::default_cores_per_gpu(
            machine.sockets_per_node,
            machine.gpus_per_socket,
            machine.cpu_cores_per_socket,
        );
        let tables = |t: &BTreeMap<LocalityClass, ProtocolTable>| {
            t.iter()
                .map(|(l, table)| (l.to_string(), RawTable::from_table(table)))
                .collect()
        };
        let mut memcpy_tables: BTreeMap<String, BTreeMap<String, PostalParams>> = BTreeMap::new();
        for mp in machine.memcpy_tables.values() {
            let key = crate::topology::memcpy_key(mp.direction, mp.locality);
            let (loc, dir) = key.split_once('.').expect("memcpy keys have two parts");
            memcpy_tables
                .entry(loc.to_string())
                .or_default()
                .insert(dir.to_string(), mp.params);
        }
        RawMachine {
            name: machine.name.clone(),
            nodes: machine.nodes,
            sockets_per_node: machine.sockets_per_node,
            gpus_per_socket: machine.gpus_per_socket,
            cpu_cores_per_socket: machine.cpu_cores_per_socket,
            cores_per_gpu: (machine.cores_per_gpu != default_cpg).then_some(machine.cores_per_gpu),
            contention_factor: machine.contention_factor,
            gpu_tables: tables(&machine.gpu_tables),
            cpu_tables: tables(&machine.cpu_tables),
            memcpy_tables,
            injection: machine
                .injection
                .iter()
                .map(|(k, v)| (crate::topology::traffic_key(*k).to_string(), *v))
                .collect(),
        }
    }
}

/// Parses a machine description. The result is not validated.
pub fn machine_from_toml(text: &str) -> Result<MachineModel, ConfigError> {
    let raw: RawMachine = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    raw.build()
}

pub fn load_machine(path: &Path) -> Result<MachineModel, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    machine_from_toml(&text).map_err(|e| match e {
        ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn machine_to_toml(machine: &MachineModel) -> String {
    toml::to_string(&RawMachine::from_machine(machine))
        .expect("machine descriptions always serialize")
}
