//! Heterogeneous node description and path classification.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    CopyDirection, InjectionParams, LocalityClass, MemcpyParams, ModelError, PostalParams,
    ProtocolTable, SocketLocality, TrafficKind,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("unknown machine '{0}' (available: {available})", available = BUILTIN_MACHINES.join(", "))]
    UnknownMachine(String),
    #[error("endpoint {endpoint:?} is outside machine '{machine}': {reason}")]
    EndpointOutOfBounds {
        endpoint: Endpoint,
        machine: String,
        reason: String,
    },
}

/// Names accepted by [`builtin_machine`].
pub const BUILTIN_MACHINES: &[&str] = &["summit"];

/// A machine: node shape plus every measured model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineModel {
    pub name: String,
    pub nodes: u32,
    pub sockets_per_node: u32,
    pub gpus_per_socket: u32,
    pub cpu_cores_per_socket: u32,
    /// CPU cores that cooperate on one GPU's traffic.
    pub cores_per_gpu: u32,
    pub gpu_tables: BTreeMap<LocalityClass, ProtocolTable>,
    pub cpu_tables: BTreeMap<LocalityClass, ProtocolTable>,
    pub memcpy_tables: BTreeMap<(CopyDirection, SocketLocality), MemcpyParams>,
    pub injection: BTreeMap<TrafficKind, InjectionParams>,
    /// Slowdown applied when several cores copy from one GPU at once; 1 means none.
    pub contention_factor: f64,
}

impl MachineModel {
    pub fn gpus_per_node(&self) -> u32 {
        self.gpus_per_socket * self.sockets_per_node
    }

    pub fn cores_per_node(&self) -> u32 {
        self.cpu_cores_per_socket * self.sockets_per_node
    }

    /// `floor(cores per node / GPUs per node)`, or 0 for a machine without GPUs.
    pub fn default_cores_per_gpu(
        sockets_per_node: u32,
        gpus_per_socket: u32,
        cpu_cores_per_socket: u32,
    ) -> u32 {
        (sockets_per_node * cpu_cores_per_socket)
            .checked_div(sockets_per_node * gpus_per_socket)
            .unwrap_or(0)
    }

    pub fn gpu_table(&self, locality: LocalityClass) -> Result<&ProtocolTable, ModelError> {
        self.gpu_tables
            .get(&locality)
            .ok_or_else(|| ModelError::MissingEntry(format!("gpu_tables.{locality}")))
    }

    pub fn cpu_table(&self, locality: LocalityClass) -> Result<&ProtocolTable, ModelError> {
        self.cpu_tables
            .get(&locality)
            .ok_or_else(|| ModelError::MissingEntry(format!("cpu_tables.{locality}")))
    }

    pub fn memcpy(
        &self,
        direction: CopyDirection,
        locality: SocketLocality,
    ) -> Result<&MemcpyParams, ModelError> {
        self.memcpy_tables
            .get(&(direction, locality))
            .ok_or_else(|| {
                ModelError::MissingEntry(format!(
                    "memcpy_tables.{}",
                    memcpy_key(direction, locality)
                ))
            })
    }

    pub fn injection_for(&self, kind: TrafficKind) -> Result<&InjectionParams, ModelError> {
        self.injection
            .get(&kind)
            .ok_or_else(|| ModelError::MissingEntry(format!("injection.{}", traffic_key(kind))))
    }

    pub fn insert_memcpy(
        &mut self,
        direction: CopyDirection,
        locality: SocketLocality,
        params: PostalParams,
    ) {
        self.memcpy_tables.insert(
            (direction, locality),
            MemcpyParams {
                direction,
                locality,
                params,
            },
        );
    }

    /// Copy of the machine with every latency, per-byte cost and injection limit multiplied
    /// by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<MachineModel, ModelError> {
        let mut out = self.clone();
        for table in out
            .gpu_tables
            .values_mut()
            .chain(out.cpu_tables.values_mut())
        {
            *table = table.scaled(factor)?;
        }
        for mp in out.memcpy_tables.values_mut() {
            mp.params = mp.params.scaled(factor)?;
        }
        for inj in out.injection.values_mut() {
            *inj = InjectionParams::new(inj.t_inject() * factor)?;
        }
        Ok(out)
    }
}

pub(crate) fn memcpy_key(direction: CopyDirection, locality: SocketLocality) -> String {
    let loc = match locality {
        SocketLocality::OnSocket => "on-socket",
        SocketLocality::OffSocket => "off-socket",
    };
    let dir = match direction {
        CopyDirection::HostToDevice => "host-to-device",
        CopyDirection::DeviceToHost => "device-to-host",
    };
    format!("{loc}.{dir}")
}

pub(crate) fn traffic_key(kind: TrafficKind) -> &'static str {
    match kind {
        TrafficKind::InterCpu => "inter-cpu",
        TrafficKind::InterGpu => "inter-gpu",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndpointKind {
    /// Core index within the socket.
    Cpu(u32),
    /// Device index within the socket.
    Gpu(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub node: u32,
    pub socket: u32,
    pub kind: EndpointKind,
}

impl Endpoint {
    pub fn gpu(node: u32, socket: u32, device: u32) -> Self {
        Endpoint {
            node,
            socket,
            kind: EndpointKind::Gpu(device),
        }
    }

    pub fn cpu(node: u32, socket: u32, core: u32) -> Self {
        Endpoint {
            node,
            socket,
            kind: EndpointKind::Cpu(core),
        }
    }

    fn check(&self, machine: &MachineModel) -> Result<(), TopologyError> {
        let fail = |reason: String| TopologyError::EndpointOutOfBounds {
            endpoint: *self,
            machine: machine.name.clone(),
            reason,
        };
        if self.node >= machine.nodes {
            return Err(fail(format!("node {} >= {}", self.node, machine.nodes)));
        }
        if self.socket >= machine.sockets_per_node {
            return Err(fail(format!(
                "socket {} >= {}",
                self.socket, machine.sockets_per_node
            )));
        }
        match self.kind {
            EndpointKind::Cpu(core) if core >= machine.cpu_cores_per_socket => Err(fail(format!(
                "core {core} >= {}",
                machine.cpu_cores_per_socket
            ))),
            EndpointKind::Gpu(dev) if dev >= machine.gpus_per_socket => {
                Err(fail(format!("gpu {dev} >= {}", machine.gpus_per_socket)))
            }
            _ => Ok(()),
        }
    }
}

/// Locality of the path between two endpoints. A self-path is `OnSocket`.
pub fn classify_path(
    machine: &MachineModel,
    a: &Endpoint,
    b: &Endpoint,
) -> Result<LocalityClass, TopologyError> {
    a.check(machine)?;
    b.check(machine)?;
    Ok(if a.node != b.node {
        LocalityClass::OffNode
    } else if a.socket == b.socket {
        LocalityClass::OnSocket
    } else {
        LocalityClass::OnNode
    })
}

/// One human-readable message per violated machine invariant; empty when the machine is valid.
pub fn validate_machine(machine: &MachineModel) -> Vec<String> {
    let mut violations = Vec::new();
    for (field, value) in [
        ("nodes", machine.nodes),
        ("sockets_per_node", machine.sockets_per_node),
        ("gpus_per_socket", machine.gpus_per_socket),
        ("cpu_cores_per_socket", machine.cpu_cores_per_socket),
        ("cores_per_gpu", machine.cores_per_gpu),
    ] {
        if value < 1 {
            violations.push(format!("{field} must be at least 1, got {value}"));
        }
    }
    let needed = u64::from(machine.cores_per_gpu) * u64::from(machine.gpus_per_node());
    let available = u64::from(machine.cores_per_node());
    if needed > available {
        violations.push(format!(
            "cores_per_gpu ({}) x gpus per node ({}) = {needed} exceeds the {available} cores per node",
            machine.cores_per_gpu,
            machine.gpus_per_node()
        ));
    }
    for (field, tables) in [
        ("gpu_tables", &machine.gpu_tables),
        ("cpu_tables", &machine.cpu_tables),
    ] {
        for locality in LocalityClass::ALL {
            if !tables.contains_key(&locality) {
                violations.push(format!("{field} is missing the {locality} entry"));
            }
        }
    }
    for direction in [CopyDirection::HostToDevice, CopyDirection::DeviceToHost] {
        for locality in [SocketLocality::OnSocket, SocketLocality::OffSocket] {
            match machine.memcpy_tables.get(&(direction, locality)) {
                None => violations.push(format!(
                    "memcpy_tables is missing the {} entry",
                    memcpy_key(direction, locality)
                )),
                Some(mp) if mp.direction != direction || mp.locality != locality => violations
                    .push(format!(
                        "memcpy_tables entry {} is labelled {}",
                        memcpy_key(direction, locality),
                        memcpy_key(mp.direction, mp.locality)
                    )),
                Some(_) => {}
            }
        }
    }
    for kind in [TrafficKind::InterCpu, TrafficKind::InterGpu] {
        if !machine.injection.contains_key(&kind) {
            violations.push(format!(
                "injection is missing the {} entry",
                traffic_key(kind)
            ));
        }
    }
    if !(machine.contention_factor.is_finite() && machine.contention_factor >= 1.0) {
        violations.push(format!(
            "contention_factor must be finite and >= 1, got {}",
            machine.contention_factor
        ));
    }
    violations
}

/// A named preset machine.
pub fn builtin_machine(name: &str) -> Result<MachineModel, TopologyError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "summit" => Ok(summit()),
        _ => Err(TopologyError::UnknownMachine(name.to_string())),
    }
}

fn pp(alpha: f64, beta: f64) -> PostalParams {
    PostalParams::new(alpha, beta).expect("preset parameters are valid")
}

/// Summit: 2 Power9 sockets x (3 V100 + 20 cores) per node, Spectrum MPI measurements.
fn summit() -> MachineModel {
    use LocalityClass::*;

    let gpu_tables = BTreeMap::from([
        (OnSocket, ProtocolTable::uniform(pp(1.68e-05, 1.86e-11))),
        (OnNode, ProtocolTable::uniform(pp(1.80e-05, 2.09e-11))),
        (OffNode, ProtocolTable::uniform(pp(4.96e-06, 1.69e-10))),
    ]);
    let cpu_tables = BTreeMap::from([
        (
            OnSocket,
            ProtocolTable::with_default_thresholds(
                pp(3.51e-07, 2.62e-10),
                pp(4.73e-07, 6.95e-11),
                pp(2.46e-06, 3.31e-11),
            ),
        ),
        (
            OnNode,
            ProtocolTable::with_default_thresholds(
                pp(9.08e-07, 1.46e-09),
                pp(1.17e-06, 2.16e-10),
                pp(5.81e-06, 1.46e-10),
            ),
        ),
        (
            OffNode,
            ProtocolTable::with_default_thresholds(
                pp(1.38e-06, 3.82e-10),
                pp(1.85e-06, 3.93e-10),
                pp(6.56e-06, 8.51e-11),
            ),
        ),
    ]);
    let mut machine = MachineModel {
        name: "summit".to_string(),
        nodes: 4608,
        sockets_per_node: 2,
        gpus_per_socket: 3,
        cpu_cores_per_socket: 20,
        cores_per_gpu: MachineModel::default_cores_per_gpu(2, 3, 20),
        gpu_tables,
        cpu_tables,
        memcpy_tables: BTreeMap::new(),
        injection: BTreeMap::from([
            (
                TrafficKind::InterCpu,
                InjectionParams::new(3.0e-11).expect("valid"),
            ),
            (
                TrafficKind::InterGpu,
                InjectionParams::new(5.1e-11).expect("valid"),
            ),
        ]),
        contention_factor: 1.0,
    };
    machine.insert_memcpy(
        CopyDirection::HostToDevice,
        SocketLocality::OnSocket,
        pp(1.09e-05, 2.38e-11),
    );
    machine.insert_memcpy(
        CopyDirection::DeviceToHost,
        SocketLocality::OnSocket,
        pp(1.09e-05, 2.36e-11),
    );
    machine.insert_memcpy(
        CopyDirection::HostToDevice,
        SocketLocality::OffSocket,
        pp(1.26e-05, 2.71e-11),
    );
    machine.insert_memcpy(
        CopyDirection::DeviceToHost,
        SocketLocality::OffSocket,
        pp(1.25e-05, 2.72e-11),
    );
    machine
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_examples() {
        let m = builtin_machine("summit").unwrap();
        let c = |a, b| classify_path(&m, &a, &b).unwrap();
        assert_eq!(
            c(Endpoint::gpu(0, 0, 0), Endpoint::gpu(0, 0, 1)),
            LocalityClass::OnSocket
        );
        assert_eq!(
            c(Endpoint::gpu(0, 0, 0), Endpoint::gpu(0, 1, 0)),
            LocalityClass::OnNode
        );
        assert_eq!(
            c(Endpoint::cpu(0, 0, 3), Endpoint::gpu(0, 1, 2)),
            LocalityClass::OnNode
        );
        assert_eq!(
            c(Endpoint::gpu(0, 0, 0), Endpoint::gpu(1, 0, 0)),
            LocalityClass::OffNode
        );
        assert_eq!(
            c(Endpoint::gpu(2, 1, 1), Endpoint::gpu(2, 1, 1)),
            LocalityClass::OnSocket
        );
    }

    #[test]
    fn classify_rejects_out_of_bounds() {
        let m = builtin_machine("summit").unwrap();
        let ok = Endpoint::gpu(0, 0, 0);
        for bad in [
            Endpoint::gpu(4608, 0, 0),
            Endpoint::gpu(0, 2, 0),
            Endpoint::gpu(0, 0, 3),
            Endpoint::cpu(0, 0, 20),
        ] {
            assert!(matches!(
                classify_path(&m, &ok, &bad),
                Err(TopologyError::EndpointOutOfBounds { .. })
            ));
        }
    }

    #[test]
    fn summit_is_valid() {
        let m = builtin_machine("summit").unwrap();
        assert_eq!(validate_machine(&m), Vec::<String>::new());
        assert_eq!(m.cores_per_gpu, 6);
        assert_eq!(m.gpus_per_node(), 6);
        assert_eq!(m.cores_per_node(), 40);
    }

    #[test]
    fn summit_spot_values() {
        let m = builtin_machine("SUMMIT").unwrap();
        let off = m.gpu_table(LocalityClass::OffNode).unwrap();
        assert_eq!(off.tier(crate::model::Protocol::Eager).alpha(), 4.96e-6);
        assert_eq!(off.tier(crate::model::Protocol::Eager).beta(), 1.69e-10);
        assert_eq!(
            m.injection_for(TrafficKind::InterCpu).unwrap().t_inject(),
            3.0e-11
        );
    }

    #[test]
    fn unknown_machine() {
        assert_eq!(
            builtin_machine("lassen"),
            Err(TopologyError::UnknownMachine("lassen".into()))
        );
    }

    #[test]
    fn missing_gpu_on_node_is_reported() {
        let mut m = builtin_machine("summit").unwrap();
        m.gpu_tables.remove(&LocalityClass::OnNode);
        let v = validate_machine(&m);
        assert_eq!(v.len(), 1);
        assert!(
            v[0].contains("gpu_tables") && v[0].contains("on-node"),
            "{v:?}"
        );
        assert!(m.gpu_table(LocalityClass::OnNode).is_err());
    }

    #[test]
    fn too_many_cores_per_gpu() {
        let mut m = builtin_machine("summit").unwrap();
        m.cores_per_gpu = 7;
        let v = validate_machine(&m);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("42") && v[0].contains("40"), "{v:?}");
    }

    #[test]
    fn zero_counts_and_bad_contention() {
        let mut m = builtin_machine("summit").unwrap();
        m.nodes = 0;
        m.contention_factor = 0.5;
        m.injection.remove(&TrafficKind::InterGpu);
        m.memcpy_tables
            .remove(&(CopyDirection::DeviceToHost, SocketLocality::OffSocket));
        let v = validate_machine(&m);
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn single_socket_machines_never_report_on_node() {
        let mut m = builtin_machine("summit").unwrap();
        m.sockets_per_node = 1;
        m.nodes = 3;
        for a_node in 0..3 {
            for b_node in 0..3 {
                for a_dev in 0..3 {
                    for b_dev in 0..3 {
                        let a = Endpoint::gpu(a_node, 0, a_dev);
                        let b = Endpoint::gpu(b_node, 0, b_dev);
                        let l = classify_path(&m, &a, &b).unwrap();
                        assert_ne!(l, LocalityClass::OnNode);
                        assert_eq!(l, classify_path(&m, &b, &a).unwrap());
                    }
                }
            }
        }
    }
}
