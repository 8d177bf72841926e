//! End-to-end predictions for the inter-GPU communication paths.

use std::collections::BTreeMap;

use super::{
    batch_time, best_protocol_time, memcpy_time, select_protocol, staged_bytes, CopyDirection,
    CostBreakdown, LocalityClass, ModelError, SocketLocality, TrafficKind, TransferSpec,
};
use crate::topology::MachineModel;

/// How staged data is spread over the CPU cores that serve one GPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Distribution {
    /// One core copies and sends everything.
    SingleCpu,
    /// One core copies, then scatters to the other cores with an on-node message.
    ExtraMsg,
    /// Every core copies its own share straight from device memory.
    DupDevptr,
}

impl Distribution {
    fn cores_used(&self, machine: &MachineModel) -> u32 {
        match self {
            Distribution::SingleCpu => 1,
            Distribution::ExtraMsg | Distribution::DupDevptr => machine.cores_per_gpu,
        }
    }
}

/// `n_messages` messages of one size to one locality class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MessageGroup {
    pub locality: LocalityClass,
    pub n_messages: u64,
    pub bytes_per_message: f64,
}

/// Input to [`staged_cost`]: what crosses the host-device boundary and what one busiest core sends.
#[derive(Debug, Clone)]
pub(crate) struct StagedPlan<'a> {
    pub distribution: Distribution,
    /// Bytes copied device-to-host before any message, before splitting across cores.
    pub bytes_out: f64,
    /// Bytes copied host-to-device after the last message.
    pub bytes_in: f64,
    /// Messages sent by the representative core, already split per core.
    pub groups: &'a [MessageGroup],
    /// GPUs per node communicating at once.
    pub gpus_per_node: u32,
}

fn staging_copy(
    machine: &MachineModel,
    direction: CopyDirection,
    distribution: Distribution,
    bytes: f64,
) -> Result<f64, ModelError> {
    let mp = machine.memcpy(direction, SocketLocality::OnSocket)?;
    if bytes <= 0.0 {
        return Ok(0.0);
    }
    Ok(match distribution {
        Distribution::SingleCpu | Distribution::ExtraMsg => memcpy_time(mp, bytes),
        Distribution::DupDevptr => {
            memcpy_time(mp, bytes / f64::from(machine.cores_per_gpu)) * machine.contention_factor
        }
    })
}

fn scatter_time(machine: &MachineModel, bytes: f64) -> Result<f64, ModelError> {
    let table = machine.cpu_table(LocalityClass::OnNode)?;
    let c = f64::from(machine.cores_per_gpu);
    if bytes <= 0.0 || machine.cores_per_gpu <= 1 {
        return Ok(0.0);
    }
    Ok(best_protocol_time(table, bytes * (c - 1.0) / c))
}

fn cpu_phase_label(locality: LocalityClass) -> &'static str {
    match locality {
        LocalityClass::OnSocket => "intra-cpu:on-socket",
        LocalityClass::OnNode => "intra-cpu:on-node",
        LocalityClass::OffNode => "inter-cpu",
    }
}

/// Copy to host, (optionally) scatter over cores, send, (optionally) gather, copy back.
pub(crate) fn staged_cost(
    machine: &MachineModel,
    plan: &StagedPlan<'_>,
) -> Result<CostBreakdown, ModelError> {
    if machine.cores_per_gpu == 0 {
        return Err(ModelError::MissingEntry("a positive cores_per_gpu".into()));
    }
    let cores_used = plan.distribution.cores_used(machine);
    let active = u64::from(plan.gpus_per_node) * u64::from(cores_used);
    let available = u64::from(machine.cores_per_node());
    if active > available {
        return Err(ModelError::PpnExceedsCores { active, available });
    }
    let ppn = plan.gpus_per_node * cores_used;
    let extra_msg = plan.distribution == Distribution::ExtraMsg;

    let mut out = CostBreakdown::new();
    out.push(
        "d2h",
        staging_copy(
            machine,
            CopyDirection::DeviceToHost,
            plan.distribution,
            plan.bytes_out,
        )?,
    );
    if extra_msg {
        out.push("redistribute", scatter_time(machine, plan.bytes_out)?);
    }

    let mut per_locality: BTreeMap<LocalityClass, f64> = BTreeMap::new();
    for group in plan.groups {
        let table = machine.cpu_table(group.locality)?;
        let params = select_protocol(table, group.bytes_per_message);
        let inj = match group.locality {
            LocalityClass::OffNode => Some(machine.injection_for(TrafficKind::InterCpu)?),
            _ => None,
        };
        *per_locality.entry(group.locality).or_insert(0.0) +=
            batch_time(&params, inj, ppn, group.n_messages, group.bytes_per_message);
    }
    for (locality, seconds) in per_locality {
        out.push(cpu_phase_label(locality), seconds);
    }

    if extra_msg {
        out.push("gather", scatter_time(machine, plan.bytes_in)?);
    }
    out.push(
        "h2d",
        staging_copy(
            machine,
            CopyDirection::HostToDevice,
            plan.distribution,
            plan.bytes_in,
        )?,
    );
    Ok(out)
}

/// GPU-to-GPU messages without host staging. Only off-node traffic is injection limited.
pub fn gpudirect_path_time(
    machine: &MachineModel,
    locality: LocalityClass,
    spec: &TransferSpec,
) -> Result<CostBreakdown, ModelError> {
    let table = machine.gpu_table(locality)?;
    let params = select_protocol(table, spec.bytes_per_message());
    let inj = match locality {
        LocalityClass::OffNode => Some(machine.injection_for(TrafficKind::InterGpu)?),
        _ => None,
    };
    let seconds = batch_time(
        &params,
        inj,
        spec.ppn(),
        spec.n_messages(),
        spec.bytes_per_message(),
    );
    Ok(CostBreakdown::from_phases([("gpu-direct", seconds)]))
}

/// Off-node transfer staged through host memory.
///
/// `spec.ppn` counts the GPUs per node sending at once; the split distributions multiply it
/// by `cores_per_gpu` to get the active cores per node. Under `ExtraMsg` and `DupDevptr`
/// each core sends all `n` messages with `s / cores_per_gpu` bytes each.
pub fn three_step_time(
    machine: &MachineModel,
    spec: &TransferSpec,
    distribution: Distribution,
) -> Result<CostBreakdown, ModelError> {
    let per_core_bytes = match distribution {
        Distribution::SingleCpu => spec.bytes_per_message(),
        Distribution::ExtraMsg | Distribution::DupDevptr => {
            spec.bytes_per_message() / f64::from(machine.cores_per_gpu.max(1))
        }
    };
    let groups = [MessageGroup {
        locality: LocalityClass::OffNode,
        n_messages: spec.n_messages(),
        bytes_per_message: per_core_bytes,
    }];
    let staged = staged_bytes(spec);
    staged_cost(
        machine,
        &StagedPlan {
            distribution,
            bytes_out: staged,
            bytes_in: staged,
            groups: &groups,
            gpus_per_node: spec.ppn(),
        },
    )
}
