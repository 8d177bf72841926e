//! GPU placement and per-sender message enumeration.

use std::collections::BTreeMap;

use super::cost::busiest_rank;
use super::{CollectiveError, CollectiveOp, CollectiveSpec, Payload, Strategy};
use crate::model::LocalityClass;
use crate::topology::{classify_path, Endpoint, MachineModel};

/// Block placement of GPU ranks: node-major, then socket-major within a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub gpus: u32,
    pub nodes: u32,
    /// GPUs placed on each fully used node.
    pub gpus_per_node: u32,
    gpus_per_socket: u32,
}

impl Layout {
    pub fn new(
        machine: &MachineModel,
        gpus: u32,
        nodes: Option<u32>,
    ) -> Result<Self, CollectiveError> {
        let invalid = |msg: String| Err(CollectiveError::InvalidSpec(msg));
        let capacity = machine.gpus_per_node();
        if capacity == 0 || machine.gpus_per_socket == 0 {
            return invalid(format!("machine '{}' has no GPUs", machine.name));
        }
        let nodes = nodes.unwrap_or_else(|| gpus.div_ceil(capacity));
        if nodes == 0 || nodes > gpus {
            return invalid(format!("cannot place {gpus} GPUs on {nodes} nodes"));
        }
        if nodes > machine.nodes {
            return invalid(format!(
                "{nodes} nodes requested but machine '{}' has {}",
                machine.name, machine.nodes
            ));
        }
        let per_node = gpus.div_ceil(nodes);
        if per_node > capacity {
            return invalid(format!(
                "{per_node} GPUs per node exceed the {capacity} available"
            ));
        }
        if gpus.div_ceil(per_node) != nodes {
            return invalid(format!(
                "{gpus} GPUs cannot be spread over exactly {nodes} nodes"
            ));
        }
        Ok(Layout {
            gpus,
            nodes,
            gpus_per_node: per_node,
            gpus_per_socket: machine.gpus_per_socket,
        })
    }

    pub fn endpoint(&self, rank: u32) -> Endpoint {
        let local = rank % self.gpus_per_node;
        Endpoint::gpu(
            rank / self.gpus_per_node,
            local / self.gpus_per_socket,
            local % self.gpus_per_socket,
        )
    }
}

/// Who puts the messages on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SenderKind {
    Gpu,
    Cpu,
}

/// `n_messages` messages of `bytes_per_message` bytes to one locality class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub locality: LocalityClass,
    pub sender: SenderKind,
    pub n_messages: u64,
    pub bytes_per_message: f64,
}

/// `ceil(log2 p)`; 0 for a single process.
pub(crate) fn ceil_log2(p: u32) -> u32 {
    if p <= 1 {
        0
    } else {
        32 - (p - 1).leading_zeros()
    }
}

/// `floor(log2 g)` for `g >= 1`.
pub(crate) fn floor_log2(g: u32) -> u32 {
    31 - g.max(1).leading_zeros()
}

/// Allreduce switches from recursive doubling to reduce-scatter + allgather at this size.
pub(crate) fn allreduce_switch_bytes(machine: &MachineModel) -> Result<u64, CollectiveError> {
    Ok(machine.cpu_table(LocalityClass::OffNode)?.eager_max_bytes())
}

/// One exchange of an allreduce schedule, for rank 0.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ReduceStep {
    pub locality: LocalityClass,
    pub bytes: f64,
    /// Bytes combined locally after this exchange.
    pub reduced: f64,
}

/// Rank 0's exchanges, with full-GPU byte counts.
///
/// Below the switch size: `ceil(log2 p)` full-payload exchanges. At or above it: a
/// reduce-scatter of `ceil(log2 p)` halving exchanges followed by the mirrored allgather,
/// scaled so the two phases move `2 s (p - 1) / p` bytes. Partner distance doubles each step;
/// the first `floor(log2 g)` partners share the node, the rest are off-node.
pub(crate) fn allreduce_schedule(
    machine: &MachineModel,
    layout: &Layout,
    bytes: u64,
) -> Result<Vec<ReduceStep>, CollectiveError> {
    let p = layout.gpus;
    let steps = ceil_log2(p);
    let on_node_steps = steps.min(floor_log2(layout.gpus_per_node));
    let me = layout.endpoint(0);
    let mut localities = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        localities.push(if k < on_node_steps {
            classify_path(machine, &me, &layout.endpoint(1 << k))?
        } else {
            LocalityClass::OffNode
        });
    }
    let s = bytes as f64;
    if bytes < allreduce_switch_bytes(machine)? {
        return Ok(localities
            .into_iter()
            .map(|locality| ReduceStep {
                locality,
                bytes: s,
                reduced: s,
            })
            .collect());
    }
    let share = s * f64::from(p - 1) / f64::from(p);
    let denom = (2f64).powi(steps as i32) - 1.0;
    let sizes: Vec<f64> = (0..steps)
        .map(|k| share * (2f64).powi((steps - 1 - k) as i32) / denom)
        .collect();
    let mut schedule: Vec<ReduceStep> = localities
        .iter()
        .zip(&sizes)
        .map(|(&locality, &b)| ReduceStep {
            locality,
            bytes: b,
            reduced: b,
        })
        .collect();
    schedule.extend(
        localities
            .iter()
            .zip(&sizes)
            .rev()
            .map(|(&locality, &b)| ReduceStep {
                locality,
                bytes: b,
                reduced: 0.0,
            }),
    );
    Ok(schedule)
}

/// What one rank sends and stages during a collective.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RankPlan {
    /// `(locality, bytes)` of every message the busiest sender of this rank puts on the wire.
    pub messages: Vec<(LocalityClass, f64)>,
    /// Bytes copied off the GPU before communicating.
    pub bytes_out: f64,
    /// Bytes copied back onto the GPU afterwards.
    pub bytes_in: f64,
    /// Bytes the busiest process combines locally (allreduce only).
    pub reduced: f64,
}

fn alltoall_plan(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    layout: &Layout,
    strategy: Strategy,
    me: usize,
) -> Result<RankPlan, CollectiveError> {
    let src = layout.endpoint(me as u32);
    let mut dests = Vec::new();
    let mut bytes_in = 0u64;
    for other in 0..layout.gpus as usize {
        if other == me {
            continue;
        }
        let (send, recv) = match &spec.payload {
            Payload::Uniform(s) => (*s, *s),
            Payload::Matrix(m) => (m[me][other], m[other][me]),
        };
        bytes_in += recv;
        if send > 0 {
            dests.push((
                classify_path(machine, &src, &layout.endpoint(other as u32))?,
                send,
            ));
        }
    }
    let bytes_out: u64 = dests.iter().map(|d| d.1).sum();
    if strategy.splits_across_cores() {
        dests.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        dests.truncate(dests.len().div_ceil(machine.cores_per_gpu.max(1) as usize));
    }
    Ok(RankPlan {
        messages: dests.into_iter().map(|(l, b)| (l, b as f64)).collect(),
        bytes_out: bytes_out as f64,
        bytes_in: bytes_in as f64,
        reduced: 0.0,
    })
}

fn allreduce_plan(
    machine: &MachineModel,
    layout: &Layout,
    strategy: Strategy,
    bytes: u64,
) -> Result<RankPlan, CollectiveError> {
    if layout.gpus <= 1 {
        return Ok(RankPlan {
            messages: Vec::new(),
            bytes_out: 0.0,
            bytes_in: 0.0,
            reduced: 0.0,
        });
    }
    let divisor = if strategy.splits_across_cores() {
        f64::from(machine.cores_per_gpu.max(1))
    } else {
        1.0
    };
    let schedule = allreduce_schedule(machine, layout, bytes)?;
    Ok(RankPlan {
        messages: schedule
            .iter()
            .map(|step| (step.locality, step.bytes / divisor))
            .collect(),
        bytes_out: bytes as f64,
        bytes_in: bytes as f64,
        reduced: schedule.iter().map(|step| step.reduced).sum::<f64>() / divisor,
    })
}

/// Plan of rank `me`. Strategies that split across cores hand each core `ceil(m / c)` of the
/// `m` destinations; the rank's busiest core is charged the farthest ones, largest first.
/// Allreduce schedules are the same for every rank.
pub(crate) fn rank_plan(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    layout: &Layout,
    strategy: Strategy,
    me: usize,
) -> Result<RankPlan, CollectiveError> {
    match (&spec.op, &spec.payload) {
        (CollectiveOp::Allreduce, Payload::Uniform(bytes)) => {
            allreduce_plan(machine, layout, strategy, *bytes)
        }
        (CollectiveOp::Allreduce, Payload::Matrix(_)) => unreachable!("validated by layout()"),
        _ => alltoall_plan(machine, spec, layout, strategy, me),
    }
}

/// Ranks whose plans can differ.
pub(crate) fn candidate_ranks(spec: &CollectiveSpec, layout: &Layout) -> std::ops::Range<usize> {
    match spec.op {
        CollectiveOp::Allreduce => 0..1,
        _ => 0..layout.gpus as usize,
    }
}

pub(crate) fn group_messages(
    messages: &[(LocalityClass, f64)],
    sender: SenderKind,
) -> Vec<PlanEntry> {
    let mut groups: BTreeMap<(LocalityClass, u64), u64> = BTreeMap::new();
    for &(locality, bytes) in messages {
        *groups.entry((locality, bytes.to_bits())).or_insert(0) += 1;
    }
    groups
        .into_iter()
        .map(|((locality, bits), n_messages)| PlanEntry {
            locality,
            sender,
            n_messages,
            bytes_per_message: f64::from_bits(bits),
        })
        .collect()
}

/// Messages sent by the busiest sender, grouped by locality and size. The busiest sender
/// belongs to the rank with the highest predicted cost under `strategy` (lowest rank on ties).
pub fn message_plan(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    strategy: Strategy,
) -> Result<Vec<PlanEntry>, CollectiveError> {
    let (plan, _) = busiest_rank(machine, spec, strategy)?;
    let sender = match strategy {
        Strategy::CudaAware => SenderKind::Gpu,
        _ => SenderKind::Cpu,
    };
    Ok(group_messages(&plan.messages, sender))
}
