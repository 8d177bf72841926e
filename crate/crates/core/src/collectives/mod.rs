//! Collective-operation costs under the four communication strategies.
//!
//! A collective costs as much as its slowest rank, since the operation is bulk synchronous.
//! Within a rank the busiest sender (the GPU, or the busiest CPU core serving it) is charged.
//! Phases and locality groups are summed without overlap.

mod cost;
mod plan;

pub use cost::{
    collective_cost, compare_strategies, crossover_message_count, sweep, StrategyReport, SweepRow,
};
pub use plan::{message_plan, Layout, PlanEntry, SenderKind};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Distribution, ModelError};
use crate::topology::{MachineModel, TopologyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollectiveError {
    #[error("invalid collective: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// How data gets from one GPU to the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// GPUDirect through CUDA-aware MPI.
    CudaAware,
    /// Copy to one core, CPU collective, copy back.
    ThreeStep,
    /// Copy to one core, scatter over the GPU's cores with an on-node message.
    ExtraMsg,
    /// Every core of the GPU copies its share from a shared device pointer.
    DupDevptr,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::CudaAware,
        Strategy::ThreeStep,
        Strategy::ExtraMsg,
        Strategy::DupDevptr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::CudaAware => "cuda-aware",
            Strategy::ThreeStep => "3-step",
            Strategy::ExtraMsg => "extra-msg",
            Strategy::DupDevptr => "dup-devptr",
        }
    }

    /// Host staging used by the strategy; `None` for the GPUDirect path.
    pub fn distribution(&self) -> Option<Distribution> {
        match self {
            Strategy::CudaAware => None,
            Strategy::ThreeStep => Some(Distribution::SingleCpu),
            Strategy::ExtraMsg => Some(Distribution::ExtraMsg),
            Strategy::DupDevptr => Some(Distribution::DupDevptr),
        }
    }

    /// Whether each GPU's traffic is split across all of its CPU cores.
    pub fn splits_across_cores(&self) -> bool {
        matches!(self, Strategy::ExtraMsg | Strategy::DupDevptr)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| {
                format!(
                    "unknown strategy '{s}' (expected cuda-aware, 3-step, extra-msg or dup-devptr)"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CollectiveOp {
    Alltoall,
    Alltoallv,
    Allreduce,
}

impl CollectiveOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollectiveOp::Alltoall => "alltoall",
            CollectiveOp::Alltoallv => "alltoallv",
            CollectiveOp::Allreduce => "allreduce",
        }
    }
}

impl FromStr for CollectiveOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "alltoall" => Ok(CollectiveOp::Alltoall),
            "alltoallv" => Ok(CollectiveOp::Alltoallv),
            "allreduce" => Ok(CollectiveOp::Allreduce),
            other => Err(format!(
                "unknown collective '{other}' (expected alltoall, alltoallv or allreduce)"
            )),
        }
    }
}

/// Message sizes of a collective.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Per-destination size for alltoall, total buffer size for allreduce.
    Uniform(u64),
    /// `sizes[i][j]` bytes from GPU `i` to GPU `j` (alltoallv only).
    Matrix(Vec<Vec<u64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveSpec {
    pub op: CollectiveOp,
    /// Total participating GPUs.
    pub gpus: u32,
    /// Nodes the GPUs are spread over; defaults to as few as the machine shape allows.
    pub nodes: Option<u32>,
    pub payload: Payload,
    /// Seconds per byte of local reduction work (allreduce only).
    pub reduce_rate: f64,
}

impl CollectiveSpec {
    pub fn alltoall(gpus: u32, bytes: u64) -> Self {
        CollectiveSpec {
            op: CollectiveOp::Alltoall,
            gpus,
            nodes: None,
            payload: Payload::Uniform(bytes),
            reduce_rate: 0.0,
        }
    }

    pub fn allreduce(gpus: u32, bytes: u64) -> Self {
        CollectiveSpec {
            op: CollectiveOp::Allreduce,
            gpus,
            nodes: None,
            payload: Payload::Uniform(bytes),
            reduce_rate: 0.0,
        }
    }

    pub fn alltoallv(sizes: Vec<Vec<u64>>) -> Self {
        CollectiveSpec {
            op: CollectiveOp::Alltoallv,
            gpus: sizes.len() as u32,
            nodes: None,
            payload: Payload::Matrix(sizes),
            reduce_rate: 0.0,
        }
    }

    /// Alltoallv where every GPU sends `bytes` to every other GPU.
    pub fn dense_alltoallv(gpus: u32, bytes: u64) -> Self {
        let p = gpus as usize;
        Self::alltoallv(
            (0..p)
                .map(|i| (0..p).map(|j| if i == j { 0 } else { bytes }).collect())
                .collect(),
        )
    }

    pub fn on_nodes(mut self, nodes: u32) -> Self {
        self.nodes = Some(nodes);
        self
    }

    pub fn with_reduce_rate(mut self, reduce_rate: f64) -> Self {
        self.reduce_rate = reduce_rate;
        self
    }

    /// Same collective at a new message size. Matrix payloads keep their sparsity pattern and
    /// set every nonzero entry to `bytes`.
    pub fn with_size(&self, bytes: u64) -> Self {
        let payload = match &self.payload {
            Payload::Uniform(_) => Payload::Uniform(bytes),
            Payload::Matrix(m) => Payload::Matrix(
                m.iter()
                    .map(|row| row.iter().map(|&v| if v > 0 { bytes } else { 0 }).collect())
                    .collect(),
            ),
        };
        CollectiveSpec {
            payload,
            ..self.clone()
        }
    }

    /// Checks this collective against `machine` and returns the GPU placement.
    pub fn layout(&self, machine: &MachineModel) -> Result<Layout, CollectiveError> {
        let invalid = |msg: String| Err(CollectiveError::InvalidSpec(msg));
        if self.gpus == 0 {
            return invalid("gpus must be at least 1".into());
        }
        if !(self.reduce_rate.is_finite() && self.reduce_rate >= 0.0) {
            return invalid(format!(
                "reduce_rate must be finite and non-negative, got {}",
                self.reduce_rate
            ));
        }
        match (&self.op, &self.payload) {
            (CollectiveOp::Alltoallv, Payload::Matrix(m)) => {
                let p = self.gpus as usize;
                if m.len() != p || m.iter().any(|row| row.len() != p) {
                    return invalid(format!("alltoallv matrix must be {p} x {p}"));
                }
                if let Some(i) = (0..p).find(|&i| m[i][i] != 0) {
                    return invalid(format!(
                        "alltoallv matrix diagonal must be zero (entry {i},{i})"
                    ));
                }
            }
            (CollectiveOp::Alltoallv, Payload::Uniform(_)) => {
                return invalid("alltoallv needs a size matrix".into());
            }
            (_, Payload::Matrix(_)) => {
                return invalid(format!("{} takes a single message size", self.op.as_str()));
            }
            _ => {}
        }
        Layout::new(machine, self.gpus, self.nodes)
    }
}
