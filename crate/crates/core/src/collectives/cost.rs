//! Strategy costing, comparison, crossover search and size sweeps.

use std::collections::BTreeMap;

use super::plan::{candidate_ranks, group_messages, rank_plan, Layout, RankPlan, SenderKind};
use super::{CollectiveError, CollectiveOp, CollectiveSpec, Strategy};
use crate::model::{
    gpudirect_path_time, staged_cost, three_step_time, CostBreakdown, Distribution, LocalityClass,
    MessageGroup, StagedPlan, TransferSpec,
};
use crate::topology::MachineModel;

fn plan_cost(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    layout: &Layout,
    strategy: Strategy,
    plan: &RankPlan,
) -> Result<CostBreakdown, CollectiveError> {
    let groups = group_messages(&plan.messages, SenderKind::Gpu);
    let mut out = match strategy.distribution() {
        None => {
            let mut per_locality: BTreeMap<LocalityClass, f64> = BTreeMap::new();
            for entry in &groups {
                let transfer = TransferSpec::new(
                    entry.n_messages,
                    entry.bytes_per_message,
                    layout.gpus_per_node,
                    0.0,
                )?;
                *per_locality.entry(entry.locality).or_insert(0.0) +=
                    gpudirect_path_time(machine, entry.locality, &transfer)?.total();
            }
            CostBreakdown::from_phases(
                per_locality
                    .into_iter()
                    .map(|(locality, seconds)| (format!("gpu-direct:{locality}"), seconds)),
            )
        }
        Some(distribution) => {
            let groups: Vec<MessageGroup> = groups
                .iter()
                .map(|e| MessageGroup {
                    locality: e.locality,
                    n_messages: e.n_messages,
                    bytes_per_message: e.bytes_per_message,
                })
                .collect();
            staged_cost(
                machine,
                &StagedPlan {
                    distribution,
                    bytes_out: plan.bytes_out,
                    bytes_in: plan.bytes_in,
                    groups: &groups,
                    gpus_per_node: layout.gpus_per_node,
                },
            )?
        }
    };
    if spec.op == CollectiveOp::Allreduce && spec.reduce_rate > 0.0 && layout.gpus > 1 {
        out.push("reduce", spec.reduce_rate * plan.reduced);
    }
    Ok(out)
}

/// Plan and cost of the rank that finishes last under `strategy`; the lowest such rank on ties.
pub(crate) fn busiest_rank(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    strategy: Strategy,
) -> Result<(RankPlan, CostBreakdown), CollectiveError> {
    let layout = spec.layout(machine)?;
    let mut best: Option<(RankPlan, CostBreakdown)> = None;
    for rank in candidate_ranks(spec, &layout) {
        let plan = rank_plan(machine, spec, &layout, strategy, rank)?;
        let cost = plan_cost(machine, spec, &layout, strategy, &plan)?;
        if best.as_ref().is_none_or(|(_, b)| cost.total() > b.total()) {
            best = Some((plan, cost));
        }
    }
    Ok(best.expect("every layout has at least one rank"))
}

/// Predicted cost of one collective under `strategy`: the cost of its busiest rank.
pub fn collective_cost(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    strategy: Strategy,
) -> Result<CostBreakdown, CollectiveError> {
    Ok(busiest_rank(machine, spec, strategy)?.1)
}

/// Costs of all four strategies for one collective.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub costs: BTreeMap<Strategy, CostBreakdown>,
    pub cheapest: Strategy,
    /// `cost(CudaAware) / cost(strategy)`.
    pub speedup_vs_cuda_aware: BTreeMap<Strategy, f64>,
}

impl StrategyReport {
    pub fn total(&self, strategy: Strategy) -> f64 {
        self.costs[&strategy].total()
    }
}

fn speedup(baseline: f64, other: f64) -> f64 {
    if other == 0.0 {
        if baseline == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        baseline / other
    }
}

pub fn compare_strategies(
    machine: &MachineModel,
    spec: &CollectiveSpec,
) -> Result<StrategyReport, CollectiveError> {
    let mut costs = BTreeMap::new();
    for strategy in Strategy::ALL {
        costs.insert(strategy, collective_cost(machine, spec, strategy)?);
    }
    let mut cheapest = Strategy::CudaAware;
    for strategy in Strategy::ALL {
        if costs[&strategy].total() < costs[&cheapest].total() {
            cheapest = strategy;
        }
    }
    let baseline = costs[&Strategy::CudaAware].total();
    let speedup_vs_cuda_aware = Strategy::ALL
        .iter()
        .map(|&s| {
            (
                s,
                if s == Strategy::CudaAware {
                    1.0
                } else {
                    speedup(baseline, costs[&s].total())
                },
            )
        })
        .collect();
    Ok(StrategyReport {
        costs,
        cheapest,
        speedup_vs_cuda_aware,
    })
}

/// Smallest message count `n <= n_max` at which staging `n` off-node messages of `s` bytes
/// through one CPU beats GPUDirect, or `None`.
pub fn crossover_message_count(
    machine: &MachineModel,
    s: f64,
    dedup: f64,
    n_max: u64,
) -> Result<Option<u64>, CollectiveError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(CollectiveError::InvalidArgument(format!(
            "message size must be positive, got {s}"
        )));
    }
    if n_max == 0 {
        return Err(CollectiveError::InvalidArgument(
            "n_max must be at least 1".into(),
        ));
    }
    for n in 1..=n_max {
        let spec = TransferSpec::new(n, s, 1, dedup)?;
        let staged = three_step_time(machine, &spec, Distribution::SingleCpu)?.total();
        let direct = gpudirect_path_time(machine, LocalityClass::OffNode, &spec)?.total();
        if staged < direct {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub size: u64,
    pub strategy: Strategy,
    pub seconds: f64,
    pub speedup: f64,
    pub cheapest: bool,
}

/// Every strategy at every size; rows are size-major in strategy declaration order.
pub fn sweep(
    machine: &MachineModel,
    template: &CollectiveSpec,
    sizes: &[u64],
) -> Result<Vec<SweepRow>, CollectiveError> {
    if sizes.is_empty() {
        return Err(CollectiveError::InvalidArgument(
            "size list is empty".into(),
        ));
    }
    let mut rows = Vec::with_capacity(sizes.len() * Strategy::ALL.len());
    for &size in sizes {
        let report = compare_strategies(machine, &template.with_size(size))?;
        for strategy in Strategy::ALL {
            rows.push(SweepRow {
                size,
                strategy,
                seconds: report.total(strategy),
                speedup: report.speedup_vs_cuda_aware[&strategy],
                cheapest: report.cheapest == strategy,
            });
        }
    }
    Ok(rows)
}
