//! Brute-force collective cost: every rank, every message and every copy priced on its own.

use hetcomm::collectives::{CollectiveOp, CollectiveSpec, Payload, Strategy};
use hetcomm::model::{
    CopyDirection, LocalityClass, Protocol, ProtocolTable, SocketLocality, TrafficKind,
};
use hetcomm::topology::MachineModel;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Loc {
    Socket,
    Node,
    Off,
}

impl Loc {
    fn class(self) -> LocalityClass {
        match self {
            Loc::Socket => LocalityClass::OnSocket,
            Loc::Node => LocalityClass::OnNode,
            Loc::Off => LocalityClass::OffNode,
        }
    }
}

struct Place {
    per_node: u64,
    per_socket: u64,
}

impl Place {
    fn node(&self, r: u64) -> u64 {
        r / self.per_node
    }

    fn socket(&self, r: u64) -> u64 {
        (r % self.per_node) / self.per_socket
    }

    fn loc(&self, a: u64, b: u64) -> Loc {
        if self.node(a) != self.node(b) {
            Loc::Off
        } else if self.socket(a) == self.socket(b) {
            Loc::Socket
        } else {
            Loc::Node
        }
    }
}

fn tier(table: &ProtocolTable, s: f64) -> (f64, f64) {
    let p = if s <= table.short_max_bytes() as f64 {
        Protocol::Short
    } else if s <= table.eager_max_bytes() as f64 {
        Protocol::Eager
    } else {
        Protocol::Rendezvous
    };
    let t = table.tier(p);
    (t.alpha(), t.beta())
}

fn one_message(table: &ProtocolTable, s: f64, inject: Option<f64>, ppn: f64) -> f64 {
    let (a, b) = tier(table, s);
    let per_byte = inject.map_or(b, |t| b.max(ppn * t));
    a + s * per_byte
}

fn copy(
    machine: &MachineModel,
    dir: CopyDirection,
    bytes: f64,
    share: f64,
    contention: f64,
) -> f64 {
    if bytes <= 0.0 {
        return 0.0;
    }
    let p = machine.memcpy_tables[&(dir, SocketLocality::OnSocket)].params;
    contention * (p.alpha() + p.beta() * bytes / share)
}

fn scatter(machine: &MachineModel, bytes: f64) -> f64 {
    let c = machine.cores_per_gpu as f64;
    if bytes <= 0.0 || c <= 1.0 {
        return 0.0;
    }
    let x = bytes * (c - 1.0) / c;
    let t = &machine.cpu_tables[&LocalityClass::OnNode];
    Protocol::ALL
        .iter()
        .map(|&p| t.tier(p).alpha() + t.tier(p).beta() * x)
        .fold(f64::INFINITY, f64::min)
}

fn log2_ceil(p: u64) -> u64 {
    let mut k = 0;
    while (1u64 << k) < p {
        k += 1;
    }
    k
}

fn log2_floor(g: u64) -> u64 {
    let mut k = 0;
    while (2u64 << k) <= g {
        k += 1;
    }
    k
}

struct Work {
    sends: Vec<(Loc, f64)>,
    out: f64,
    inn: f64,
    reduced: f64,
}

fn alltoall_work(spec: &CollectiveSpec, place: &Place, p: u64, me: u64) -> Work {
    let mut sends = Vec::new();
    let (mut out, mut inn) = (0.0, 0.0);
    for other in 0..p {
        if other == me {
            continue;
        }
        let (tx, rx) = match &spec.payload {
            Payload::Uniform(s) => (*s, *s),
            Payload::Matrix(m) => (
                m[me as usize][other as usize],
                m[other as usize][me as usize],
            ),
        };
        inn += rx as f64;
        if tx > 0 {
            out += tx as f64;
            sends.push((place.loc(me, other), tx as f64));
        }
    }
    Work {
        sends,
        out,
        inn,
        reduced: 0.0,
    }
}

fn allreduce_work(machine: &MachineModel, place: &Place, p: u64, s: u64) -> Work {
    if p <= 1 {
        return Work {
            sends: vec![],
            out: 0.0,
            inn: 0.0,
            reduced: 0.0,
        };
    }
    let steps = log2_ceil(p);
    let near = steps.min(log2_floor(place.per_node));
    let locs: Vec<Loc> = (0..steps)
        .map(|k| {
            if k < near {
                place.loc(0, 1 << k)
            } else {
                Loc::Off
            }
        })
        .collect();
    let s = s as f64;
    let switch = machine.cpu_tables[&LocalityClass::OffNode].eager_max_bytes() as f64;
    if s < switch {
        return Work {
            sends: locs.iter().map(|&l| (l, s)).collect(),
            out: s,
            inn: s,
            reduced: steps as f64 * s,
        };
    }
    let moved = s * (p - 1) as f64 / p as f64;
    let parts = ((1u64 << steps) - 1) as f64;
    let mut sends = Vec::new();
    for k in 0..steps {
        sends.push((
            locs[k as usize],
            moved * (1u64 << (steps - 1 - k)) as f64 / parts,
        ));
    }
    for k in (0..steps).rev() {
        sends.push((
            locs[k as usize],
            moved * (1u64 << (steps - 1 - k)) as f64 / parts,
        ));
    }
    Work {
        sends,
        out: s,
        inn: s,
        reduced: moved,
    }
}

fn rank_cost(
    machine: &MachineModel,
    spec: &CollectiveSpec,
    strategy: Strategy,
    per_node: u64,
    mut w: Work,
) -> f64 {
    let c = machine.cores_per_gpu as f64;
    let split = matches!(strategy, Strategy::ExtraMsg | Strategy::DupDevptr);
    if split {
        match spec.op {
            CollectiveOp::Allreduce => {
                for m in &mut w.sends {
                    m.1 /= c;
                }
                w.reduced /= c;
            }
            _ => {
                w.sends
                    .sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)));
                let keep = w.sends.len().div_ceil(machine.cores_per_gpu as usize);
                w.sends.truncate(keep);
            }
        }
    }
    let mut total = 0.0;
    if strategy == Strategy::CudaAware {
        let inj = machine.injection[&TrafficKind::InterGpu].t_inject();
        for &(l, s) in &w.sends {
            let off = (l == Loc::Off).then_some(inj);
            total += one_message(&machine.gpu_tables[&l.class()], s, off, per_node as f64);
        }
    } else {
        let cores = if split { c } else { 1.0 };
        let inj = machine.injection[&TrafficKind::InterCpu].t_inject();
        for &(l, s) in &w.sends {
            let off = (l == Loc::Off).then_some(inj);
            total += one_message(
                &machine.cpu_tables[&l.class()],
                s,
                off,
                per_node as f64 * cores,
            );
        }
        let (share, contention) = if strategy == Strategy::DupDevptr {
            (c, machine.contention_factor)
        } else {
            (1.0, 1.0)
        };
        total += copy(
            machine,
            CopyDirection::DeviceToHost,
            w.out,
            share,
            contention,
        );
        total += copy(
            machine,
            CopyDirection::HostToDevice,
            w.inn,
            share,
            contention,
        );
        if strategy == Strategy::ExtraMsg {
            total += scatter(machine, w.out) + scatter(machine, w.inn);
        }
    }
    if spec.op == CollectiveOp::Allreduce && spec.gpus > 1 {
        total += spec.reduce_rate * w.reduced;
    }
    total
}

/// Cost of the slowest rank, from first principles.
pub fn brute_force_cost(machine: &MachineModel, spec: &CollectiveSpec, strategy: Strategy) -> f64 {
    let p = spec.gpus as u64;
    let nodes = spec
        .nodes
        .map_or_else(|| p.div_ceil(machine.gpus_per_node() as u64), |n| n as u64);
    let per_node = p.div_ceil(nodes);
    let place = Place {
        per_node,
        per_socket: machine.gpus_per_socket as u64,
    };
    match (&spec.op, &spec.payload) {
        (CollectiveOp::Allreduce, Payload::Uniform(s)) => rank_cost(
            machine,
            spec,
            strategy,
            per_node,
            allreduce_work(machine, &place, p, *s),
        ),
        _ => (0..p)
            .map(|me| {
                rank_cost(
                    machine,
                    spec,
                    strategy,
                    per_node,
                    alltoall_work(spec, &place, p, me),
                )
            })
            .fold(0.0, f64::max),
    }
}
