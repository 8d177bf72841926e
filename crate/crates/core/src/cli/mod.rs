//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or fit error.

mod sizes;

pub use sizes::parse_sizes;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::collectives::{
    compare_strategies, crossover_message_count, CollectiveOp, CollectiveSpec, Strategy,
};
use crate::config::{load_machine, machine_to_toml};
use crate::fitting::{fit_injection, fit_postal, fit_protocol_table, FitError, TimingSample};
use crate::io::{read_samples, Cell, IoError, SampleRecord, Table};
use crate::model::{
    gpudirect_path_time, three_step_time, Distribution, LocalityClass, PostalParams, Protocol,
    TransferSpec,
};
use crate::topology::{builtin_machine, validate_machine, MachineModel};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Timings above this many seconds are flagged as probable unit mistakes.
const SUSPICIOUS_SECONDS: f64 = 1e3;

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

fn data(message: impl ToString) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: message.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hetcomm",
    version,
    about = "Predict and fit inter-GPU communication costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point-to-point path costs over a size sweep.
    Predict(PredictArgs),
    /// Fit model parameters to a timing log.
    Fit(FitArgs),
    /// Message count at which host staging starts to beat GPUDirect.
    Crossover(CrossoverArgs),
    /// Collective costs under every strategy.
    Collective(CollectiveArgs),
    /// Validate a machine and print it as a config file.
    Machine(MachineOnlyArgs),
}

#[derive(Debug, Args)]
struct MachineArgs {
    /// Built-in machine name [default: summit].
    #[arg(long, conflicts_with = "config")]
    machine: Option<String>,
    /// Machine config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the table here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PathKind {
    Gpudirect,
    #[value(name = "3step")]
    ThreeStep,
    ExtraMsg,
    DupDevptr,
}

impl PathKind {
    fn name(self) -> &'static str {
        match self {
            PathKind::Gpudirect => "gpudirect",
            PathKind::ThreeStep => "3step",
            PathKind::ExtraMsg => "extra-msg",
            PathKind::DupDevptr => "dup-devptr",
        }
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "gpudirect,3step"
    )]
    paths: Vec<PathKind>,
    /// Sizes in bytes: comma list and/or start:stop:xFACTOR ranges, K/M/G suffixes.
    #[arg(long, default_value = "1:1G:x4")]
    sizes: String,
    /// Messages sent by each GPU.
    #[arg(long, default_value_t = 1)]
    messages: u64,
    /// GPUs per node communicating at once.
    #[arg(long, default_value_t = 1)]
    ppn: u32,
    /// Overlap between the payloads of the messages, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    dedup: f64,
    /// Locality of the GPUDirect messages. Staged paths are modelled off-node only.
    #[arg(long, default_value = "off-node")]
    locality: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitKind {
    Postal,
    Protocol,
    Injection,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Timing CSV: bytes,seconds[,ppn,n_messages,locality]. `-` reads standard input.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "postal")]
    kind: FitKind,
    /// Only use samples tagged with this locality.
    #[arg(long)]
    locality: Option<String>,
    /// Single-process latency for the injection fit.
    #[arg(long)]
    alpha: Option<f64>,
    /// Single-process per-byte cost for the injection fit.
    #[arg(long)]
    beta: Option<f64>,
    /// Write a machine-config fragment with the fitted values.
    #[arg(long)]
    write_config: Option<PathBuf>,
    /// Config section for the fragment, e.g. cpu_tables.off-node, memcpy_tables.on-socket.host-to-device
    /// or injection.inter-cpu.
    #[arg(long)]
    section: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CrossoverArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[arg(long, default_value = "1K:1M:x2")]
    sizes: String,
    #[arg(long, default_value_t = 0.0)]
    dedup: f64,
    /// Largest message count searched.
    #[arg(long, default_value_t = 1000)]
    n_max: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CollectiveArgs {
    #[command(flatten)]
    machine: MachineArgs,
    /// alltoall, alltoallv (every pair exchanges the size) or allreduce.
    #[arg(long)]
    op: String,
    #[arg(long)]
    gpus: u32,
    /// Nodes to spread the GPUs over [default: as few as fit].
    #[arg(long)]
    nodes: Option<u32>,
    #[arg(long, default_value = "8:1M:x8")]
    sizes: String,
    /// Seconds per byte of local reduction (allreduce).
    #[arg(long, default_value_t = 0.0)]
    reduce_rate: f64,
    /// Strategies to report [default: all].
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct MachineOnlyArgs {
    #[command(flatten)]
    machine: MachineArgs,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(err, "{e}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{e}");
                0
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Predict(a) => predict(a, out),
        Command::Fit(a) => fit(a, out, err),
        Command::Crossover(a) => crossover(a, out),
        Command::Collective(a) => collective(a, out),
        Command::Machine(a) => show_machine(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn load(args: &MachineArgs) -> Result<MachineModel, CliError> {
    let machine = match &args.config {
        Some(path) => load_machine(path).map_err(usage)?,
        None => builtin_machine(args.machine.as_deref().unwrap_or("summit")).map_err(usage)?,
    };
    let violations = validate_machine(&machine);
    if !violations.is_empty() {
        let mut message = format!("machine '{}' is invalid:", machine.name);
        for v in violations {
            let _ = write!(message, "\n  {v}");
        }
        return Err(usage(message));
    }
    Ok(machine)
}

fn emit(table: &Table, opts: &OutputArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut buf = Vec::new();
    match opts.format {
        Format::Csv => table.write_csv(&mut buf),
        Format::Table => table.write_aligned(&mut buf),
    }
    .map_err(usage)?;
    match &opts.output {
        Some(path) => std::fs::write(path, &buf)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => out.write_all(&buf).map_err(usage),
    }
}

fn check_dedup(dedup: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&dedup) {
        Ok(())
    } else {
        Err(usage(format!("dedup must lie in [0, 1], got {dedup}")))
    }
}

fn predict(args: PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let machine = load(&args.machine)?;
    let sizes = parse_sizes(&args.sizes).map_err(usage)?;
    check_dedup(args.dedup)?;
    let locality: LocalityClass = args.locality.parse().map_err(usage)?;
    let mut paths = args.paths.clone();
    paths.dedup();
    if locality != LocalityClass::OffNode && paths.iter().any(|p| *p != PathKind::Gpudirect) {
        return Err(usage(
            "staged paths are modelled off-node only; drop --locality or use --paths gpudirect",
        ));
    }

    let mut table = Table::new(["size", "path", "seconds"]);
    for &size in &sizes {
        let spec =
            TransferSpec::new(args.messages, size as f64, args.ppn, args.dedup).map_err(usage)?;
        for &path in &paths {
            let cost = match path {
                PathKind::Gpudirect => gpudirect_path_time(&machine, locality, &spec),
                PathKind::ThreeStep => three_step_time(&machine, &spec, Distribution::SingleCpu),
                PathKind::ExtraMsg => three_step_time(&machine, &spec, Distribution::ExtraMsg),
                PathKind::DupDevptr => three_step_time(&machine, &spec, Distribution::DupDevptr),
            }
            .map_err(usage)?;
            table.push(vec![size.into(), path.name().into(), cost.total().into()]);
        }
    }
    emit(&table, &args.output, out)
}

fn fit_advice(e: &FitError) -> Option<&'static str> {
    match e {
        FitError::TooFewSamples { .. } => Some("collect more message sizes"),
        FitError::DegenerateSizes => Some("sweep the message size"),
        FitError::InsufficientSpan(_) => {
            Some("sweep sizes over at least three decades, or fit with --kind postal")
        }
        FitError::NoPpnVariation(_) => Some("repeat the benchmark at several ppn values"),
        FitError::Nonphysical { .. } => Some("timings must be in seconds"),
        _ => None,
    }
}

fn fit_error(e: FitError, records: &[SampleRecord]) -> CliError {
    let mut message = match &e {
        FitError::Nonphysical { index, seconds } => {
            format!(
                "line {}: {seconds} s is below the timer resolution floor",
                records[*index].line
            )
        }
        other => other.to_string(),
    };
    if let Some(advice) = fit_advice(&e) {
        let _ = write!(message, " (hint: {advice})");
    }
    data(message)
}

fn read_input(path: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let mut text = Vec::new();
    if path == Path::new("-") {
        io::stdin().read_to_end(&mut text).map_err(usage)?;
    } else {
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut text))
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    }
    read_samples(text.as_slice()).map_err(|e| match e {
        IoError::NoSamples => usage(format!("{}: no samples", path.display())),
        IoError::Io(e) => usage(e),
        other => data(format!("{}: {other}", path.display())),
    })
}

fn float_text(v: f64) -> String {
    format!("{v:e}")
}

fn postal_inline(p: &PostalParams) -> String {
    format!(
        "{{ alpha = {}, beta = {} }}",
        float_text(p.alpha()),
        float_text(p.beta())
    )
}

enum Fitted {
    Postal(PostalParams),
    Protocol(crate::model::ProtocolTable, bool),
    Injection(f64),
}

fn config_fragment(section: &str, fitted: &Fitted) -> Result<String, CliError> {
    let parts: Vec<&str> = section.split('.').collect();
    let table_section = matches!(parts.as_slice(), [t, l] if (*t == "gpu_tables" || *t == "cpu_tables") && l.parse::<LocalityClass>().is_ok());
    let memcpy_section = matches!(
        parts.as_slice(),
        [
            "memcpy_tables",
            "on-socket" | "off-socket",
            "host-to-device" | "device-to-host"
        ]
    );
    let injection_section = matches!(parts.as_slice(), ["injection", "inter-cpu" | "inter-gpu"]);
    let bad = || usage(format!("section '{section}' does not fit this kind of fit"));
    let mut s = String::new();
    match fitted {
        Fitted::Postal(p) if table_section => {
            let _ = write!(
                s,
                "[{section}]\nalpha = {}\nbeta = {}\n",
                float_text(p.alpha()),
                float_text(p.beta())
            );
        }
        Fitted::Postal(p) if memcpy_section => {
            let _ = write!(
                s,
                "[{}.{}]\n{} = {}\n",
                parts[0],
                parts[1],
                parts[2],
                postal_inline(p)
            );
        }
        Fitted::Protocol(t, single) if table_section => {
            let _ = writeln!(s, "[{section}]");
            if *single {
                let p = t.tier(Protocol::Short);
                let _ = write!(
                    s,
                    "alpha = {}\nbeta = {}\n",
                    float_text(p.alpha()),
                    float_text(p.beta())
                );
            } else {
                let _ = write!(
                    s,
                    "short_max_bytes = {}\neager_max_bytes = {}\n",
                    t.short_max_bytes(),
                    t.eager_max_bytes()
                );
                for p in Protocol::ALL {
                    let _ = writeln!(s, "{} = {}", p.as_str(), postal_inline(t.tier(p)));
                }
            }
        }
        Fitted::Injection(t) if injection_section => {
            let _ = write!(
                s,
                "[injection]\n{} = {{ t_inject = {} }}\n",
                parts[1],
                float_text(*t)
            );
        }
        _ => return Err(bad()),
    }
    Ok(s)
}

fn fit(args: FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut records = read_input(&args.input)?;
    let suspicious: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| r.sample.seconds > SUSPICIOUS_SECONDS)
        .collect();
    if let Some(first) = suspicious.first() {
        let _ = writeln!(
            err,
            "warning: {} sample(s) exceed {SUSPICIOUS_SECONDS} s (first on line {}); is the seconds column in another unit?",
            suspicious.len(),
            first.line
        );
    }
    if let Some(loc) = &args.locality {
        let loc: LocalityClass = loc.parse().map_err(usage)?;
        records.retain(|r| r.sample.locality == Some(loc));
        if records.is_empty() {
            return Err(data(format!("no samples tagged {loc}")));
        }
    }
    let samples: Vec<TimingSample> = records.iter().map(|r| r.sample).collect();

    let (table, fitted) = match args.kind {
        FitKind::Postal => {
            let r = fit_postal(&samples).map_err(|e| fit_error(e, &records))?;
            let mut t = Table::new(["alpha", "beta", "rms_residual", "samples", "clamped"]);
            t.push(vec![
                r.params.alpha().into(),
                r.params.beta().into(),
                r.residual.into(),
                (r.sample_count as u64).into(),
                if r.clamped { "yes" } else { "no" }.into(),
            ]);
            (t, Fitted::Postal(r.params))
        }
        FitKind::Protocol => {
            let r = fit_protocol_table(&samples).map_err(|e| fit_error(e, &records))?;
            let mut t = Table::new([
                "tier",
                "max_bytes",
                "alpha",
                "beta",
                "rms_residual",
                "samples",
            ]);
            match &r.segments {
                Some(segments) => {
                    let limits = [
                        Cell::Int(r.table.short_max_bytes()),
                        Cell::Int(r.table.eager_max_bytes()),
                        "inf".into(),
                    ];
                    for ((p, seg), limit) in Protocol::ALL.iter().zip(segments).zip(limits) {
                        t.push(vec![
                            p.as_str().into(),
                            limit,
                            seg.params.alpha().into(),
                            seg.params.beta().into(),
                            seg.residual.into(),
                            (seg.sample_count as u64).into(),
                        ]);
                    }
                }
                None => {
                    let p = r.table.tier(Protocol::Short);
                    let rms = (r.sse / samples.len() as f64).sqrt();
                    t.push(vec![
                        "all".into(),
                        "inf".into(),
                        p.alpha().into(),
                        p.beta().into(),
                        rms.into(),
                        (samples.len() as u64).into(),
                    ]);
                    let _ = writeln!(
                        err,
                        "note: no breakpoint pair improved on a single postal fit"
                    );
                }
            }
            (t, Fitted::Protocol(r.table, r.single_tier))
        }
        FitKind::Injection => {
            let (Some(alpha), Some(beta)) = (args.alpha, args.beta) else {
                return Err(usage(
                    "the injection fit needs the single-process --alpha and --beta",
                ));
            };
            let baseline = PostalParams::new(alpha, beta).map_err(usage)?;
            let r = fit_injection(&samples, &baseline).map_err(|e| fit_error(e, &records))?;
            let mut t = Table::new(["t_inject", "rms_residual", "samples"]);
            t.push(vec![
                r.params.t_inject().into(),
                r.residual.into(),
                (r.sample_count as u64).into(),
            ]);
            (t, Fitted::Injection(r.params.t_inject()))
        }
    };

    if let Some(path) = &args.write_config {
        let section = args.section.clone().unwrap_or_else(|| {
            match args.kind {
                FitKind::Injection => "injection.inter-cpu",
                _ => "cpu_tables.off-node",
            }
            .to_string()
        });
        let fragment = config_fragment(&section, &fitted)?;
        std::fs::write(path, fragment)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    emit(&table, &args.output, out)
}

fn crossover(args: CrossoverArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let machine = load(&args.machine)?;
    let sizes = parse_sizes(&args.sizes).map_err(usage)?;
    check_dedup(args.dedup)?;
    let mut table = Table::new(["size", "crossover_n"]);
    for &size in &sizes {
        let n = crossover_message_count(&machine, size as f64, args.dedup, args.n_max)
            .map_err(usage)?;
        table.push(vec![
            size.into(),
            n.map_or_else(|| "none".into(), Cell::Int),
        ]);
    }
    emit(&table, &args.output, out)
}

fn collective(args: CollectiveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let machine = load(&args.machine)?;
    let sizes = parse_sizes(&args.sizes).map_err(usage)?;
    let op: CollectiveOp = args.op.parse().map_err(usage)?;
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategies
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(usage)?
    };
    let base = match op {
        CollectiveOp::Alltoall => CollectiveSpec::alltoall(args.gpus, 0),
        CollectiveOp::Alltoallv => CollectiveSpec::dense_alltoallv(args.gpus, 0),
        CollectiveOp::Allreduce => CollectiveSpec::allreduce(args.gpus, 0),
    }
    .with_reduce_rate(args.reduce_rate);
    let base = match args.nodes {
        Some(n) => base.on_nodes(n),
        None => base,
    };

    let mut table = Table::new([
        "size",
        "strategy",
        "seconds",
        "speedup_vs_cuda_aware",
        "cheapest",
    ]);
    for &size in &sizes {
        let report = compare_strategies(&machine, &base.with_size(size)).map_err(usage)?;
        for &st in &strategies {
            table.push(vec![
                size.into(),
                st.as_str().into(),
                report.total(st).into(),
                report.speedup_vs_cuda_aware[&st].into(),
                if report.cheapest == st { "yes" } else { "no" }.into(),
            ]);
        }
    }
    emit(&table, &args.output, out)
}

fn show_machine(args: MachineOnlyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let machine = load(&args.machine)?;
    out.write_all(machine_to_toml(&machine).as_bytes())
        .map_err(usage)
}
