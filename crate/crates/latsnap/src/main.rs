//! Command-line entry point. Subcommands:
//!
//! * `run` — execute one scenario file, write its artifacts, grade it.
//! * `sweep` — run an (n, k, seed) grid and emit a CSV/JSON table.
//! * `check` — re-run the checkers on a previously written trace file.
//! * `adversary` — emit a failure-chain scenario from chain specs.
//!
//! Exit codes: 0 all checks passed, 2 check failure, 3 invalid
//! configuration, 4 horizon exhausted.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use latsnap::runner::{
    exit, grade, run_scenario, trace_from_ndjson, trace_to_ndjson, ProtocolTrace, Report,
};
use latsnap::scenario::{Adversary, DelaySpec, Outputs, Protocol, Scenario};
use latsnap::sweep::{rows_to_csv, rows_to_json, run_sweep, SweepSpec};

#[derive(Parser)]
#[command(
    name = "latsnap",
    about = "Simulate and check crash-tolerant lattice agreement and snapshot protocols",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one scenario and grade its trace.
    Run(RunArgs),
    /// Run a parameter grid and emit a metrics table.
    Sweep(SweepArgs),
    /// Re-run the checkers on an existing trace file.
    Check(CheckArgs),
    /// Emit a failure-chain scenario from chain specs.
    Adversary(AdversaryArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for output files (trace, report, metrics).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's delay-model and adversary seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Protocol to sweep: ela, acaso, tsaso, or uqsm.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    /// System sizes, comma-separated. Empty: derive n = 2k+3 per cell.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Crash budgets, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    k: Vec<usize>,
    /// Number of seeds per (n, k) cell.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Operations per node in crash-free snapshot cells.
    #[arg(long, default_value_t = 10)]
    ops: usize,
    /// Round length D in microticks.
    #[arg(long, default_value_t = 100)]
    d: u64,
    /// Directory for the table and any failure dump.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file written by `run` (NDJSON).
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct AdversaryArgs {
    /// Chains as semicolon-separated node lists, e.g. "1,2,3;4,5".
    #[arg(long, value_parser = parse_chains, conflicts_with = "budget")]
    chains: Option<ChainList>,
    /// Crash budget: generate the staggered chains for k crashes.
    #[arg(long = "k", conflicts_with = "chains")]
    budget: Option<usize>,
    /// System size; default 2k+3 for the combined chain budget.
    #[arg(long)]
    n: Option<usize>,
    /// Fault bound; default (n-1)/2.
    #[arg(long)]
    f: Option<usize>,
    /// Round length D in microticks.
    #[arg(long, default_value_t = 100)]
    d: u64,
    /// Target protocol (must relay values): ela, acaso, or uqsm.
    #[arg(long, value_parser = parse_protocol, default_value = "ela")]
    protocol: Protocol,
    /// Directory to write the scenario into (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s {
        "ela" => Ok(Protocol::Ela),
        "acaso" => Ok(Protocol::Acaso),
        "tsaso" => Ok(Protocol::Tsaso),
        "uqsm" => Ok(Protocol::Uqsm),
        other => Err(format!(
            "unknown protocol `{other}` (expected ela, acaso, tsaso, or uqsm)"
        )),
    }
}

/// Parsed `--chains` value. The wrapper keeps clap from treating the outer
/// `Vec` as repeated occurrences of the flag.
#[derive(Clone)]
struct ChainList(Vec<Vec<u32>>);

fn parse_chains(s: &str) -> Result<ChainList, String> {
    s.split(';')
        .map(|chain| {
            chain
                .split(',')
                .map(|id| {
                    id.trim()
                        .parse::<u32>()
                        .map_err(|_| format!("bad node id `{id}` in --chains"))
                })
                .collect()
        })
        .collect::<Result<_, _>>()
        .map(ChainList)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is a usage
            // problem and maps to the configuration exit code.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => exit::CONFIG,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Check(args) => cmd_check(args),
        Cmd::Adversary(args) => cmd_adversary(args),
    };
    std::process::exit(code);
}

fn fail_config(err: impl std::fmt::Display) -> i32 {
    eprintln!("latsnap: {err}");
    exit::CONFIG
}

fn cmd_run(args: RunArgs) -> i32 {
    let scenario = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return fail_config(e),
    };
    let (trace, report) = match run_scenario(&scenario, args.seed) {
        Ok(r) => r,
        Err(e) => return fail_config(e),
    };
    if let Err(e) = write_run_outputs(&scenario, &trace, &report, args.out.as_deref()) {
        return fail_config(e);
    }
    print!("{}", report.to_json_pretty());
    report.exit_code()
}

/// Write the trace/report/metrics files a run asked for. Paths from the
/// scenario's `outputs` block resolve against `--out` (or the working
/// directory); `--out` alone gets the default file names.
fn write_run_outputs(
    scenario: &Scenario,
    trace: &ProtocolTrace,
    report: &Report,
    out_dir: Option<&Path>,
) -> std::io::Result<()> {
    let outputs = match (&scenario.outputs, out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(_)) => Outputs {
            trace: Some(PathBuf::from("trace.ndjson")),
            report: Some(PathBuf::from("report.json")),
            metrics: Some(PathBuf::from("metrics.json")),
        },
        (None, None) => return Ok(()),
    };
    let resolve = |p: &Path| match out_dir {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    };
    if let Some(p) = &outputs.trace {
        write_file(&resolve(p), &trace_to_ndjson(trace))?;
    }
    if let Some(p) = &outputs.report {
        write_file(&resolve(p), &report.to_json_pretty())?;
    }
    if let Some(p) = &outputs.metrics {
        let mut body =
            serde_json::to_string_pretty(&report.metrics).expect("metrics serialize");
        body.push('\n');
        write_file(&resolve(p), &body)?;
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, body)
}

fn cmd_sweep(args: SweepArgs) -> i32 {
    let spec = SweepSpec {
        protocol: args.protocol,
        n_values: args.n,
        k_values: args.k,
        seeds: args.seeds,
        ops_per_node: args.ops,
        d: args.d,
        parallel: args.parallel,
    };
    let output = match run_sweep(&spec) {
        Ok(o) => o,
        Err(e) => return fail_config(e),
    };
    let (table, file_name) = match args.format {
        Format::Csv => (rows_to_csv(&output.rows), "sweep.csv"),
        Format::Json => (rows_to_json(&output.rows), "sweep.json"),
    };
    print!("{table}");
    if let Some(dir) = &args.out {
        if let Err(e) = write_file(&dir.join(file_name), &table) {
            return fail_config(e);
        }
    }
    if let Some(failure) = output.failure {
        let dump = match &args.out {
            Some(dir) => dir.join("failed_scenario.json"),
            None => PathBuf::from("failed_scenario.json"),
        };
        if let Err(e) = write_file(&dump, &failure.scenario.to_json_pretty()) {
            return fail_config(e);
        }
        eprintln!(
            "latsnap: cell n={} k={} seed={} failed its checks; scenario dumped to {}",
            failure.row.n,
            failure.row.k,
            failure.row.seed,
            dump.display()
        );
        failure.exit_code
    } else {
        exit::OK
    }
}

fn cmd_check(args: CheckArgs) -> i32 {
    let text = match std::fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => return fail_config(e),
    };
    let trace = match trace_from_ndjson(&text) {
        Ok(t) => t,
        Err(e) => return fail_config(e),
    };
    let report = grade(&trace);
    print!("{}", report.to_json_pretty());
    report.exit_code()
}

fn cmd_adversary(args: AdversaryArgs) -> i32 {
    let chains = match (args.chains, args.budget) {
        (Some(ChainList(chains)), None) => chains,
        (None, Some(k)) if k > 0 => latsnap::scenario::staggered_chains(k),
        (None, Some(_)) => return fail_config("crash budget must be at least 1"),
        // clap's conflicts_with keeps both from being set; (None, None)
        // falls through here too.
        _ => return fail_config("give either --chains or --k"),
    };
    let crash_budget: usize = chains.iter().map(|c| c.len() - 1).sum();
    let need: usize = chains.iter().map(Vec::len).sum();
    let n = args.n.unwrap_or((2 * crash_budget + 3).max(need));
    let f = args.f.unwrap_or(n.saturating_sub(1) / 2);
    let scenario = Scenario {
        protocol: args.protocol,
        n,
        f,
        d: args.d,
        delay_model: DelaySpec::Fixed,
        crashes: Vec::new(),
        client_script: None,
        adversary: Some(Adversary::FailureChain { chains }),
        horizon: None,
        outputs: None,
    };
    // Reject impossible chain specs now, not when the file is used.
    if let Err(e) = scenario.compile(None) {
        return fail_config(e);
    }
    let body = scenario.to_json_pretty();
    match &args.out {
        Some(dir) => {
            let path = dir.join("adversary.json");
            if let Err(e) = write_file(&path, &body) {
                return fail_config(e);
            }
            println!("{}", path.display());
        }
        None => print!("{body}"),
    }
    exit::OK
}
