//! Experiment grids: run one scenario per (n, k, seed) cell, collect round
//! and message metrics into a CSV/JSON table, and stop at the first failing
//! cell with its scenario dumped for replay.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::runner::{run_scenario, RunnerError};
use crate::scenario::{
    staggered_chains, Adversary, DelaySpec, Protocol, Scenario, ScenarioOp, ScriptLine,
};

/// The grid one sweep covers. Every (n, k, seed) triple is one cell; an
/// empty `n_values` derives `n = 2k + 3` per cell, the smallest system
/// whose quorum tolerates a `k`-crash chain budget with slack.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub protocol: Protocol,
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Number of seeds; cells use seeds `0..seeds`.
    pub seeds: u64,
    /// Snapshot protocols: operations per node in the alternating
    /// update/read script used for crash-free cells.
    pub ops_per_node: usize,
    pub d: u64,
    /// Worker threads; 1 runs inline.
    pub parallel: usize,
}

/// One CSV row. `k` is the cell's crash budget (the grid coordinate);
/// the actual crash count of the run never exceeds it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub n: usize,
    pub f: usize,
    pub k: usize,
    pub seed: u64,
    pub ops: usize,
    pub total_rounds: u64,
    pub amortized_rounds: f64,
    pub max_op_rounds: u64,
    pub messages: usize,
    pub checks_passed: bool,
}

/// The first failing cell: its row, the exact scenario to replay it, and
/// the exit code its report mapped to.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub row: SweepRow,
    pub scenario: Scenario,
    pub exit_code: i32,
}

#[derive(Debug)]
pub struct SweepOutput {
    /// Rows of all cells that completed, in grid order.
    pub rows: Vec<SweepRow>,
    /// Set iff some cell failed its checks (or ran out of time); no
    /// further cells were scheduled after it.
    pub failure: Option<SweepFailure>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("n = {n} gives f = {f}, too small for crash budget k = {k}")]
    BudgetTooLarge { n: usize, f: usize, k: usize },
    #[error("chain cells need a value-relaying protocol; tsaso sweeps support only k = 0")]
    TsasoChains,
    #[error("chain budget k = {k} needs {need} chain nodes but n = {n}")]
    ChainsDontFit { k: usize, need: usize, n: usize },
}

/// Build the scenario for one grid cell.
///
/// With a crash budget (`k > 0`) the cell is the staggered failure-chain
/// adversary — chains of lengths 2, 4, …, the schedule that stretches
/// agreement and snapshot latency the most per crash. Without one it is a
/// crash-free workload: simultaneous agreement starts, or an alternating
/// update/read script for snapshot protocols. Delays are uniform in
/// `(0, D]`, drawn from the cell's seed, so seeds vary the interleaving.
pub fn cell_scenario(
    protocol: Protocol,
    n: Option<usize>,
    k: usize,
    seed: u64,
    ops_per_node: usize,
    d: u64,
) -> Result<Scenario, SweepError> {
    let n = n.unwrap_or(2 * k + 3);
    let f = n.saturating_sub(1) / 2;
    if f < k {
        return Err(SweepError::BudgetTooLarge { n, f, k });
    }
    let mut scenario = Scenario {
        protocol,
        n,
        f,
        d,
        delay_model: DelaySpec::Uniform { d_min: 1, seed },
        crashes: Vec::new(),
        client_script: None,
        adversary: None,
        horizon: None,
        outputs: None,
    };

    if k > 0 {
        if protocol == Protocol::Tsaso {
            return Err(SweepError::TsasoChains);
        }
        let chains = staggered_chains(k);
        let need: usize = chains.iter().map(Vec::len).sum();
        if need > n {
            return Err(SweepError::ChainsDontFit { k, need, n });
        }
        scenario.adversary = Some(Adversary::FailureChain { chains });
        return Ok(scenario);
    }

    let script = match protocol {
        Protocol::Ela => (1..=n as u32)
            .map(|j| ScriptLine {
                t: 0,
                node: j,
                op: ScenarioOp::Start {
                    values: vec![format!("v{j}")],
                },
            })
            .collect(),
        _ => {
            // Alternating update/read waves: every node runs its i-th
            // operation at the same time, far enough apart that each
            // finishes before the node's next one starts.
            let gap = 80 * d;
            let mut lines = Vec::new();
            for j in 1..=n as u32 {
                for i in 0..ops_per_node {
                    let op = if i % 2 == 0 {
                        ScenarioOp::Update {
                            payload: format!("p{j}i{i}"),
                        }
                    } else if protocol == Protocol::Uqsm {
                        ScenarioOp::Query
                    } else {
                        ScenarioOp::Scan
                    };
                    lines.push(ScriptLine {
                        t: i as u64 * gap,
                        node: j,
                        op,
                    });
                }
            }
            lines
        }
    };
    scenario.client_script = Some(script);
    Ok(scenario)
}

/// Run the whole grid. Cells execute independently (optionally on
/// `parallel` threads); the first failing cell stops scheduling and is
/// returned with its scenario.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput, SweepError> {
    let n_slots: Vec<Option<usize>> = if spec.n_values.is_empty() {
        vec![None]
    } else {
        spec.n_values.iter().copied().map(Some).collect()
    };
    let mut cells = Vec::new();
    for &n in &n_slots {
        for &k in &spec.k_values {
            for seed in 0..spec.seeds {
                cells.push((n, k, seed));
            }
        }
    }

    // Build all scenarios up front so grid-shape errors surface before any
    // simulation runs.
    let scenarios: Vec<Scenario> = cells
        .iter()
        .map(|&(n, k, seed)| cell_scenario(spec.protocol, n, k, seed, spec.ops_per_node, spec.d))
        .collect::<Result<_, _>>()?;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<(usize, SweepRow)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<(usize, SweepFailure)>> = Mutex::new(None);
    let run_error: Mutex<Option<SweepError>> = Mutex::new(None);

    let worker = || {
        loop {
            if abort.load(Ordering::Relaxed) {
                return;
            }
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= cells.len() {
                return;
            }
            let (_, k, seed) = cells[i];
            let scenario = &scenarios[i];
            match run_scenario(scenario, None) {
                Ok((_, report)) => {
                    let row = SweepRow {
                        n: report.n,
                        f: report.f,
                        k,
                        seed,
                        ops: report.metrics.completed_ops,
                        total_rounds: report.metrics.total_rounds,
                        amortized_rounds: report.metrics.amortized_rounds,
                        max_op_rounds: report.metrics.max_op_rounds,
                        messages: report.metrics.messages,
                        checks_passed: report.checks_passed,
                    };
                    let code = report.exit_code();
                    results.lock().unwrap().push((i, row.clone()));
                    if code != 0 {
                        let mut slot = failure.lock().unwrap();
                        if slot.as_ref().is_none_or(|(j, _)| *j > i) {
                            *slot = Some((
                                i,
                                SweepFailure {
                                    row,
                                    scenario: scenario.clone(),
                                    exit_code: code,
                                },
                            ));
                        }
                        abort.store(true, Ordering::Relaxed);
                    }
                }
                Err(e) => {
                    let mut slot = run_error.lock().unwrap();
                    if slot.is_none() {
                        *slot = Some(e.into());
                    }
                    abort.store(true, Ordering::Relaxed);
                }
            }
        }
    };

    let workers = spec.parallel.max(1).min(cells.len().max(1));
    if workers <= 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(worker);
            }
        });
    }

    if let Some(e) = run_error.into_inner().unwrap() {
        return Err(e);
    }
    let mut rows = results.into_inner().unwrap();
    rows.sort_by_key(|(i, _)| *i);
    Ok(SweepOutput {
        rows: rows.into_iter().map(|(_, row)| row).collect(),
        failure: failure.into_inner().unwrap().map(|(_, f)| f),
    })
}

pub const CSV_HEADER: &str =
    "n,f,k,seed,ops,totalRounds,amortizedRounds,maxOpRounds,messages,checksPassed";

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{},{},{}\n",
            r.n,
            r.f,
            r.k,
            r.seed,
            r.ops,
            r.total_rounds,
            r.amortized_rounds,
            r.max_op_rounds,
            r.messages,
            r.checks_passed
        ));
    }
    out
}

/// One JSON object per row, newline-delimited — same fields as the CSV.
pub fn rows_to_json(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}
