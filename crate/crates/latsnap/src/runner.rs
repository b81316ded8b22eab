//! Run one compiled scenario, check the trace, and package the results.
//!
//! The runner owns the protocol dispatch: a scenario compiles to one of four
//! typed scripts, each runs against its automaton, and the matching checkers
//! grade the trace. Everything downstream — report JSON, NDJSON trace,
//! metrics, exit code — is protocol-agnostic.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use latsnap_core::acaso::{AcAutomaton, AcMsg, AcOp, AcResp};
use latsnap_core::ela::{ElaAutomaton, ElaMsg, ElaOp, ElaResp};
use latsnap_core::simnet::{
    rounds_between, run, EventKind, ExecutionTrace, RunError, RunOutcome, SimConfig, TraceEvent,
};
use latsnap_core::tsaso::{TsAutomaton, TsMsg, TsOp, TsResp};
use latsnap_core::uqsm::{UqAutomaton, UqOp, UqResp};
use latsnap_core::verify::{
    brute_force_linearizable, build_linearization, check_acaso_structure, check_ela_trace,
    history_from_acaso, history_from_tsaso, history_from_uqsm, round_metrics, validate_linearization,
    History, OracleError, RoundMetrics,
};

use crate::scenario::{Compiled, CompiledScript, Protocol, Scenario, ScenarioError};

/// Exit codes, kept in one place so the binary and the tests agree.
pub mod exit {
    /// Run completed and every check passed.
    pub const OK: i32 = 0;
    /// A checker found a violation, or the run got stuck.
    pub const CHECK_FAILED: i32 = 2;
    /// The scenario or configuration is invalid.
    pub const CONFIG: i32 = 3;
    /// The simulation hit its time horizon before quiescing.
    pub const HORIZON: i32 = 4;
}

/// What one run produced, ready for the report file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub protocol: Protocol,
    pub n: usize,
    pub f: usize,
    pub d: u64,
    pub outcome: RunOutcome,
    /// True iff `violations` is empty (a stuck run reports a liveness
    /// violation, so it also fails).
    pub checks_passed: bool,
    /// Each entry carries a `check` field naming the checker plus that
    /// checker's own violation data.
    pub violations: Vec<Value>,
    /// Result of the bounded linearizability search: absent when the
    /// history was too large to try, or the protocol has no such check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<bool>,
    pub metrics: RoundMetrics,
    /// Agreement runs only: rounds from each node's start to its decision,
    /// in node order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decide_rounds: Option<Vec<u64>>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.outcome == RunOutcome::HorizonExhausted {
            exit::HORIZON
        } else if !self.checks_passed {
            exit::CHECK_FAILED
        } else {
            exit::OK
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// The trace of one run, still typed by protocol.
#[derive(Debug, Clone)]
pub enum ProtocolTrace {
    Ela(ExecutionTrace<ElaMsg, ElaOp, ElaResp>),
    Acaso(ExecutionTrace<AcMsg, AcOp, AcResp>),
    Tsaso(ExecutionTrace<TsMsg, TsOp, TsResp>),
    Uqsm(ExecutionTrace<AcMsg, UqOp, UqResp>),
}

impl ProtocolTrace {
    pub fn protocol(&self) -> Protocol {
        match self {
            ProtocolTrace::Ela(_) => Protocol::Ela,
            ProtocolTrace::Acaso(_) => Protocol::Acaso,
            ProtocolTrace::Tsaso(_) => Protocol::Tsaso,
            ProtocolTrace::Uqsm(_) => Protocol::Uqsm,
        }
    }

    fn shape(&self) -> (usize, usize, u64, RunOutcome) {
        match self {
            ProtocolTrace::Ela(t) => (t.n, t.f, t.d, t.outcome.clone()),
            ProtocolTrace::Acaso(t) => (t.n, t.f, t.d, t.outcome.clone()),
            ProtocolTrace::Tsaso(t) => (t.n, t.f, t.d, t.outcome.clone()),
            ProtocolTrace::Uqsm(t) => (t.n, t.f, t.d, t.outcome.clone()),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
}

/// Compile and execute a scenario, then grade the trace.
pub fn run_scenario(
    scenario: &Scenario,
    seed: Option<u64>,
) -> Result<(ProtocolTrace, Report), RunnerError> {
    let Compiled { config, script } = scenario.compile(seed)?;
    let trace = execute(&config, script)?;
    let report = grade(&trace);
    Ok((trace, report))
}

fn execute(config: &SimConfig, script: CompiledScript) -> Result<ProtocolTrace, RunError> {
    let (n, f) = (config.n, config.f);
    Ok(match script {
        CompiledScript::Ela(s) => {
            ProtocolTrace::Ela(run(config, |j| ElaAutomaton::new(j, n, f), &s)?.trace)
        }
        CompiledScript::Acaso(s) => {
            ProtocolTrace::Acaso(run(config, |j| AcAutomaton::new(j, n, f), &s)?.trace)
        }
        CompiledScript::Tsaso(s) => {
            ProtocolTrace::Tsaso(run(config, |j| TsAutomaton::new(j, n, f), &s)?.trace)
        }
        CompiledScript::Uqsm(s) => {
            ProtocolTrace::Uqsm(run(config, |j| UqAutomaton::new(j, n, f), &s)?.trace)
        }
    })
}

/// Run every checker that applies to the trace's protocol and fold the
/// findings into a report. Checks run even on horizon-exhausted traces —
/// a truncated prefix must still be safe.
pub fn grade(trace: &ProtocolTrace) -> Report {
    let (n, f, d, outcome) = trace.shape();
    let mut violations = Vec::new();
    let mut oracle = None;
    let mut decide_rounds = None;

    if let RunOutcome::Stuck { nodes } = &outcome {
        violations.push(json!({ "check": "liveness", "stuckNodes": nodes }));
    }

    let metrics = match trace {
        ProtocolTrace::Ela(t) => {
            for v in check_ela_trace(t).violations {
                violations.push(tagged("agreement", &v));
            }
            decide_rounds = Some(ela_decide_rounds(t));
            round_metrics(t)
        }
        ProtocolTrace::Acaso(t) => {
            for v in check_acaso_structure(t).violations {
                violations.push(tagged("structure", &v));
            }
            let h = history_from_acaso(t);
            check_linearizability(&h, &mut violations, &mut oracle);
            round_metrics(t)
        }
        ProtocolTrace::Tsaso(t) => {
            let h = history_from_tsaso(t);
            check_linearizability(&h, &mut violations, &mut oracle);
            round_metrics(t)
        }
        ProtocolTrace::Uqsm(t) => {
            let h = history_from_uqsm(t);
            check_linearizability(&h, &mut violations, &mut oracle);
            round_metrics(t)
        }
    };

    Report {
        protocol: trace.protocol(),
        n,
        f,
        d,
        outcome,
        checks_passed: violations.is_empty(),
        violations,
        oracle,
        metrics,
        decide_rounds,
    }
}

fn tagged<T: Serialize>(check: &str, v: &T) -> Value {
    let mut value = serde_json::to_value(v).expect("violation serializes");
    if let Value::Object(map) = &mut value {
        map.insert("check".into(), Value::String(check.into()));
        value
    } else {
        json!({ "check": check, "detail": value })
    }
}

/// Witness first (scales to any history), then the exhaustive search when
/// the history is small enough for it.
fn check_linearizability(h: &History, violations: &mut Vec<Value>, oracle: &mut Option<bool>) {
    match build_linearization(h) {
        Ok(lin) => {
            if !validate_linearization(h, &lin) {
                violations.push(json!({
                    "check": "witness",
                    "error": "constructedOrderFailsReplay",
                }));
            }
        }
        Err(e) => violations.push(tagged("witness", &e)),
    }
    match brute_force_linearizable(h) {
        Ok(ok) => {
            *oracle = Some(ok);
            if !ok {
                violations.push(json!({
                    "check": "oracle",
                    "error": "noLinearizationExists",
                }));
            }
        }
        Err(OracleError::TooLarge { .. }) => {}
    }
}

/// Rounds from each node's agreement start to its decision, for nodes that
/// decided, in node order.
fn ela_decide_rounds(trace: &ExecutionTrace<ElaMsg, ElaOp, ElaResp>) -> Vec<u64> {
    let mut starts = std::collections::BTreeMap::new();
    let mut rounds = Vec::new();
    for e in &trace.events {
        match &e.kind {
            EventKind::Invoke { node, .. } => {
                starts.entry(*node).or_insert(e.t);
            }
            EventKind::Decide { node, .. } => {
                if let Some(&t0) = starts.get(node) {
                    rounds.push(rounds_between(trace.d, t0, e.t));
                }
            }
            _ => {}
        }
    }
    rounds
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

/// First line of a trace file: enough context to re-type the events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TraceMeta {
    protocol: Protocol,
    n: usize,
    f: usize,
    d: u64,
    outcome: RunOutcome,
}

/// Serialize a trace as NDJSON: a meta line, then one event per line.
/// The encoding is deterministic, so identical runs produce identical bytes.
pub fn trace_to_ndjson(trace: &ProtocolTrace) -> String {
    let (n, f, d, outcome) = trace.shape();
    let meta = TraceMeta {
        protocol: trace.protocol(),
        n,
        f,
        d,
        outcome,
    };
    let mut out = String::new();
    out.push_str(&json!({ "meta": meta }).to_string());
    out.push('\n');
    fn push_events<M: Serialize, O: Serialize, R: Serialize>(
        out: &mut String,
        events: &[TraceEvent<M, O, R>],
    ) {
        for e in events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
    }
    match trace {
        ProtocolTrace::Ela(t) => push_events(&mut out, &t.events),
        ProtocolTrace::Acaso(t) => push_events(&mut out, &t.events),
        ProtocolTrace::Tsaso(t) => push_events(&mut out, &t.events),
        ProtocolTrace::Uqsm(t) => push_events(&mut out, &t.events),
    }
    out
}

#[derive(Debug, Error)]
pub enum TraceReadError {
    #[error("trace file is empty")]
    Empty,
    #[error("trace line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace meta line is malformed: {0}")]
    BadMeta(serde_json::Error),
}

/// Parse a trace file written by [`trace_to_ndjson`] back into a typed
/// trace, so the checkers can re-grade it.
pub fn trace_from_ndjson(text: &str) -> Result<ProtocolTrace, TraceReadError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(TraceReadError::Empty)?;

    #[derive(Deserialize)]
    struct MetaLine {
        meta: TraceMeta,
    }
    let MetaLine { meta } =
        serde_json::from_str(first).map_err(TraceReadError::BadMeta)?;

    macro_rules! parse_into {
        ($variant:ident) => {{
            let mut events = Vec::new();
            for (i, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                events.push(serde_json::from_str(line).map_err(|source| {
                    TraceReadError::Malformed { line: i + 1, source }
                })?);
            }
            ProtocolTrace::$variant(ExecutionTrace {
                n: meta.n,
                f: meta.f,
                d: meta.d,
                events,
                outcome: meta.outcome,
            })
        }};
    }

    Ok(match meta.protocol {
        Protocol::Ela => parse_into!(Ela),
        Protocol::Acaso => parse_into!(Acaso),
        Protocol::Tsaso => parse_into!(Tsaso),
        Protocol::Uqsm => parse_into!(Uqsm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Adversary, DelaySpec, ScenarioOp, ScriptLine};

    fn scenario(protocol: Protocol, n: usize, f: usize) -> Scenario {
        Scenario {
            protocol,
            n,
            f,
            d: 100,
            delay_model: DelaySpec::Fixed,
            crashes: Vec::new(),
            client_script: None,
            adversary: None,
            horizon: None,
            outputs: None,
        }
    }

    #[test]
    fn crash_free_agreement_run_passes_all_checks() {
        let mut s = scenario(Protocol::Ela, 3, 1);
        s.client_script = Some(
            (1..=3)
                .map(|j| ScriptLine {
                    t: 0,
                    node: j,
                    op: ScenarioOp::Start {
                        values: vec![format!("v{j}")],
                    },
                })
                .collect(),
        );
        let (_, report) = run_scenario(&s, None).unwrap();
        assert_eq!(report.outcome, RunOutcome::Quiescent);
        assert!(report.checks_passed, "{:?}", report.violations);
        assert_eq!(report.decide_rounds, Some(vec![2, 2, 2]));
        assert_eq!(report.exit_code(), exit::OK);
    }

    #[test]
    fn snapshot_run_reports_oracle_and_witness_agreement() {
        let mut s = scenario(Protocol::Acaso, 3, 1);
        s.client_script = Some(vec![
            ScriptLine {
                t: 0,
                node: 1,
                op: ScenarioOp::Update { payload: "a".into() },
            },
            ScriptLine {
                t: 2_000,
                node: 2,
                op: ScenarioOp::Scan,
            },
        ]);
        let (_, report) = run_scenario(&s, None).unwrap();
        assert!(report.checks_passed, "{:?}", report.violations);
        assert_eq!(report.oracle, Some(true));
        assert!(report.metrics.completed_ops >= 2);
    }

    #[test]
    fn trace_roundtrips_through_ndjson() {
        let mut s = scenario(Protocol::Uqsm, 3, 1);
        s.client_script = Some(vec![
            ScriptLine {
                t: 0,
                node: 1,
                op: ScenarioOp::Update { payload: "x".into() },
            },
            ScriptLine {
                t: 2_000,
                node: 3,
                op: ScenarioOp::Query,
            },
        ]);
        let (trace, report) = run_scenario(&s, None).unwrap();
        let text = trace_to_ndjson(&trace);
        let back = trace_from_ndjson(&text).unwrap();
        assert_eq!(trace_to_ndjson(&back), text);
        let regraded = grade(&back);
        assert_eq!(regraded, report);
    }

    #[test]
    fn randomized_vector_run_is_graded() {
        let mut s = scenario(Protocol::Tsaso, 3, 1);
        s.adversary = Some(Adversary::Randomized {
            seed: 11,
            op_count: 4,
            crash_prob: 0.0,
        });
        let (_, report) = run_scenario(&s, None).unwrap();
        assert!(report.checks_passed, "{:?}", report.violations);
        assert_eq!(report.oracle, Some(true));
    }

    #[test]
    fn horizon_exhaustion_maps_to_its_exit_code() {
        let mut s = scenario(Protocol::Acaso, 3, 1);
        s.client_script = Some(vec![ScriptLine {
            t: 0,
            node: 1,
            op: ScenarioOp::Update { payload: "a".into() },
        }]);
        s.horizon = Some(1); // one round: the update cannot finish
        let (_, report) = run_scenario(&s, None).unwrap();
        assert_eq!(report.outcome, RunOutcome::HorizonExhausted);
        assert_eq!(report.exit_code(), exit::HORIZON);
    }
}
