//! Scenario files: the JSON description of one simulation — protocol,
//! system size, delays, crash schedule, and either an explicit client
//! script or an adversary that generates one deterministically.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use latsnap_core::acaso::AcOp;
use latsnap_core::ela::ElaOp;
use latsnap_core::lattice::{NodeId, Payload, TaggedValue, Timestamp, View};
use latsnap_core::simnet::{
    make_failure_chain_schedule, value_broadcast_label, ConfigError, CrashSpec, CrashTrigger,
    DelayModel, ScriptEntry, SimConfig, SimTime, SplitMix64,
};
use latsnap_core::tsaso::TsOp;
use latsnap_core::uqsm::UqOp;

/// Which protocol a scenario drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ela,
    Acaso,
    Tsaso,
    Uqsm,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Ela => "ela",
            Protocol::Acaso => "acaso",
            Protocol::Tsaso => "tsaso",
            Protocol::Uqsm => "uqsm",
        }
    }
}

/// Message delay model, scenario-file shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum DelaySpec {
    /// Every hop takes exactly D.
    #[default]
    Fixed,
    /// Seeded uniform delay in `[dMin, D]`.
    #[serde(rename_all = "camelCase")]
    Uniform { d_min: u64, seed: u64 },
}

impl DelaySpec {
    fn compile(&self, seed_override: Option<u64>) -> DelayModel {
        match self {
            DelaySpec::Fixed => DelayModel::Fixed,
            DelaySpec::Uniform { d_min, seed } => DelayModel::Uniform {
                d_min: *d_min,
                seed: seed_override.unwrap_or(*seed),
            },
        }
    }
}

/// Crash trigger, scenario-file shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TriggerSpec {
    AtTime { t: SimTime },
    #[serde(rename_all = "camelCase")]
    DuringBroadcast {
        label: String,
        after_sends: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        recipient_order: Option<Vec<u32>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashEntry {
    pub node: u32,
    pub trigger: TriggerSpec,
}

impl CrashEntry {
    fn compile(&self) -> CrashSpec {
        CrashSpec {
            node: NodeId(self.node),
            trigger: match &self.trigger {
                TriggerSpec::AtTime { t } => CrashTrigger::AtTime(*t),
                TriggerSpec::DuringBroadcast {
                    label,
                    after_sends,
                    recipient_order,
                } => CrashTrigger::DuringBroadcast {
                    label: label.clone(),
                    after_sends: *after_sends,
                    recipient_order: recipient_order
                        .as_ref()
                        .map(|o| o.iter().map(|&j| NodeId(j)).collect()),
                },
            },
        }
    }
}

/// One scripted client call. Payloads are written as labels; the runner
/// wraps them into tagged values where the protocol requires it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ScenarioOp {
    /// Agreement input (ela only). Each value becomes one lattice element.
    Start { values: Vec<String> },
    /// Snapshot write (acaso, tsaso, uqsm).
    Update { payload: String },
    /// Snapshot read (acaso, tsaso).
    Scan,
    /// State-machine read (uqsm).
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub t: SimTime,
    pub node: u32,
    pub op: ScenarioOp,
}

/// A script generator in place of an explicit client script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Adversary {
    /// Failure chains: each chain's head introduces a value that is relayed
    /// node to node, every carrier crashing after one send. Needs a
    /// protocol that relays values (ela, acaso, uqsm).
    FailureChain { chains: Vec<Vec<u32>> },
    /// Seeded random workload with random crash injection.
    #[serde(rename_all = "camelCase")]
    Randomized {
        seed: u64,
        op_count: usize,
        crash_prob: f64,
    },
}

/// Where to write a run's artifacts, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

fn default_d() -> u64 {
    100
}

/// One simulation, as described on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub protocol: Protocol,
    pub n: usize,
    pub f: usize,
    /// Round length D in microticks; defaults to 100.
    #[serde(default = "default_d")]
    pub d: u64,
    #[serde(default)]
    pub delay_model: DelaySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crashes: Vec<CrashEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_script: Option<Vec<ScriptLine>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<Adversary>,
    /// Time limit in rounds (multiples of D). Defaults to the simulator's
    /// horizon; the LATSNAP_HORIZON environment variable overrides both.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Outputs>,
}

/// Problems with a scenario file, distinct from mid-run failures: these all
/// map to the configuration-error exit code.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("scenario needs exactly one of clientScript or adversary")]
    ScriptOrAdversary,
    #[error("operation `{op}` is not valid for protocol {protocol}")]
    WrongProtocolOp { protocol: &'static str, op: String },
    #[error("script entry for node {0} is out of range")]
    UnknownScriptNode(u32),
    #[error("failure chains are not supported for {0}: it does not relay values")]
    ChainsUnsupported(&'static str),
    #[error("failure chains share node {0}")]
    ChainsOverlap(u32),
    #[error("crashProb {0} is not a probability")]
    BadProbability(f64),
}

/// A scenario compiled against one protocol: the simulator configuration
/// plus the concrete typed script.
#[derive(Debug, Clone)]
pub enum CompiledScript {
    Ela(Vec<ScriptEntry<ElaOp>>),
    Acaso(Vec<ScriptEntry<AcOp>>),
    Tsaso(Vec<ScriptEntry<TsOp>>),
    Uqsm(Vec<ScriptEntry<UqOp>>),
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub config: SimConfig,
    pub script: CompiledScript,
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Resolve the effective horizon in microticks: environment override
    /// first, then the scenario's own value, then the simulator default.
    fn horizon_microticks(&self) -> Option<SimTime> {
        if let Ok(v) = std::env::var("LATSNAP_HORIZON") {
            if let Ok(rounds) = v.trim().parse::<u64>() {
                return Some(rounds.saturating_mul(self.d));
            }
        }
        self.horizon.map(|rounds| rounds.saturating_mul(self.d))
    }

    /// Compile into a runnable configuration and typed script. `seed`
    /// overrides both the delay-model seed and a randomized adversary's
    /// seed, so one flag replays a whole family.
    pub fn compile(&self, seed: Option<u64>) -> Result<Compiled, ScenarioError> {
        let mut config = SimConfig {
            n: self.n,
            f: self.f,
            d: self.d,
            delay: self.delay_model.compile(seed),
            crashes: self.crashes.iter().map(CrashEntry::compile).collect(),
            horizon: self.horizon_microticks(),
        };

        let script = match (&self.client_script, &self.adversary) {
            (Some(lines), None) => self.compile_script(lines)?,
            (None, Some(adv)) => self.compile_adversary(adv, seed, &mut config)?,
            _ => return Err(ScenarioError::ScriptOrAdversary),
        };

        // Surface configuration problems now rather than at run time.
        config.validate()?;
        Ok(Compiled { config, script })
    }

    fn check_node(&self, node: u32) -> Result<NodeId, ScenarioError> {
        if node == 0 || node as usize > self.n {
            return Err(ScenarioError::UnknownScriptNode(node));
        }
        Ok(NodeId(node))
    }

    fn compile_script(&self, lines: &[ScriptLine]) -> Result<CompiledScript, ScenarioError> {
        let wrong = |op: &ScenarioOp| ScenarioError::WrongProtocolOp {
            protocol: self.protocol.name(),
            op: match op {
                ScenarioOp::Start { .. } => "start".into(),
                ScenarioOp::Update { .. } => "update".into(),
                ScenarioOp::Scan => "scan".into(),
                ScenarioOp::Query => "query".into(),
            },
        };
        match self.protocol {
            Protocol::Ela => {
                let mut out = Vec::new();
                for line in lines {
                    let node = self.check_node(line.node)?;
                    let ScenarioOp::Start { values } = &line.op else {
                        return Err(wrong(&line.op));
                    };
                    out.push(ScriptEntry {
                        t: line.t,
                        node,
                        op: ElaOp::Start {
                            input: ela_input(node, values),
                        },
                    });
                }
                Ok(CompiledScript::Ela(out))
            }
            Protocol::Acaso => {
                let mut out = Vec::new();
                for line in lines {
                    let node = self.check_node(line.node)?;
                    let op = match &line.op {
                        ScenarioOp::Update { payload } => AcOp::Update {
                            payload: Payload::label(payload),
                        },
                        ScenarioOp::Scan => AcOp::Scan,
                        other => return Err(wrong(other)),
                    };
                    out.push(ScriptEntry { t: line.t, node, op });
                }
                Ok(CompiledScript::Acaso(out))
            }
            Protocol::Tsaso => {
                let mut out = Vec::new();
                for line in lines {
                    let node = self.check_node(line.node)?;
                    let op = match &line.op {
                        ScenarioOp::Update { payload } => TsOp::Update {
                            payload: Payload::label(payload),
                        },
                        ScenarioOp::Scan => TsOp::Scan,
                        other => return Err(wrong(other)),
                    };
                    out.push(ScriptEntry { t: line.t, node, op });
                }
                Ok(CompiledScript::Tsaso(out))
            }
            Protocol::Uqsm => {
                let mut out = Vec::new();
                for line in lines {
                    let node = self.check_node(line.node)?;
                    let op = match &line.op {
                        ScenarioOp::Update { payload } => UqOp::Update {
                            payload: Payload::label(payload),
                        },
                        ScenarioOp::Query => UqOp::Query,
                        other => return Err(wrong(other)),
                    };
                    out.push(ScriptEntry { t: line.t, node, op });
                }
                Ok(CompiledScript::Uqsm(out))
            }
        }
    }

    fn compile_adversary(
        &self,
        adv: &Adversary,
        seed: Option<u64>,
        config: &mut SimConfig,
    ) -> Result<CompiledScript, ScenarioError> {
        match adv {
            Adversary::FailureChain { chains } => self.compile_chains(chains, config),
            Adversary::Randomized {
                seed: base_seed,
                op_count,
                crash_prob,
            } => {
                if !(0.0..=1.0).contains(crash_prob) {
                    return Err(ScenarioError::BadProbability(*crash_prob));
                }
                let seed = seed.unwrap_or(*base_seed);
                Ok(self.compile_randomized(seed, *op_count, *crash_prob, config))
            }
        }
    }

    fn compile_chains(
        &self,
        chains: &[Vec<u32>],
        config: &mut SimConfig,
    ) -> Result<CompiledScript, ScenarioError> {
        let chains: Vec<Vec<NodeId>> = chains
            .iter()
            .map(|c| c.iter().map(|&j| self.check_node(j)).collect())
            .collect::<Result<_, _>>()?;
        // Chains must be node-disjoint: a node that carries two chains (or
        // tails one and carries another) breaks both exposure schedules.
        let mut carriers = BTreeSet::new();
        for j in chains.iter().flat_map(|c| c.iter().copied()) {
            if !carriers.insert(j) {
                return Err(ScenarioError::ChainsOverlap(j.0));
            }
        }

        match self.protocol {
            Protocol::Ela => {
                // Chain heads propose the relayed value; everyone else
                // proposes their own, so decisions have content to join.
                let mut script = Vec::new();
                for (idx, chain) in chains.iter().enumerate() {
                    let head = chain[0];
                    let value = chain_value(idx, head, 0);
                    config.crashes.extend(make_failure_chain_schedule(
                        self.n, self.f, chain, &value,
                    )?);
                    script.push(ScriptEntry {
                        t: 0,
                        node: head,
                        op: ElaOp::Start {
                            input: View::singleton(value),
                        },
                    });
                }
                for j in NodeId::all(self.n) {
                    let head_of_some = chains.iter().any(|c| c[0] == j);
                    if !head_of_some {
                        script.push(ScriptEntry {
                            t: 0,
                            node: j,
                            op: ElaOp::Start {
                                input: ela_input(j, &[format!("v{j}")]),
                            },
                        });
                    }
                }
                Ok(CompiledScript::Ela(script))
            }
            Protocol::Acaso | Protocol::Uqsm => {
                // Chain heads write; concurrent first updates all read tag 0
                // and stamp their value <1, head>, which makes the broadcast
                // label — and so the crash trigger — predictable.
                let mut script_u = Vec::new();
                for (idx, chain) in chains.iter().enumerate() {
                    let head = chain[0];
                    let value = chain_value(idx, head, 1);
                    config.crashes.extend(make_failure_chain_schedule(
                        self.n, self.f, chain, &value,
                    )?);
                    script_u.push((0, head.0, Some(value.payload.label)));
                }
                // Survivors read after the chains have started relaying.
                for j in NodeId::all(self.n) {
                    if !carriers.contains(&j) || chains.iter().any(|c| *c.last().unwrap() == j) {
                        script_u.push((2 * self.d, j.0, None));
                    }
                }
                let to_entries = |mk_update: fn(String) -> ScenarioOp,
                                  mk_read: ScenarioOp| {
                    script_u
                        .iter()
                        .map(|(t, node, label)| ScriptLine {
                            t: *t,
                            node: *node,
                            op: match label {
                                Some(l) => mk_update(l.clone()),
                                None => mk_read.clone(),
                            },
                        })
                        .collect::<Vec<_>>()
                };
                match self.protocol {
                    Protocol::Acaso => self.compile_script(&to_entries(
                        |payload| ScenarioOp::Update { payload },
                        ScenarioOp::Scan,
                    )),
                    _ => self.compile_script(&to_entries(
                        |payload| ScenarioOp::Update { payload },
                        ScenarioOp::Query,
                    )),
                }
            }
            Protocol::Tsaso => Err(ScenarioError::ChainsUnsupported(self.protocol.name())),
        }
    }

    fn compile_randomized(
        &self,
        seed: u64,
        op_count: usize,
        crash_prob: f64,
        config: &mut SimConfig,
    ) -> CompiledScript {
        let mut rng = SplitMix64::new(seed);
        let d = self.d;

        // Crash schedule first: each node draws independently, capped at f,
        // in shuffled order so low ids are not privileged.
        let mut order: Vec<NodeId> = NodeId::all(self.n).collect();
        shuffle(&mut order, &mut rng);
        let mut crashed = Vec::new();
        for j in order {
            if crashed.len() < self.f && rng.chance(crash_prob) {
                crashed.push(j);
            }
        }

        if self.protocol == Protocol::Ela {
            // Single-shot: everyone starts at 0 with their own value;
            // crashes are timed or cut one node's own broadcast short.
            for &j in &crashed {
                let trigger = if rng.chance(0.5) {
                    CrashTrigger::AtTime(rng.in_range(0, 4 * d))
                } else {
                    let mut recipients: Vec<NodeId> = NodeId::all(self.n).collect();
                    shuffle(&mut recipients, &mut rng);
                    CrashTrigger::DuringBroadcast {
                        label: value_broadcast_label([&own_value(j)]),
                        after_sends: rng.in_range(0, self.n as u64 - 1) as usize,
                        recipient_order: Some(recipients),
                    }
                };
                config.crashes.push(CrashSpec { node: j, trigger });
            }
            let script = NodeId::all(self.n)
                .map(|j| ScriptEntry {
                    t: 0,
                    node: j,
                    op: ElaOp::Start {
                        input: View::singleton(own_value(j)),
                    },
                })
                .collect();
            return CompiledScript::Ela(script);
        }

        for &j in &crashed {
            config.crashes.push(CrashSpec {
                node: j,
                trigger: CrashTrigger::AtTime(rng.in_range(0, 60 * d)),
            });
        }

        // Random ops: sequential per node with a generous completion gap so
        // the per-node one-op-at-a-time rule holds; concurrency comes from
        // different nodes overlapping. A node's first op is always an
        // update, so reads have something to see and the vector protocol's
        // borrow path has published views to borrow.
        let mut node_free = vec![0u64; self.n];
        let mut node_ops = vec![0usize; self.n];
        let mut lines = Vec::new();
        for i in 0..op_count {
            let j = NodeId(rng.in_range(1, self.n as u64) as u32);
            let t = node_free[j.idx()] + rng.in_range(0, 2 * d);
            node_free[j.idx()] = t + 80 * d;
            let first = node_ops[j.idx()] == 0;
            node_ops[j.idx()] += 1;
            let op = if first || rng.chance(0.5) {
                ScenarioOp::Update {
                    payload: format!("p{j}o{i}"),
                }
            } else if self.protocol == Protocol::Uqsm {
                ScenarioOp::Query
            } else {
                ScenarioOp::Scan
            };
            lines.push(ScriptLine { t, node: j.0, op });
        }
        self.compile_script(&lines)
            .expect("generated script is protocol-consistent")
    }
}

/// Agreement input for a node: each label becomes one element stamped
/// `<0, node>` (agreement never interprets the stamp, it only needs
/// distinct identities).
fn ela_input(node: NodeId, values: &[String]) -> View {
    View::from_values(
        values
            .iter()
            .map(|l| TaggedValue::new(Payload::label(l), Timestamp::new(0, node))),
    )
}

/// The value a randomized-adversary node proposes for itself.
fn own_value(node: NodeId) -> TaggedValue {
    TaggedValue::new(Payload::label(&format!("v{node}")), Timestamp::new(0, node))
}

/// The value chain `idx` relays, stamped with the tag the protocol will
/// assign (0 for agreement inputs, 1 for a first concurrent update).
fn chain_value(idx: usize, head: NodeId, tag: u64) -> TaggedValue {
    TaggedValue::new(
        Payload::label(&format!("chain{idx}")),
        Timestamp::new(tag, head),
    )
}

fn shuffle(items: &mut [NodeId], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.in_range(0, i as u64) as usize;
        items.swap(i, j);
    }
}

/// Staggered failure-chain lengths that spend a `k`-crash budget the way
/// that delays agreement longest: exposures at intervals 1, 3, 5, … cost
/// 1, 3, 5, … crashes, so `j = ⌊√k⌋` chains of lengths 2, 4, …, 2j, with
/// any remainder extending the longest chain.
pub fn staggered_chain_lengths(k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let j = (k as f64).sqrt().floor() as usize;
    let mut lengths: Vec<usize> = (1..=j).map(|i| 2 * i).collect();
    let spent: usize = lengths.iter().map(|l| l - 1).sum();
    *lengths.last_mut().unwrap() += k - spent;
    lengths
}

/// Allocate concrete disjoint chains over nodes `1..` for a `k`-crash
/// budget. Returns the chain node lists; the caller picks `n` large enough
/// (`sum(lengths) ≤ n`, crashes `= k ≤ f`).
pub fn staggered_chains(k: usize) -> Vec<Vec<u32>> {
    let mut next = 1u32;
    staggered_chain_lengths(k)
        .into_iter()
        .map(|len| {
            let chain: Vec<u32> = (next..next + len as u32).collect();
            next += len as u32;
            chain
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(protocol: Protocol, n: usize, f: usize) -> Scenario {
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
    fn scenario_roundtrips_through_json() {
        let mut s = base(Protocol::Acaso, 3, 1);
        s.client_script = Some(vec![
            ScriptLine {
                t: 0,
                node: 1,
                op: ScenarioOp::Update { payload: "a".into() },
            },
            ScriptLine {
                t: 500,
                node: 2,
                op: ScenarioOp::Scan,
            },
        ]);
        let json = s.to_json_pretty();
        assert_eq!(Scenario::from_json(&json).unwrap(), s);
    }

    #[test]
    fn needs_script_or_adversary_but_not_both() {
        let s = base(Protocol::Ela, 3, 1);
        assert!(matches!(
            s.compile(None),
            Err(ScenarioError::ScriptOrAdversary)
        ));

        let mut both = base(Protocol::Ela, 3, 1);
        both.client_script = Some(Vec::new());
        both.adversary = Some(Adversary::Randomized {
            seed: 1,
            op_count: 1,
            crash_prob: 0.0,
        });
        assert!(matches!(
            both.compile(None),
            Err(ScenarioError::ScriptOrAdversary)
        ));
    }

    #[test]
    fn unsound_quorum_is_a_config_error() {
        let mut s = base(Protocol::Ela, 4, 2);
        s.client_script = Some(Vec::new());
        assert!(matches!(s.compile(None), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn ops_are_checked_against_the_protocol() {
        let mut s = base(Protocol::Ela, 3, 1);
        s.client_script = Some(vec![ScriptLine {
            t: 0,
            node: 1,
            op: ScenarioOp::Scan,
        }]);
        assert!(matches!(
            s.compile(None),
            Err(ScenarioError::WrongProtocolOp { .. })
        ));

        let mut q = base(Protocol::Acaso, 3, 1);
        q.client_script = Some(vec![ScriptLine {
            t: 0,
            node: 1,
            op: ScenarioOp::Query,
        }]);
        assert!(matches!(
            q.compile(None),
            Err(ScenarioError::WrongProtocolOp { .. })
        ));
    }

    #[test]
    fn chain_adversary_expands_to_crashes_and_starts() {
        let mut s = base(Protocol::Ela, 5, 2);
        s.adversary = Some(Adversary::FailureChain {
            chains: vec![vec![1, 2, 3]],
        });
        let compiled = s.compile(None).unwrap();
        assert_eq!(compiled.config.crashes.len(), 2);
        let CompiledScript::Ela(script) = compiled.script else {
            panic!("expected agreement script");
        };
        assert_eq!(script.len(), 5);
    }

    #[test]
    fn chains_are_rejected_for_the_vector_protocol() {
        let mut s = base(Protocol::Tsaso, 5, 2);
        s.adversary = Some(Adversary::FailureChain {
            chains: vec![vec![1, 2]],
        });
        assert!(matches!(
            s.compile(None),
            Err(ScenarioError::ChainsUnsupported(_))
        ));
    }

    #[test]
    fn randomized_adversary_is_deterministic_per_seed() {
        let mut s = base(Protocol::Acaso, 3, 1);
        s.adversary = Some(Adversary::Randomized {
            seed: 7,
            op_count: 6,
            crash_prob: 0.3,
        });
        let a = s.compile(None).unwrap();
        let b = s.compile(None).unwrap();
        let (CompiledScript::Acaso(sa), CompiledScript::Acaso(sb)) = (a.script, b.script) else {
            panic!("expected snapshot scripts");
        };
        assert_eq!(sa.len(), sb.len());
        assert_eq!(a.config.crashes, b.config.crashes);
        for (x, y) in sa.iter().zip(sb.iter()) {
            assert_eq!((x.t, x.node), (y.t, y.node));
        }
    }

    #[test]
    fn seed_flag_overrides_the_adversary_seed() {
        let mut s = base(Protocol::Acaso, 3, 1);
        s.adversary = Some(Adversary::Randomized {
            seed: 7,
            op_count: 6,
            crash_prob: 0.5,
        });
        let a = s.compile(Some(7)).unwrap();
        let b = s.compile(Some(8)).unwrap();
        let (CompiledScript::Acaso(sa), CompiledScript::Acaso(sb)) = (a.script, b.script) else {
            panic!("expected snapshot scripts");
        };
        // Different seeds shift times, nodes, or crash draws.
        let same = sa.len() == sb.len()
            && a.config.crashes == b.config.crashes
            && sa
                .iter()
                .zip(sb.iter())
                .all(|(x, y)| (x.t, x.node) == (y.t, y.node));
        assert!(!same);
    }

    #[test]
    fn staggered_lengths_spend_the_whole_budget() {
        assert_eq!(staggered_chain_lengths(0), Vec::<usize>::new());
        assert_eq!(staggered_chain_lengths(1), vec![2]);
        assert_eq!(staggered_chain_lengths(4), vec![2, 4]);
        assert_eq!(staggered_chain_lengths(5), vec![2, 5]);
        assert_eq!(staggered_chain_lengths(9), vec![2, 4, 6]);
        for k in 0..30 {
            let spent: usize = staggered_chain_lengths(k).iter().map(|l| l - 1).sum();
            assert_eq!(spent, k, "k = {k}");
        }
    }
}
