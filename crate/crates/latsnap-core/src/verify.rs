//! Trace checkers and metrics: lattice-agreement property validation, the
//! view-ordered linearization witness, an independent brute-force
//! linearizability oracle, and round/message accounting.
//!
//! The two linearizability paths are deliberately separate. The witness
//! builder orders operations by their *views* — the mechanism the snapshot
//! protocols are designed around — and scales to any history, but it trusts
//! that views exist and are comparable. The brute-force oracle knows nothing
//! about views: it searches all interleavings against the sequential object
//! semantics, so it can contradict the witness if the protocol lies. Small
//! histories are run through both.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::Serialize;

use crate::acaso::{AcMsg, AcOp, AcResp};
use crate::ela::{ElaMsg, ElaOp, ElaResp};
use crate::lattice::{
    JoinLattice, NodeId, Payload, Snapshot, Tag, TaggedValue, Timestamp, View,
};
use crate::simnet::{EventKind, ExecutionTrace, LocalNote, SimTime};
use crate::tsaso::{SnapVector, TsMsg, TsOp, TsResp};
use crate::uqsm::{UqOp, UqResp};

// ---------------------------------------------------------------------------
// Histories
// ---------------------------------------------------------------------------

/// What kind of operation a record is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum OpClass {
    Update,
    /// Returns a per-writer [`Snapshot`].
    Scan,
    /// Returns a grow-only payload set.
    Query,
}

/// The view an operation returned, in whichever shape its protocol uses:
/// a set of tagged values, or a per-writer newest-value vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum OpView {
    Values(View),
    Vector(SnapVector),
}

impl OpView {
    /// Containment in the view's own order. Views of different shapes never
    /// compare (mixing protocols in one history is a caller bug).
    pub fn leq(&self, other: &OpView) -> bool {
        match (self, other) {
            (OpView::Values(a), OpView::Values(b)) => a.leq(b),
            (OpView::Vector(a), OpView::Vector(b)) => a.leq(b),
            _ => false,
        }
    }

    pub fn comparable(&self, other: &OpView) -> bool {
        self.leq(other) || other.leq(self)
    }

    /// Does the view reflect this written value? A value vector reflects a
    /// value once it holds that writer's entry at the same or a newer
    /// timestamp; a value set must contain the value itself.
    pub fn includes(&self, v: &TaggedValue) -> bool {
        match self {
            OpView::Values(view) => view.contains(v),
            OpView::Vector(vec) => vec.get(v.ts.writer).is_some_and(|cur| v.ts <= cur.ts),
        }
    }

    /// A size measure that is strictly monotone under view inclusion, so
    /// sorting comparable views by weight sorts them by inclusion.
    pub fn weight(&self) -> u128 {
        match self {
            OpView::Values(view) => view.iter().count() as u128,
            OpView::Vector(vec) => vec.0.values().map(|v| v.ts.tag as u128).sum(),
        }
    }
}

/// One invocation as seen by the checkers. Fields are `None` where the
/// operation never got far enough to produce them (the node crashed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OperationRecord {
    pub node: NodeId,
    pub class: OpClass,
    pub invoke: SimTime,
    pub respond: Option<SimTime>,
    /// For updates: the tagged value written, known once the timestamp was
    /// assigned even if the writer then crashed.
    pub value: Option<TaggedValue>,
    /// For completed scans: the returned snapshot.
    pub snap: Option<Snapshot>,
    /// For completed queries: the returned payload set.
    pub state: Option<BTreeSet<Payload>>,
    /// For completed operations: the view the response was derived from.
    pub view: Option<OpView>,
    pub tag: Option<Tag>,
    pub direct: Option<bool>,
}

impl OperationRecord {
    pub fn completed(&self) -> bool {
        self.respond.is_some()
    }

    /// Real-time precedence: this operation responded strictly before the
    /// other was invoked.
    pub fn precedes(&self, other: &OperationRecord) -> bool {
        self.respond.is_some_and(|r| r < other.invoke)
    }
}

/// An operation history extracted from a trace: per node sequential, some
/// records unresponded where nodes crashed mid-operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct History {
    pub n: usize,
    /// Pre-existing register contents (all empty for the protocols here,
    /// kept explicit so the sequential replay has one source of truth).
    pub initial: Snapshot,
    pub ops: Vec<OperationRecord>,
}

impl History {
    pub fn empty(n: usize) -> Self {
        History {
            n,
            initial: Snapshot::empty(n),
            ops: Vec::new(),
        }
    }

    pub fn completed_count(&self) -> usize {
        self.ops.iter().filter(|op| op.completed()).count()
    }
}

/// Incrementally pairs invocations with responses while walking a trace.
struct HistoryBuilder {
    history: History,
    open: BTreeMap<NodeId, usize>,
}

impl HistoryBuilder {
    fn new(n: usize) -> Self {
        HistoryBuilder {
            history: History::empty(n),
            open: BTreeMap::new(),
        }
    }

    fn invoke(&mut self, t: SimTime, node: NodeId, class: OpClass) {
        debug_assert!(
            !self.open.contains_key(&node),
            "node {node} invoked with an operation still open"
        );
        self.open.insert(node, self.history.ops.len());
        self.history.ops.push(OperationRecord {
            node,
            class,
            invoke: t,
            respond: None,
            value: None,
            snap: None,
            state: None,
            view: None,
            tag: None,
            direct: None,
        });
    }

    fn value_introduced(&mut self, node: NodeId, value: &TaggedValue) {
        if let Some(&i) = self.open.get(&node) {
            self.history.ops[i].value = Some(value.clone());
        }
    }

    /// Close the node's open record. The caller fills response fields.
    fn respond(&mut self, t: SimTime, node: NodeId) -> &mut OperationRecord {
        let i = self
            .open
            .remove(&node)
            .expect("response without a matching invocation");
        let rec = &mut self.history.ops[i];
        rec.respond = Some(t);
        rec
    }
}

/// Operation history of a snapshot-object run.
pub fn history_from_acaso(trace: &ExecutionTrace<AcMsg, AcOp, AcResp>) -> History {
    let mut b = HistoryBuilder::new(trace.n);
    for e in &trace.events {
        match &e.kind {
            EventKind::Invoke { node, op } => {
                let class = match op {
                    AcOp::Update { .. } => OpClass::Update,
                    AcOp::Scan => OpClass::Scan,
                };
                b.invoke(e.t, *node, class);
            }
            EventKind::Internal {
                node,
                note: LocalNote::ValueIntroduced { value },
            } => b.value_introduced(*node, value),
            EventKind::Respond { node, resp } => {
                let rec = b.respond(e.t, *node);
                rec.view = Some(OpView::Values(resp.view().clone()));
                rec.tag = Some(resp.tag());
                rec.direct = Some(resp.direct());
                match resp {
                    AcResp::Ack { value, .. } => rec.value = Some(value.clone()),
                    AcResp::Snap { snap, .. } => rec.snap = Some(snap.clone()),
                }
            }
            _ => {}
        }
    }
    b.history
}

/// Operation history of a vector-snapshot run.
pub fn history_from_tsaso(trace: &ExecutionTrace<TsMsg, TsOp, TsResp>) -> History {
    let mut b = HistoryBuilder::new(trace.n);
    for e in &trace.events {
        match &e.kind {
            EventKind::Invoke { node, op } => {
                let class = match op {
                    TsOp::Update { .. } => OpClass::Update,
                    TsOp::Scan => OpClass::Scan,
                };
                b.invoke(e.t, *node, class);
            }
            EventKind::Internal {
                node,
                note: LocalNote::ValueIntroduced { value },
            } => b.value_introduced(*node, value),
            EventKind::Respond { node, resp } => {
                let rec = b.respond(e.t, *node);
                rec.view = Some(OpView::Vector(resp.view().clone()));
                rec.tag = Some(resp.tag());
                rec.direct = Some(resp.direct());
                match resp {
                    TsResp::Ack { value, .. } => rec.value = Some(value.clone()),
                    TsResp::Snap { snap, .. } => rec.snap = Some(snap.clone()),
                }
            }
            _ => {}
        }
    }
    b.history
}

/// Operation history of an update-query state machine run. Queries replay
/// against grow-only-set semantics rather than per-writer registers.
pub fn history_from_uqsm(trace: &ExecutionTrace<AcMsg, UqOp, UqResp>) -> History {
    let mut b = HistoryBuilder::new(trace.n);
    for e in &trace.events {
        match &e.kind {
            EventKind::Invoke { node, op } => {
                let class = match op {
                    UqOp::Update { .. } => OpClass::Update,
                    UqOp::Query => OpClass::Query,
                };
                b.invoke(e.t, *node, class);
            }
            EventKind::Internal {
                node,
                note: LocalNote::ValueIntroduced { value },
            } => b.value_introduced(*node, value),
            EventKind::Respond { node, resp } => {
                let rec = b.respond(e.t, *node);
                rec.view = Some(OpView::Values(resp.view().clone()));
                match resp {
                    UqResp::Ok {
                        value, tag, direct, ..
                    } => {
                        rec.value = Some(value.clone());
                        rec.tag = Some(*tag);
                        rec.direct = Some(*direct);
                    }
                    UqResp::Reply {
                        state, tag, direct, ..
                    } => {
                        rec.state = Some(state.clone());
                        rec.tag = Some(*tag);
                        rec.direct = Some(*direct);
                    }
                }
            }
            _ => {}
        }
    }
    b.history
}

// ---------------------------------------------------------------------------
// Lattice-agreement properties
// ---------------------------------------------------------------------------

/// One violated lattice-agreement property, with the witnessing data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "property", rename_all = "camelCase")]
pub enum LaViolation {
    /// A node's decision does not contain its own input.
    DownwardValidity {
        node: NodeId,
        input: View,
        output: View,
    },
    /// A node decided values nobody proposed.
    UpwardValidity {
        node: NodeId,
        output: View,
        join: View,
    },
    /// Two decisions where neither contains the other.
    Comparability {
        a: NodeId,
        b: NodeId,
        view_a: View,
        view_b: View,
    },
    /// A node that started and never crashed failed to decide.
    MissingDecision { node: NodeId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LaReport {
    pub violations: Vec<LaViolation>,
}

impl LaReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the three agreement properties plus termination over explicit
/// input/output maps. `must_decide` is the set of nodes required to appear
/// in `outputs` (typically: started and never crashed).
pub fn check_la_properties(
    inputs: &BTreeMap<NodeId, View>,
    outputs: &BTreeMap<NodeId, View>,
    must_decide: &BTreeSet<NodeId>,
) -> LaReport {
    let mut violations = Vec::new();
    let join = inputs.values().fold(View::new(), |acc, x| acc.join(x));

    for (&node, output) in outputs {
        if let Some(input) = inputs.get(&node) {
            if !input.leq(output) {
                violations.push(LaViolation::DownwardValidity {
                    node,
                    input: input.clone(),
                    output: output.clone(),
                });
            }
        }
        if !output.leq(&join) {
            violations.push(LaViolation::UpwardValidity {
                node,
                output: output.clone(),
                join: join.clone(),
            });
        }
    }

    let decided: Vec<(&NodeId, &View)> = outputs.iter().collect();
    for (i, (&a, view_a)) in decided.iter().enumerate() {
        for (&b, view_b) in decided.iter().skip(i + 1) {
            if !view_a.comparable(view_b) {
                violations.push(LaViolation::Comparability {
                    a,
                    b,
                    view_a: (*view_a).clone(),
                    view_b: (*view_b).clone(),
                });
            }
        }
    }

    for &node in must_decide {
        if !outputs.contains_key(&node) {
            violations.push(LaViolation::MissingDecision { node });
        }
    }

    LaReport { violations }
}

/// Inputs proposed in an agreement trace, per node.
pub fn la_inputs(trace: &ExecutionTrace<ElaMsg, ElaOp, ElaResp>) -> BTreeMap<NodeId, View> {
    trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Invoke {
                node,
                op: ElaOp::Start { input },
            } => Some((*node, input.clone())),
            _ => None,
        })
        .collect()
}

/// Decisions recorded in an agreement trace, per node.
pub fn la_outputs(trace: &ExecutionTrace<ElaMsg, ElaOp, ElaResp>) -> BTreeMap<NodeId, View> {
    trace
        .decides()
        .into_iter()
        .map(|(_, node, view, _)| (node, view.clone()))
        .collect()
}

/// End-to-end agreement check of one trace: properties over the decided
/// views, termination required of every node that started and stayed up.
pub fn check_ela_trace(trace: &ExecutionTrace<ElaMsg, ElaOp, ElaResp>) -> LaReport {
    let inputs = la_inputs(trace);
    let outputs = la_outputs(trace);
    let nonfaulty = trace.nonfaulty();
    let must_decide = inputs
        .keys()
        .filter(|j| nonfaulty.contains(j))
        .copied()
        .collect();
    check_la_properties(&inputs, &outputs, &must_decide)
}

// ---------------------------------------------------------------------------
// Linearization witness
// ---------------------------------------------------------------------------

/// A proposed total order of history operations, as indices into
/// [`History::ops`]. Every completed operation appears exactly once;
/// unresponded updates may appear if their value became visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Linearization(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "error", rename_all = "camelCase")]
pub enum WitnessError {
    /// A completed operation carries no view; the witness cannot place it.
    MissingView { op: usize },
    /// Two completed operations returned incomparable views — a protocol
    /// bug, not a checker limitation.
    IncomparableViews { a: usize, b: usize },
}

impl core::fmt::Display for WitnessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            WitnessError::MissingView { op } => {
                write!(f, "completed operation #{op} has no view")
            }
            WitnessError::IncomparableViews { a, b } => {
                write!(f, "operations #{a} and #{b} returned incomparable views")
            }
        }
    }
}

impl core::error::Error for WitnessError {}

/// Build the canonical linearization of a snapshot history from its views.
///
/// Scans are ordered by view inclusion (ties: response time, then node id);
/// each update goes immediately before the first scan whose view reflects
/// its value, after all scans whose views do not. Updates falling in the
/// same gap keep real-time order, with concurrent ones ordered by their
/// value timestamps. Unresponded updates are included exactly when some
/// completed operation's view reflects their value.
pub fn build_linearization(h: &History) -> Result<Linearization, WitnessError> {
    let completed: Vec<usize> = (0..h.ops.len()).filter(|&i| h.ops[i].completed()).collect();
    for &i in &completed {
        if h.ops[i].view.is_none() {
            return Err(WitnessError::MissingView { op: i });
        }
    }
    for (x, &i) in completed.iter().enumerate() {
        for &j in completed.iter().skip(x + 1) {
            let (vi, vj) = (h.ops[i].view.as_ref(), h.ops[j].view.as_ref());
            if !vi.unwrap().comparable(vj.unwrap()) {
                return Err(WitnessError::IncomparableViews { a: i, b: j });
            }
        }
    }

    let mut scans: Vec<usize> = completed
        .iter()
        .copied()
        .filter(|&i| h.ops[i].class != OpClass::Update)
        .collect();
    scans.sort_by_key(|&i| {
        let rec = &h.ops[i];
        (
            rec.view.as_ref().unwrap().weight(),
            rec.respond.unwrap(),
            rec.node,
        )
    });

    // Updates worth placing: completed ones, plus unresponded ones whose
    // value some completed operation already exposed.
    let updates: Vec<usize> = (0..h.ops.len())
        .filter(|&i| {
            let rec = &h.ops[i];
            if rec.class != OpClass::Update {
                return false;
            }
            if rec.completed() {
                return true;
            }
            match &rec.value {
                Some(v) => completed
                    .iter()
                    .any(|&c| h.ops[c].view.as_ref().unwrap().includes(v)),
                None => false,
            }
        })
        .collect();

    // Gap g holds the updates that go immediately before the g-th scan;
    // gap scans.len() holds those after every scan.
    let mut gaps: Vec<Vec<usize>> = (0..=scans.len()).map(|_| Vec::new()).collect();
    for &u in &updates {
        let v = h.ops[u]
            .value
            .as_ref()
            .expect("completed update without a value");
        let g = scans
            .iter()
            .position(|&s| h.ops[s].view.as_ref().unwrap().includes(v))
            .unwrap_or(scans.len());
        gaps[g].push(u);
    }

    let mut order = Vec::with_capacity(updates.len() + scans.len());
    for (g, gap) in gaps.into_iter().enumerate() {
        order.extend(sort_gap(h, gap));
        if g < scans.len() {
            order.push(scans[g]);
        }
    }
    Ok(Linearization(order))
}

/// Order one gap's updates: real-time precedence is a hard edge, concurrent
/// updates break ties by value timestamp. Kahn's algorithm, always emitting
/// the ready update with the smallest timestamp.
fn sort_gap(h: &History, gap: Vec<usize>) -> Vec<usize> {
    let mut remaining = gap;
    let mut out = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let ready: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&u| {
                !remaining
                    .iter()
                    .any(|&w| w != u && h.ops[w].precedes(&h.ops[u]))
            })
            .collect();
        // Real-time precedence is acyclic, so something is always ready.
        let next = ready
            .into_iter()
            .min_by_key(|&u| h.ops[u].value.as_ref().map(|v| v.ts))
            .expect("precedence cycle in per-gap updates");
        remaining.retain(|&u| u != next);
        out.push(next);
    }
    out
}

/// Does this order linearize the history? True iff it lists every completed
/// operation exactly once (unresponded updates optional), respects
/// real-time precedence, and replays correctly against the sequential
/// object: each scan sees per writer the latest preceding update (falling
/// back to the initial snapshot), each query sees the set of all preceding
/// update payloads.
pub fn validate_linearization(h: &History, lin: &Linearization) -> bool {
    let mut seen = BTreeSet::new();
    for &i in &lin.0 {
        if i >= h.ops.len() || !seen.insert(i) {
            return false;
        }
        if !h.ops[i].completed() && h.ops[i].class != OpClass::Update {
            return false;
        }
    }
    if (0..h.ops.len()).any(|i| h.ops[i].completed() && !seen.contains(&i)) {
        return false;
    }

    for (x, &i) in lin.0.iter().enumerate() {
        for &j in lin.0.iter().skip(x + 1) {
            if h.ops[j].precedes(&h.ops[i]) {
                return false;
            }
        }
    }

    let mut last: BTreeMap<NodeId, (Timestamp, Payload)> = BTreeMap::new();
    let mut grown: BTreeSet<Payload> = h.initial.entries.iter().flatten().cloned().collect();
    for &i in &lin.0 {
        let rec = &h.ops[i];
        match rec.class {
            OpClass::Update => {
                let Some(v) = &rec.value else { return false };
                let entry = last.entry(v.ts.writer).or_insert((v.ts, v.payload.clone()));
                if v.ts >= entry.0 {
                    *entry = (v.ts, v.payload.clone());
                }
                grown.insert(v.payload.clone());
            }
            OpClass::Scan => {
                let Some(snap) = &rec.snap else { return false };
                let mut expected = h.initial.clone();
                for (w, (_, p)) in &last {
                    expected.entries[w.idx()] = Some(p.clone());
                }
                if *snap != expected {
                    return false;
                }
            }
            OpClass::Query => {
                let Some(state) = &rec.state else { return false };
                if *state != grown {
                    return false;
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Largest completed-operation count the exhaustive oracle accepts.
pub const ORACLE_MAX_OPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "error", rename_all = "camelCase")]
pub enum OracleError {
    /// The search is exponential; histories beyond the cap go through the
    /// witness path instead.
    TooLarge { completed: usize },
}

impl core::fmt::Display for OracleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OracleError::TooLarge { completed } => write!(
                f,
                "history has {completed} completed operations, oracle cap is {ORACLE_MAX_OPS}"
            ),
        }
    }
}

impl core::error::Error for OracleError {}

/// Exhaustively decide whether any interleaving linearizes the history.
///
/// Tries every subset of unresponded updates (an update whose writer
/// crashed may have taken effect or not), then searches orders: an
/// operation may go next iff every unchosen operation that responded
/// before its invocation is already placed. Scans and queries must match
/// the replayed state at their position. Memoized on the set of placed
/// operations — the replay state is a function of that set.
pub fn brute_force_linearizable(h: &History) -> Result<bool, OracleError> {
    let completed = h.completed_count();
    if completed > ORACLE_MAX_OPS {
        return Err(OracleError::TooLarge { completed });
    }

    let mandatory: Vec<usize> = (0..h.ops.len()).filter(|&i| h.ops[i].completed()).collect();
    let optional: Vec<usize> = (0..h.ops.len())
        .filter(|&i| {
            let rec = &h.ops[i];
            !rec.completed() && rec.class == OpClass::Update && rec.value.is_some()
        })
        .collect();

    for choice in 0u32..(1 << optional.len()) {
        let mut ops: Vec<usize> = mandatory.clone();
        ops.extend(
            optional
                .iter()
                .enumerate()
                .filter(|(b, _)| choice & (1 << b) != 0)
                .map(|(_, &i)| i),
        );
        let mut dead_ends = BTreeSet::new();
        if search(h, &ops, 0, &mut dead_ends) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Depth-first search over placement masks; `mask` bit b set means
/// `ops[b]` is already placed.
fn search(h: &History, ops: &[usize], mask: u64, dead_ends: &mut BTreeSet<u64>) -> bool {
    if mask == (1 << ops.len()) - 1 {
        return true;
    }
    if dead_ends.contains(&mask) {
        return false;
    }
    for b in 0..ops.len() {
        if mask & (1 << b) != 0 {
            continue;
        }
        let i = ops[b];
        let blocked = (0..ops.len()).any(|c| {
            c != b && mask & (1 << c) == 0 && h.ops[ops[c]].precedes(&h.ops[i])
        });
        if blocked || !matches_state(h, ops, mask, i) {
            continue;
        }
        if search(h, ops, mask | (1 << b), dead_ends) {
            return true;
        }
    }
    dead_ends.insert(mask);
    false
}

/// Would placing operation `i` next be consistent with the state produced
/// by the updates already placed in `mask`?
fn matches_state(h: &History, ops: &[usize], mask: u64, i: usize) -> bool {
    let rec = &h.ops[i];
    match rec.class {
        OpClass::Update => rec.value.is_some(),
        OpClass::Scan => {
            let Some(snap) = &rec.snap else { return false };
            let mut expected = h.initial.clone();
            let mut best: BTreeMap<NodeId, Timestamp> = BTreeMap::new();
            for_placed_updates(h, ops, mask, |v| {
                let w = v.ts.writer;
                if best.get(&w).is_none_or(|cur| v.ts >= *cur) {
                    best.insert(w, v.ts);
                    expected.entries[w.idx()] = Some(v.payload.clone());
                }
            });
            *snap == expected
        }
        OpClass::Query => {
            let Some(state) = &rec.state else { return false };
            let mut expected: BTreeSet<Payload> =
                h.initial.entries.iter().flatten().cloned().collect();
            for_placed_updates(h, ops, mask, |v| {
                expected.insert(v.payload.clone());
            });
            *state == expected
        }
    }
}

fn for_placed_updates(
    h: &History,
    ops: &[usize],
    mask: u64,
    mut f: impl FnMut(&TaggedValue),
) {
    for (b, &i) in ops.iter().enumerate() {
        if mask & (1 << b) != 0 && h.ops[i].class == OpClass::Update {
            if let Some(v) = &h.ops[i].value {
                f(v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Structural invariants of the snapshot protocol
// ---------------------------------------------------------------------------

/// One violated structural invariant, with indices into the history the
/// checker derived (reported alongside it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "invariant", rename_all = "camelCase")]
pub enum StructuralViolation {
    /// A value tag exists with no value at the tag below it.
    SkippedValueTag { present: Tag, missing: Tag },
    /// A tag circulated without a good lattice operation at some smaller
    /// tag — the borrow path could block forever.
    MissingGoodOperation { tag: Tag, largest: Tag },
    /// Two good lattice operations captured incomparable views.
    IncomparableGoodViews { view_a: View, view_b: View },
    /// Two completed operations returned incomparable views.
    IncomparableOpViews { a: usize, b: usize },
    /// A later operation's view lost values an earlier one returned.
    ViewOrder { earlier: usize, later: usize },
    /// A later operation finished with a smaller tag than an earlier one.
    TagOrder {
        earlier: usize,
        later: usize,
        earlier_tag: Tag,
        later_tag: Tag,
    },
    /// An update invoked a full round after a lattice operation began still
    /// wrote a value at or below that operation's tag.
    TagFence {
        lattice_tag: Tag,
        lattice_start: SimTime,
        update: usize,
        value_tag: Tag,
    },
    /// A writer's value timestamps failed to strictly increase.
    TimestampOrder {
        writer: NodeId,
        first: Timestamp,
        second: Timestamp,
    },
    /// A completed update's view omits the update's own value.
    MissingOwnValue { update: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StructuralReport {
    pub violations: Vec<StructuralViolation>,
}

impl StructuralReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the snapshot protocol's structural invariants over one trace:
/// non-skipping value tags, a good lattice operation under every
/// circulated tag, pairwise-comparable good views and operation views,
/// view and tag monotonicity across real-time order, the one-round tag
/// fence, per-writer timestamp order, and self-inclusion of written
/// values.
pub fn check_acaso_structure(trace: &ExecutionTrace<AcMsg, AcOp, AcResp>) -> StructuralReport {
    let h = history_from_acaso(trace);
    let mut violations = Vec::new();

    // Values, in trace order, with the node that introduced or relayed
    // them. Introduction notes are lost if the writer crashed inside that
    // step, so values carried by surviving sends count too.
    let mut value_tags: BTreeSet<Tag> = BTreeSet::new();
    let mut introduced: BTreeMap<NodeId, Vec<Timestamp>> = BTreeMap::new();
    let mut good_tags: BTreeSet<Tag> = BTreeSet::new();
    let mut good_views: Vec<View> = Vec::new();
    let mut largest_tag: Tag = 0;
    let mut lattice_starts: Vec<(SimTime, Tag)> = Vec::new();

    for e in &trace.events {
        match &e.kind {
            EventKind::Send { msg, .. } => match msg {
                AcMsg::Value { value } => {
                    value_tags.insert(value.ts.tag);
                }
                AcMsg::GoodLa { tag } => {
                    good_tags.insert(*tag);
                }
                _ => {}
            },
            EventKind::Deliver {
                msg: AcMsg::WriteTag { tag, .. } | AcMsg::EchoTag { tag },
                ..
            } => {
                largest_tag = largest_tag.max(*tag);
            }
            EventKind::Internal { node, note } => match note {
                LocalNote::ValueIntroduced { value } => {
                    value_tags.insert(value.ts.tag);
                    introduced.entry(*node).or_default().push(value.ts);
                }
                LocalNote::LatticeStart { tag } => lattice_starts.push((e.t, *tag)),
                LocalNote::LatticeEnd {
                    tag,
                    good: true,
                    view,
                } => {
                    good_tags.insert(*tag);
                    if let Some(v) = view {
                        good_views.push(v.clone());
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    // Value tags are born at 1 and never skip.
    for &t in &value_tags {
        if t >= 2 && !value_tags.contains(&(t - 1)) {
            violations.push(StructuralViolation::SkippedValueTag {
                present: t,
                missing: t - 1,
            });
        }
    }

    // Every tag strictly below the largest circulated one has a good
    // lattice operation vouching that borrows can unblock.
    for z in 1..largest_tag {
        if !good_tags.contains(&z) {
            violations.push(StructuralViolation::MissingGoodOperation {
                tag: z,
                largest: largest_tag,
            });
        }
    }

    for (x, a) in good_views.iter().enumerate() {
        for b in good_views.iter().skip(x + 1) {
            if !a.comparable(b) {
                violations.push(StructuralViolation::IncomparableGoodViews {
                    view_a: a.clone(),
                    view_b: b.clone(),
                });
            }
        }
    }

    let completed: Vec<usize> = (0..h.ops.len()).filter(|&i| h.ops[i].completed()).collect();
    for (x, &i) in completed.iter().enumerate() {
        for &j in completed.iter().skip(x + 1) {
            let (vi, vj) = (
                h.ops[i].view.as_ref().unwrap(),
                h.ops[j].view.as_ref().unwrap(),
            );
            if !vi.comparable(vj) {
                violations.push(StructuralViolation::IncomparableOpViews { a: i, b: j });
            }
            let (earlier, later) = if h.ops[i].precedes(&h.ops[j]) {
                (i, j)
            } else if h.ops[j].precedes(&h.ops[i]) {
                (j, i)
            } else {
                continue;
            };
            let (ve, vl) = (
                h.ops[earlier].view.as_ref().unwrap(),
                h.ops[later].view.as_ref().unwrap(),
            );
            if !ve.leq(vl) {
                violations.push(StructuralViolation::ViewOrder { earlier, later });
            }
            let (te, tl) = (h.ops[earlier].tag.unwrap(), h.ops[later].tag.unwrap());
            if te > tl {
                violations.push(StructuralViolation::TagOrder {
                    earlier,
                    later,
                    earlier_tag: te,
                    later_tag: tl,
                });
            }
        }
    }

    // Tag fence: an update invoked more than D after Lattice(T) began must
    // write its value above T.
    for &(t, lattice_tag) in &lattice_starts {
        for (i, rec) in h.ops.iter().enumerate() {
            if rec.class != OpClass::Update || rec.invoke <= t + trace.d {
                continue;
            }
            if let Some(v) = &rec.value {
                if v.ts.tag <= lattice_tag {
                    violations.push(StructuralViolation::TagFence {
                        lattice_tag,
                        lattice_start: t,
                        update: i,
                        value_tag: v.ts.tag,
                    });
                }
            }
        }
    }

    for (writer, stamps) in &introduced {
        for pair in stamps.windows(2) {
            if pair[1] <= pair[0] {
                violations.push(StructuralViolation::TimestampOrder {
                    writer: *writer,
                    first: pair[0],
                    second: pair[1],
                });
            }
        }
    }

    for (i, rec) in h.ops.iter().enumerate() {
        if rec.class == OpClass::Update && rec.completed() {
            let v = rec.value.as_ref().expect("completed update without value");
            if !rec.view.as_ref().unwrap().includes(v) {
                violations.push(StructuralViolation::MissingOwnValue { update: i });
            }
        }
    }

    StructuralReport { violations }
}

// ---------------------------------------------------------------------------
// Round and message accounting
// ---------------------------------------------------------------------------

/// Round and message costs of one run. Rounds are intervals of length D;
/// an operation's cost is `ceil((respond - invoke) / D)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundMetrics {
    /// Rounds per completed operation, in response order.
    pub op_rounds: Vec<u64>,
    /// Rounds per completed lattice operation.
    pub lattice_rounds: Vec<u64>,
    pub completed_ops: usize,
    /// Sum of `op_rounds`.
    pub total_rounds: u64,
    /// `total_rounds / completed_ops`.
    pub amortized_rounds: f64,
    pub max_op_rounds: u64,
    /// Total network sends.
    pub messages: usize,
    /// Actual crash count.
    pub k: usize,
}

/// Account rounds and messages for any protocol trace: operations are
/// invoke/respond pairs, lattice operations are their start/end notes.
pub fn round_metrics<M, O, R>(trace: &ExecutionTrace<M, O, R>) -> RoundMetrics {
    let mut open_ops: BTreeMap<NodeId, SimTime> = BTreeMap::new();
    let mut open_lattice: BTreeMap<(NodeId, Tag), Vec<SimTime>> = BTreeMap::new();
    let mut metrics = RoundMetrics {
        messages: trace.send_count(),
        k: trace.crash_times().len(),
        ..RoundMetrics::default()
    };

    for e in &trace.events {
        match &e.kind {
            EventKind::Invoke { node, .. } => {
                open_ops.insert(*node, e.t);
            }
            EventKind::Respond { node, .. } => {
                let t0 = open_ops
                    .remove(node)
                    .expect("response without a matching invocation");
                metrics.op_rounds.push(crate::simnet::rounds_between(
                    trace.d, t0, e.t,
                ));
            }
            EventKind::Internal { node, note } => match note {
                LocalNote::LatticeStart { tag } => {
                    open_lattice.entry((*node, *tag)).or_default().push(e.t);
                }
                LocalNote::LatticeEnd { tag, .. } => {
                    // Starts and ends of one node's same-tag operations
                    // pair first-to-first: operations never nest.
                    let starts = open_lattice
                        .get_mut(&(*node, *tag))
                        .expect("lattice end without a start");
                    let t0 = starts.remove(0);
                    metrics
                        .lattice_rounds
                        .push(crate::simnet::rounds_between(trace.d, t0, e.t));
                }
                _ => {}
            },
            _ => {}
        }
    }

    metrics.completed_ops = metrics.op_rounds.len();
    metrics.total_rounds = metrics.op_rounds.iter().sum();
    metrics.max_op_rounds = metrics.op_rounds.iter().copied().max().unwrap_or(0);
    metrics.amortized_rounds = if metrics.completed_ops == 0 {
        0.0
    } else {
        metrics.total_rounds as f64 / metrics.completed_ops as f64
    };
    metrics
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acaso::AcAutomaton;
    use crate::ela::{simultaneous_start, ElaAutomaton};
    use crate::lattice::Timestamp;
    use crate::simnet::{run, CrashSpec, CrashTrigger, DelayModel, ScriptEntry, SimConfig};
    use crate::uqsm::UqAutomaton;

    fn pay(label: &str) -> Payload {
        Payload::label(label)
    }

    fn tv(label: &str, tag: Tag, writer: u32) -> TaggedValue {
        TaggedValue {
            payload: pay(label),
            ts: Timestamp::new(tag, NodeId(writer)),
        }
    }

    fn update_rec(
        node: u32,
        invoke: SimTime,
        respond: Option<SimTime>,
        value: TaggedValue,
    ) -> OperationRecord {
        OperationRecord {
            node: NodeId(node),
            class: OpClass::Update,
            invoke,
            respond,
            value: Some(value),
            snap: None,
            state: None,
            view: None,
            tag: None,
            direct: None,
        }
    }

    fn scan_rec(
        node: u32,
        invoke: SimTime,
        respond: SimTime,
        snap: Snapshot,
    ) -> OperationRecord {
        OperationRecord {
            node: NodeId(node),
            class: OpClass::Scan,
            invoke,
            respond: Some(respond),
            value: None,
            snap: Some(snap),
            state: None,
            view: None,
            tag: None,
            direct: None,
        }
    }

    fn snap_of(n: usize, entries: &[(u32, &str)]) -> Snapshot {
        let mut s = Snapshot::empty(n);
        for (node, label) in entries {
            s.entries[NodeId(*node).idx()] = Some(pay(label));
        }
        s
    }

    // --- lattice-agreement properties ---

    #[test]
    fn clean_agreement_run_has_no_violations() {
        let config = SimConfig::fixed(3, 1, 100);
        let inputs = [
            View::singleton(tv("a", 0, 1)),
            View::singleton(tv("b", 0, 2)),
            View::singleton(tv("c", 0, 3)),
        ];
        let exec = run(
            &config,
            |id| ElaAutomaton::new(id, config.n, config.f),
            &simultaneous_start(&inputs),
        )
        .expect("run");
        let report = check_ela_trace(&exec.trace);
        assert!(report.ok(), "violations: {:?}", report.violations);
    }

    #[test]
    fn output_missing_own_input_is_flagged() {
        let a = tv("a", 0, 1);
        let b = tv("b", 0, 2);
        let inputs = BTreeMap::from([
            (NodeId(1), View::singleton(a.clone())),
            (NodeId(2), View::singleton(b.clone())),
        ]);
        // Node 1's decision dropped its own input.
        let outputs = BTreeMap::from([
            (NodeId(1), View::singleton(b.clone())),
            (NodeId(2), View::from_values([a, b])),
        ]);
        let report = check_la_properties(&inputs, &outputs, &BTreeSet::new());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, LaViolation::DownwardValidity { node, .. } if *node == NodeId(1))));
    }

    #[test]
    fn invented_value_is_flagged() {
        let a = tv("a", 0, 1);
        let ghost = tv("ghost", 0, 9);
        let inputs = BTreeMap::from([(NodeId(1), View::singleton(a.clone()))]);
        let outputs = BTreeMap::from([(NodeId(1), View::from_values([a, ghost]))]);
        let report = check_la_properties(&inputs, &outputs, &BTreeSet::new());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, LaViolation::UpwardValidity { .. })));
    }

    #[test]
    fn incomparable_outputs_are_flagged() {
        let a = tv("a", 0, 1);
        let b = tv("b", 0, 2);
        let inputs = BTreeMap::from([
            (NodeId(1), View::singleton(a.clone())),
            (NodeId(2), View::singleton(b.clone())),
        ]);
        let outputs = BTreeMap::from([
            (NodeId(1), View::singleton(a)),
            (NodeId(2), View::singleton(b)),
        ]);
        let report = check_la_properties(&inputs, &outputs, &BTreeSet::new());
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, LaViolation::Comparability { .. })));
    }

    #[test]
    fn silent_nonfaulty_node_is_flagged() {
        let inputs = BTreeMap::from([(NodeId(1), View::singleton(tv("a", 0, 1)))]);
        let outputs = BTreeMap::new();
        let must = BTreeSet::from([NodeId(1)]);
        let report = check_la_properties(&inputs, &outputs, &must);
        assert_eq!(
            report.violations,
            Vec::from([LaViolation::MissingDecision { node: NodeId(1) }])
        );
    }

    // --- witness construction on hand histories ---

    #[test]
    fn update_goes_before_the_scan_that_contains_it() {
        let v = tv("a", 1, 1);
        let mut h = History::empty(2);
        let mut upd = update_rec(1, 0, Some(500), v.clone());
        upd.view = Some(OpView::Values(View::singleton(v.clone())));
        upd.tag = Some(1);
        let mut sc = scan_rec(2, 600, 1100, snap_of(2, &[(1, "a")]));
        sc.view = Some(OpView::Values(View::singleton(v)));
        sc.tag = Some(1);
        h.ops = Vec::from([upd, sc]);

        let lin = build_linearization(&h).expect("witness");
        assert_eq!(lin.0, Vec::from([0, 1]));
        assert!(validate_linearization(&h, &lin));
    }

    #[test]
    fn equal_view_scans_keep_real_time_order() {
        let v = tv("a", 1, 1);
        let view = OpView::Values(View::singleton(v.clone()));
        let mut h = History::empty(2);
        let mut upd = update_rec(1, 0, Some(500), v);
        upd.view = Some(view.clone());
        let mut first = scan_rec(2, 600, 1100, snap_of(2, &[(1, "a")]));
        first.view = Some(view.clone());
        let mut second = scan_rec(1, 1200, 1700, snap_of(2, &[(1, "a")]));
        second.view = Some(view);
        h.ops = Vec::from([upd, first, second]);

        let lin = build_linearization(&h).expect("witness");
        assert_eq!(lin.0, Vec::from([0, 1, 2]));
        assert!(validate_linearization(&h, &lin));
    }

    #[test]
    fn incomparable_views_refuse_a_witness() {
        let a = tv("a", 1, 1);
        let b = tv("b", 1, 2);
        let mut h = History::empty(2);
        let mut s1 = scan_rec(1, 0, 500, snap_of(2, &[(1, "a")]));
        s1.view = Some(OpView::Values(View::singleton(a)));
        let mut s2 = scan_rec(2, 0, 500, snap_of(2, &[(2, "b")]));
        s2.view = Some(OpView::Values(View::singleton(b)));
        h.ops = Vec::from([s1, s2]);

        assert_eq!(
            build_linearization(&h),
            Err(WitnessError::IncomparableViews { a: 0, b: 1 })
        );
    }

    #[test]
    fn swapped_sequential_ops_fail_validation() {
        let v = tv("a", 1, 1);
        let mut h = History::empty(2);
        let mut upd = update_rec(1, 0, Some(500), v.clone());
        upd.view = Some(OpView::Values(View::singleton(v.clone())));
        let mut sc = scan_rec(2, 600, 1100, snap_of(2, &[(1, "a")]));
        sc.view = Some(OpView::Values(View::singleton(v)));
        h.ops = Vec::from([upd, sc]);

        // Scan first is both a real-time violation and a stale read.
        assert!(!validate_linearization(&h, &Linearization(Vec::from([1, 0]))));
    }

    #[test]
    fn mutated_snapshot_fails_validation() {
        let v = tv("a", 1, 1);
        let mut h = History::empty(2);
        let mut upd = update_rec(1, 0, Some(500), v.clone());
        upd.view = Some(OpView::Values(View::singleton(v.clone())));
        // The scan claims node 2 wrote "x", which nobody did.
        let mut sc = scan_rec(2, 600, 1100, snap_of(2, &[(1, "a"), (2, "x")]));
        sc.view = Some(OpView::Values(View::singleton(v)));
        h.ops = Vec::from([upd, sc]);

        let lin = build_linearization(&h).expect("witness");
        assert!(!validate_linearization(&h, &lin));
    }

    // --- brute-force oracle on hand histories ---

    #[test]
    fn empty_history_is_linearizable() {
        assert_eq!(brute_force_linearizable(&History::empty(3)), Ok(true));
    }

    #[test]
    fn stale_sequential_scan_is_not_linearizable() {
        let mut h = History::empty(2);
        h.ops = Vec::from([
            update_rec(1, 0, Some(500), tv("a", 1, 1)),
            // Invoked after the update responded, yet saw nothing.
            scan_rec(2, 600, 1100, Snapshot::empty(2)),
        ]);
        assert_eq!(brute_force_linearizable(&h), Ok(false));
    }

    #[test]
    fn concurrent_scan_may_miss_the_update() {
        let mut h = History::empty(2);
        h.ops = Vec::from([
            update_rec(1, 0, Some(500), tv("a", 1, 1)),
            // Overlaps the update, so both orders are admissible.
            scan_rec(2, 100, 400, Snapshot::empty(2)),
        ]);
        assert_eq!(brute_force_linearizable(&h), Ok(true));
    }

    #[test]
    fn crashed_update_may_take_effect_or_not() {
        let seen = {
            let mut h = History::empty(2);
            h.ops = Vec::from([
                update_rec(1, 0, None, tv("a", 1, 1)),
                scan_rec(2, 600, 1100, snap_of(2, &[(1, "a")])),
            ]);
            h
        };
        let unseen = {
            let mut h = History::empty(2);
            h.ops = Vec::from([
                update_rec(1, 0, None, tv("a", 1, 1)),
                scan_rec(2, 600, 1100, Snapshot::empty(2)),
            ]);
            h
        };
        assert_eq!(brute_force_linearizable(&seen), Ok(true));
        assert_eq!(brute_force_linearizable(&unseen), Ok(true));
    }

    #[test]
    fn flip_flop_scans_are_not_linearizable() {
        // A scan sees the value, a later scan loses it: no order works.
        let mut h = History::empty(2);
        h.ops = Vec::from([
            update_rec(1, 0, None, tv("a", 1, 1)),
            scan_rec(2, 600, 1100, snap_of(2, &[(1, "a")])),
            scan_rec(2, 1200, 1700, Snapshot::empty(2)),
        ]);
        assert_eq!(brute_force_linearizable(&h), Ok(false));
    }

    #[test]
    fn oversized_history_is_rejected() {
        let mut h = History::empty(2);
        for i in 0..11 {
            h.ops.push(update_rec(1, i * 10, Some(i * 10 + 5), tv("a", i + 1, 1)));
        }
        assert_eq!(
            brute_force_linearizable(&h),
            Err(OracleError::TooLarge { completed: 11 })
        );
    }

    // --- end-to-end: both paths on real traces ---

    fn acaso_script(ops: &[(u64, u32, Option<&str>)]) -> Vec<ScriptEntry<AcOp>> {
        ops.iter()
            .map(|&(t, node, label)| ScriptEntry {
                t,
                node: NodeId(node),
                op: match label {
                    Some(l) => AcOp::Update { payload: pay(l) },
                    None => AcOp::Scan,
                },
            })
            .collect()
    }

    #[test]
    fn witness_and_oracle_agree_on_snapshot_traces() {
        let d = 100;
        for seed in 0..20 {
            let config = SimConfig {
                delay: DelayModel::Uniform { d_min: 1, seed },
                ..SimConfig::fixed(3, 1, d)
            };
            let script = acaso_script(&[
                (0, 1, Some("a")),
                (0, 2, None),
                (5, 3, Some("c")),
                (40 * d, 2, Some("b")),
                (40 * d, 1, None),
                (80 * d, 3, None),
            ]);
            let exec = run(
                &config,
                |id| AcAutomaton::new(id, config.n, config.f),
                &script,
            )
            .expect("run");
            let h = history_from_acaso(&exec.trace);
            let lin = build_linearization(&h).expect("witness");
            assert!(validate_linearization(&h, &lin), "seed {seed}");
            assert_eq!(brute_force_linearizable(&h), Ok(true), "seed {seed}");
        }
    }

    #[test]
    fn witness_and_oracle_agree_under_a_crash() {
        let d = 100;
        let mut config = SimConfig::fixed(5, 2, d);
        config.crashes = Vec::from([CrashSpec {
            node: NodeId(2),
            trigger: CrashTrigger::AtTime(3 * d),
        }]);
        let script = acaso_script(&[
            (0, 1, Some("a")),
            (d, 2, Some("b")),
            (30 * d, 3, None),
            (60 * d, 4, Some("c")),
            (90 * d, 5, None),
        ]);
        let exec = run(
            &config,
            |id| AcAutomaton::new(id, config.n, config.f),
            &script,
        )
        .expect("run");
        let h = history_from_acaso(&exec.trace);
        let lin = build_linearization(&h).expect("witness");
        assert!(validate_linearization(&h, &lin));
        assert_eq!(brute_force_linearizable(&h), Ok(true));
    }

    #[test]
    fn query_histories_replay_as_grow_only_sets() {
        let d = 100;
        let config = SimConfig::fixed(3, 1, d);
        let script = [
            ScriptEntry {
                t: 0,
                node: NodeId(1),
                op: UqOp::Update { payload: pay("a") },
            },
            ScriptEntry {
                t: 40 * d,
                node: NodeId(2),
                op: UqOp::Query,
            },
            ScriptEntry {
                t: 80 * d,
                node: NodeId(3),
                op: UqOp::Update { payload: pay("b") },
            },
            ScriptEntry {
                t: 120 * d,
                node: NodeId(1),
                op: UqOp::Query,
            },
        ];
        let exec = run(
            &config,
            |id| UqAutomaton::new(id, config.n, config.f),
            &script,
        )
        .expect("run");
        let h = history_from_uqsm(&exec.trace);
        let lin = build_linearization(&h).expect("witness");
        assert!(validate_linearization(&h, &lin));
        assert_eq!(brute_force_linearizable(&h), Ok(true));
    }

    // --- structural invariants ---

    #[test]
    fn clean_snapshot_trace_has_no_structural_violations() {
        let d = 100;
        let config = SimConfig::fixed(3, 1, d);
        let script = acaso_script(&[
            (0, 1, Some("a")),
            (30 * d, 2, Some("b")),
            (60 * d, 3, None),
            (90 * d, 1, None),
        ]);
        let exec = run(
            &config,
            |id| AcAutomaton::new(id, config.n, config.f),
            &script,
        )
        .expect("run");
        let report = check_acaso_structure(&exec.trace);
        assert!(report.ok(), "violations: {:?}", report.violations);
    }

    #[test]
    fn skipped_value_tag_is_flagged() {
        // A synthetic trace claiming values at tags 1 and 3 but never 2.
        let trace = ExecutionTrace::<AcMsg, AcOp, AcResp> {
            n: 3,
            f: 1,
            d: 100,
            events: Vec::from([
                crate::simnet::TraceEvent {
                    t: 0,
                    kind: EventKind::Internal {
                        node: NodeId(1),
                        note: LocalNote::ValueIntroduced { value: tv("a", 1, 1) },
                    },
                },
                crate::simnet::TraceEvent {
                    t: 50,
                    kind: EventKind::Internal {
                        node: NodeId(2),
                        note: LocalNote::ValueIntroduced { value: tv("b", 3, 2) },
                    },
                },
            ]),
            outcome: crate::simnet::RunOutcome::Quiescent,
        };
        let report = check_acaso_structure(&trace);
        assert!(report.violations.contains(&StructuralViolation::SkippedValueTag {
            present: 3,
            missing: 2
        }));
    }

    #[test]
    fn missing_good_operation_is_flagged() {
        // Tag 2 circulates but no good operation at tag 1 exists.
        let trace = ExecutionTrace::<AcMsg, AcOp, AcResp> {
            n: 3,
            f: 1,
            d: 100,
            events: Vec::from([crate::simnet::TraceEvent {
                t: 0,
                kind: EventKind::Deliver {
                    src: NodeId(1),
                    dst: NodeId(2),
                    seq: 0,
                    msg: AcMsg::WriteTag { tag: 2, req: 1 },
                },
            }]),
            outcome: crate::simnet::RunOutcome::Quiescent,
        };
        let report = check_acaso_structure(&trace);
        assert!(report.violations.contains(&StructuralViolation::MissingGoodOperation {
            tag: 1,
            largest: 2
        }));
    }

    // --- round metrics ---

    #[test]
    fn crash_free_agreement_costs_two_rounds_per_decision() {
        let d = 250;
        let config = SimConfig::fixed(5, 2, d);
        let inputs: Vec<View> = (1..=5)
            .map(|i| View::singleton(tv("x", 0, i)))
            .collect();
        let exec = run(
            &config,
            |id| ElaAutomaton::new(id, config.n, config.f),
            &simultaneous_start(&inputs),
        )
        .expect("run");
        let m = round_metrics(&exec.trace);
        assert_eq!(m.completed_ops, 5);
        assert!(m.op_rounds.iter().all(|&r| r == 2), "{:?}", m.op_rounds);
        assert_eq!(m.amortized_rounds, 2.0);
        assert_eq!(m.k, 0);
        assert!(m.messages > 0);
    }

    #[test]
    fn lattice_operations_are_paired_and_counted() {
        let d = 100;
        let config = SimConfig::fixed(3, 1, d);
        let script = acaso_script(&[(0, 1, Some("a"))]);
        let exec = run(
            &config,
            |id| AcAutomaton::new(id, config.n, config.f),
            &script,
        )
        .expect("run");
        let m = round_metrics(&exec.trace);
        // One update: phase 0 plus one renewal phase, both completing.
        assert_eq!(m.completed_ops, 1);
        assert_eq!(m.lattice_rounds.len(), 2);
        assert_eq!(m.max_op_rounds, *m.op_rounds.iter().max().unwrap());
    }
}
