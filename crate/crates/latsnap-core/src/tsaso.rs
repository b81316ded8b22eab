//! Timestamp-based atomic snapshot: the general agreement-to-snapshot
//! transformation.
//!
//! Where the amortized-constant-round object gossips raw values and lets
//! views emerge from repeated agreement, this construction keeps a local
//! snapshot *vector* per node (`Snap[q]` = newest value seen from writer
//! `q`, ordered by the writer's own sequence number) and runs agreement
//! directly over such vectors: the lattice is entrywise
//! newest-timestamp-wins.
//!
//! A scan runs at most two phases. Each phase picks a tag one past
//! everything seen, writes it to a quorum, reads and re-writes a quorum's
//! state vectors (the read join becomes the agreement input; the write-back
//! is what makes a returned view visible to every later reader), then runs
//! one tagged agreement instance. If no larger tag shows up afterwards the
//! output is stored into `V[tag]`, pushed to a quorum via `writeView`, and
//! returned — a *direct* view. A phase-2 miss instead blocks until someone
//! else's `writeView` fills `V[tag]` and returns that — a borrowed view.
//! An update bumps its sequence number, writes the value to a quorum, and
//! runs a scan purely as a synchronization point, discarding its result.
//!
//! Agreement instances are isolated per tag: instance messages carry their
//! tag, every node hosts the instance's echo logic on demand, and only
//! nodes that run a scan at that tag participate in its decision. Plugging
//! the early-stopping agreement in here costs O(n) worst-case rounds — the
//! point of this construction is generality, not round complexity.
//!
//! As elsewhere, every quorum procedure carries a per-call nonce echoed in
//! its acks so retries never complete on a predecessor's leftovers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ela::{Atomize, ElaEngine};
use crate::lattice::{
    JoinLattice, NodeId, Payload, Snapshot, Tag, TaggedValue, Timestamp, View,
};
use crate::simnet::{Automaton, InvokeError, LocalNote, Message, Step};

// ---------------------------------------------------------------------------
// The snapshot-vector lattice
// ---------------------------------------------------------------------------

/// Per-writer newest values; absent entries are the initial ⊥. Join is
/// entrywise newest-timestamp-wins, which is a lattice because each entry
/// only ever holds values of its own writer, totally ordered by that
/// writer's sequence numbers. Serialized as a pair list so map keys stay
/// JSON-friendly.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(
    from = "Vec<(NodeId, TaggedValue)>",
    into = "Vec<(NodeId, TaggedValue)>"
)]
pub struct SnapVector(pub BTreeMap<NodeId, TaggedValue>);

impl From<Vec<(NodeId, TaggedValue)>> for SnapVector {
    fn from(pairs: Vec<(NodeId, TaggedValue)>) -> Self {
        let mut v = SnapVector::new();
        for (j, val) in pairs {
            v.update_max(j, val);
        }
        v
    }
}

impl From<SnapVector> for Vec<(NodeId, TaggedValue)> {
    fn from(v: SnapVector) -> Self {
        v.0.into_iter().collect()
    }
}

impl SnapVector {
    pub fn new() -> Self {
        SnapVector(BTreeMap::new())
    }

    pub fn get(&self, j: NodeId) -> Option<&TaggedValue> {
        self.0.get(&j)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self[j] ← max(self[j], v)` by timestamp.
    pub fn update_max(&mut self, j: NodeId, v: TaggedValue) {
        match self.0.get(&j) {
            Some(old) if old.ts >= v.ts => {}
            _ => {
                self.0.insert(j, v);
            }
        }
    }

    /// The entries as a plain value set.
    pub fn to_view(&self) -> View {
        View::from_values(self.0.values().cloned())
    }

    pub fn to_snapshot(&self, n: usize) -> Snapshot {
        let mut snap = Snapshot::empty(n);
        for (j, v) in &self.0 {
            snap.entries[j.idx()] = Some(v.payload.clone());
        }
        snap
    }
}

impl JoinLattice for SnapVector {
    fn bottom() -> Self {
        SnapVector::new()
    }

    fn join_assign(&mut self, other: &Self) {
        for (j, v) in &other.0 {
            self.update_max(*j, v.clone());
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.0
            .iter()
            .all(|(j, v)| other.0.get(j).is_some_and(|w| v.ts <= w.ts))
    }
}

impl Atomize for SnapVector {
    // A whole vector is one unit: instance messages carry vectors, and the
    // echo-once guard dedups on them.
    type Atom = SnapVector;

    fn absorb(&mut self, atom: &SnapVector) {
        self.join_assign(atom);
    }

    fn atoms(&self) -> Vec<SnapVector> {
        Vec::from([self.clone()])
    }
}

// ---------------------------------------------------------------------------
// Wire messages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TsMsg {
    /// A writer pushing its newest value into a quorum.
    Value { value: TaggedValue, req: u64 },
    ValueAck { req: u64 },
    WriteTag { tag: Tag, req: u64 },
    WriteTagAck { tag: Tag, req: u64 },
    ReadTag { req: u64 },
    ReadTagAck { tag: Tag, req: u64 },
    ReadState { req: u64 },
    ReadStateAck { state: SnapVector, req: u64 },
    WriteState { state: SnapVector, req: u64 },
    WriteStateAck { req: u64 },
    /// A direct view being pushed into a quorum for tag `tag`.
    WriteView { view: SnapVector, tag: Tag, req: u64 },
    ViewAck { req: u64 },
    /// Agreement-instance traffic, namespaced by the instance tag.
    La { tag: Tag, state: SnapVector },
}

impl Message for TsMsg {
    fn carried_values(&self) -> Vec<TaggedValue> {
        match self {
            TsMsg::Value { value, .. } => Vec::from([value.clone()]),
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Client operations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TsOp {
    Update { payload: Payload },
    Scan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TsResp {
    /// Update acknowledgment; the embedded scan's view rides along for the
    /// checkers even though the protocol discards it.
    Ack {
        value: TaggedValue,
        view: SnapVector,
        tag: Tag,
        direct: bool,
    },
    Snap {
        snap: Snapshot,
        view: SnapVector,
        tag: Tag,
        direct: bool,
    },
}

impl TsResp {
    pub fn view(&self) -> &SnapVector {
        match self {
            TsResp::Ack { view, .. } | TsResp::Snap { view, .. } => view,
        }
    }

    pub fn tag(&self) -> Tag {
        match self {
            TsResp::Ack { tag, .. } | TsResp::Snap { tag, .. } => *tag,
        }
    }

    pub fn direct(&self) -> bool {
        match self {
            TsResp::Ack { direct, .. } | TsResp::Snap { direct, .. } => *direct,
        }
    }
}

// ---------------------------------------------------------------------------
// The in-flight operation's phase machine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Stage {
    /// Update only: waiting for the value write's ack quorum.
    WriteValue { req: u64, acks: BTreeSet<NodeId> },
    /// Collecting readTag acks; at quorum the node picks its instance tag.
    ReadTag {
        req: u64,
        best: Tag,
        acks: BTreeSet<NodeId>,
    },
    WriteTag {
        req: u64,
        tag: Tag,
        acks: BTreeSet<NodeId>,
    },
    /// Joining quorum state vectors into the agreement input.
    ReadState {
        req: u64,
        acc: SnapVector,
        acks: BTreeSet<NodeId>,
    },
    WriteState {
        req: u64,
        input: SnapVector,
        acks: BTreeSet<NodeId>,
    },
    /// Waiting for the tag's agreement instance to decide.
    La,
    /// Second tag read; `output` is the instance's decision.
    ReadTagAfter {
        req: u64,
        best: Tag,
        acks: BTreeSet<NodeId>,
        output: SnapVector,
    },
    WriteView { req: u64, acks: BTreeSet<NodeId> },
    /// Phase-2 miss: blocked until somebody's writeView fills `V[tag]`.
    WaitView,
}

#[derive(Debug, Clone)]
enum TsKind {
    Update { value: TaggedValue },
    Scan,
}

#[derive(Debug, Clone)]
struct TsPending {
    kind: TsKind,
    phase: u8,
    stage: Stage,
}

// ---------------------------------------------------------------------------
// The automaton
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TsAutomaton {
    me: NodeId,
    n: usize,
    f: usize,
    /// Local view of the object: newest value per writer.
    snap: SnapVector,
    /// Views pushed via writeView, per tag; grows by join only.
    v: BTreeMap<Tag, SnapVector>,
    /// Tag of this node's last agreement instance.
    r: Tag,
    /// Largest tag seen, via acks and writeTag messages.
    max_tag: Tag,
    /// This node's value sequence number.
    ts: Tag,
    /// Per-tag agreement instances; every node hosts the echo side.
    engines: BTreeMap<Tag, ElaEngine<SnapVector>>,
    next_req: u64,
    pending: Option<TsPending>,
}

impl TsAutomaton {
    pub fn new(me: NodeId, n: usize, f: usize) -> Self {
        TsAutomaton {
            me,
            n,
            f,
            snap: SnapVector::new(),
            v: BTreeMap::new(),
            r: 0,
            max_tag: 0,
            ts: 0,
            engines: BTreeMap::new(),
            next_req: 0,
            pending: None,
        }
    }

    pub fn max_tag(&self) -> Tag {
        self.max_tag
    }

    pub fn local_state(&self) -> &SnapVector {
        &self.snap
    }

    pub fn stored_view(&self, tag: Tag) -> Option<&SnapVector> {
        self.v.get(&tag)
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_none()
    }

    fn quorum(&self) -> usize {
        self.n - self.f
    }

    fn fresh_req(&mut self) -> u64 {
        self.next_req += 1;
        self.next_req
    }

    fn start_read_tag(&mut self, step: &mut Step<TsMsg, TsResp>) -> Stage {
        let req = self.fresh_req();
        step.broadcast(String::from("readTag"), TsMsg::ReadTag { req });
        Stage::ReadTag {
            req,
            best: 0,
            acks: BTreeSet::new(),
        }
    }

    /// Deliver atoms into a tag's instance, echoing whatever is fresh, and
    /// surface its decision if this very delivery produced one.
    fn la_deliver(
        &mut self,
        tag: Tag,
        from: NodeId,
        atom: &SnapVector,
        step: &mut Step<TsMsg, TsResp>,
    ) {
        let engine = self
            .engines
            .entry(tag)
            .or_insert_with(|| ElaEngine::new(self.me, self.n, self.f));
        let effects = engine.on_atoms(from, core::slice::from_ref(atom));
        for echoed in effects.echo {
            step.broadcast(format!("la:{tag}"), TsMsg::La { tag, state: echoed });
        }
        // A decision is picked up by the pump via `decided()`.
    }

    fn respond(&self, kind: &mut TsKind, view: SnapVector, tag: Tag, direct: bool, step: &mut Step<TsMsg, TsResp>) {
        match kind {
            TsKind::Update { value } => step.respond(TsResp::Ack {
                value: value.clone(),
                view,
                tag,
                direct,
            }),
            TsKind::Scan => step.respond(TsResp::Snap {
                snap: view.to_snapshot(self.n),
                view,
                tag,
                direct,
            }),
        }
    }

    /// One guard-check pass; true when the phase machine moved.
    fn advance(&mut self, step: &mut Step<TsMsg, TsResp>) -> bool {
        let Some(TsPending {
            mut kind,
            phase,
            stage,
        }) = self.pending.take()
        else {
            return false;
        };
        let q = self.quorum();
        let (next, moved): (Option<(u8, Stage)>, bool) = match stage {
            Stage::WriteValue { req, acks } => {
                if acks.len() >= q {
                    (Some((1, self.start_read_tag(step))), true)
                } else {
                    (Some((phase, Stage::WriteValue { req, acks })), false)
                }
            }
            Stage::ReadTag { req, best, acks } => {
                if acks.len() >= q {
                    self.max_tag = self.max_tag.max(best);
                    self.r = Tag::max(self.max_tag, self.r + 1);
                    let tag = self.r;
                    let wreq = self.fresh_req();
                    step.broadcast(format!("writeTag:{tag}"), TsMsg::WriteTag { tag, req: wreq });
                    (
                        Some((
                            phase,
                            Stage::WriteTag {
                                req: wreq,
                                tag,
                                acks: BTreeSet::new(),
                            },
                        )),
                        true,
                    )
                } else {
                    (Some((phase, Stage::ReadTag { req, best, acks })), false)
                }
            }
            Stage::WriteTag { req, tag, acks } => {
                if acks.len() >= q {
                    let rreq = self.fresh_req();
                    step.broadcast(String::from("readState"), TsMsg::ReadState { req: rreq });
                    (
                        Some((
                            phase,
                            Stage::ReadState {
                                req: rreq,
                                acc: SnapVector::new(),
                                acks: BTreeSet::new(),
                            },
                        )),
                        true,
                    )
                } else {
                    (Some((phase, Stage::WriteTag { req, tag, acks })), false)
                }
            }
            Stage::ReadState { req, acc, acks } => {
                if acks.len() >= q {
                    let wreq = self.fresh_req();
                    step.broadcast(
                        String::from("writeState"),
                        TsMsg::WriteState {
                            state: acc.clone(),
                            req: wreq,
                        },
                    );
                    (
                        Some((
                            phase,
                            Stage::WriteState {
                                req: wreq,
                                input: acc,
                                acks: BTreeSet::new(),
                            },
                        )),
                        true,
                    )
                } else {
                    (Some((phase, Stage::ReadState { req, acc, acks })), false)
                }
            }
            Stage::WriteState { req, input, acks } => {
                if acks.len() >= q {
                    let tag = self.r;
                    step.note(LocalNote::LatticeStart { tag });
                    let engine = self
                        .engines
                        .entry(tag)
                        .or_insert_with(|| ElaEngine::new(self.me, self.n, self.f));
                    let effects = engine
                        .start(input)
                        .expect("per-node instance tags strictly increase");
                    for atom in effects.echo {
                        step.broadcast(format!("la:{tag}"), TsMsg::La { tag, state: atom });
                    }
                    (Some((phase, Stage::La)), true)
                } else {
                    (Some((phase, Stage::WriteState { req, input, acks })), false)
                }
            }
            Stage::La => {
                let decided = self.engines.get(&self.r).and_then(|e| e.decided()).cloned();
                match decided {
                    Some(output) => {
                        let req = self.fresh_req();
                        step.broadcast(String::from("readTag"), TsMsg::ReadTag { req });
                        (
                            Some((
                                phase,
                                Stage::ReadTagAfter {
                                    req,
                                    best: 0,
                                    acks: BTreeSet::new(),
                                    output,
                                },
                            )),
                            true,
                        )
                    }
                    None => (Some((phase, Stage::La)), false),
                }
            }
            Stage::ReadTagAfter {
                req,
                best,
                acks,
                output,
            } => {
                if acks.len() >= q {
                    self.max_tag = self.max_tag.max(best);
                    let tag = self.r;
                    if self.max_tag <= tag {
                        // Direct view: store, publish, return once acked.
                        self.v.entry(tag).or_default().join_assign(&output);
                        step.note(LocalNote::LatticeEnd {
                            tag,
                            good: true,
                            view: Some(output.to_view()),
                        });
                        let wreq = self.fresh_req();
                        step.broadcast(
                            format!("writeView:{tag}"),
                            TsMsg::WriteView {
                                view: output,
                                tag,
                                req: wreq,
                            },
                        );
                        (
                            Some((
                                phase,
                                Stage::WriteView {
                                    req: wreq,
                                    acks: BTreeSet::new(),
                                },
                            )),
                            true,
                        )
                    } else {
                        step.note(LocalNote::LatticeEnd {
                            tag,
                            good: false,
                            view: None,
                        });
                        if phase == 1 {
                            (Some((2, self.start_read_tag(step))), true)
                        } else {
                            (Some((phase, Stage::WaitView)), true)
                        }
                    }
                } else {
                    (
                        Some((
                            phase,
                            Stage::ReadTagAfter {
                                req,
                                best,
                                acks,
                                output,
                            },
                        )),
                        false,
                    )
                }
            }
            Stage::WriteView { req, acks } => {
                if acks.len() >= q {
                    let view = self.v.get(&self.r).cloned().unwrap_or_default();
                    let tag = self.r;
                    self.respond(&mut kind, view, tag, true, step);
                    (None, true)
                } else {
                    (Some((phase, Stage::WriteView { req, acks })), false)
                }
            }
            Stage::WaitView => match self.v.get(&self.r) {
                Some(view) if !view.is_empty() => {
                    let view = view.clone();
                    let tag = self.r;
                    self.respond(&mut kind, view, tag, false, step);
                    (None, true)
                }
                _ => (Some((phase, Stage::WaitView)), false),
            },
        };
        if let Some((phase, stage)) = next {
            self.pending = Some(TsPending { kind, phase, stage });
        }
        moved
    }

    fn pump(&mut self, step: &mut Step<TsMsg, TsResp>) {
        while self.advance(step) {}
    }
}

impl Automaton for TsAutomaton {
    type Msg = TsMsg;
    type Op = TsOp;
    type Resp = TsResp;

    fn on_invoke(&mut self, op: TsOp) -> Result<Step<TsMsg, TsResp>, InvokeError> {
        if self.pending.is_some() {
            return Err(InvokeError("operation already in flight"));
        }
        let mut step = Step::new();
        let (kind, stage) = match op {
            TsOp::Update { payload } => {
                self.ts += 1;
                let value = TaggedValue::new(payload, Timestamp::new(self.ts, self.me));
                let req = self.fresh_req();
                step.note(LocalNote::ValueIntroduced {
                    value: value.clone(),
                });
                step.broadcast(
                    crate::simnet::value_broadcast_label([&value]),
                    TsMsg::Value {
                        value: value.clone(),
                        req,
                    },
                );
                (
                    TsKind::Update { value },
                    Stage::WriteValue {
                        req,
                        acks: BTreeSet::new(),
                    },
                )
            }
            TsOp::Scan => (TsKind::Scan, self.start_read_tag(&mut step)),
        };
        self.pending = Some(TsPending {
            kind,
            phase: 1,
            stage,
        });
        self.pump(&mut step);
        Ok(step)
    }

    fn on_message(&mut self, src: NodeId, msg: TsMsg) -> Step<TsMsg, TsResp> {
        let mut step = Step::new();
        match msg {
            TsMsg::Value { value, req } => {
                self.snap.update_max(src, value);
                step.send(src, TsMsg::ValueAck { req });
            }
            TsMsg::ValueAck { req } => {
                if let Some(TsPending {
                    stage: Stage::WriteValue { req: want, acks },
                    ..
                }) = &mut self.pending
                {
                    if *want == req {
                        acks.insert(src);
                    }
                }
            }
            TsMsg::WriteTag { tag, req } => {
                self.max_tag = self.max_tag.max(tag);
                step.send(src, TsMsg::WriteTagAck { tag, req });
            }
            TsMsg::WriteTagAck { tag, req } => {
                if let Some(TsPending {
                    stage:
                        Stage::WriteTag {
                            req: want,
                            tag: want_tag,
                            acks,
                        },
                    ..
                }) = &mut self.pending
                {
                    if *want == req && *want_tag == tag {
                        acks.insert(src);
                    }
                }
            }
            TsMsg::ReadTag { req } => {
                step.send(
                    src,
                    TsMsg::ReadTagAck {
                        tag: self.max_tag,
                        req,
                    },
                );
            }
            TsMsg::ReadTagAck { tag, req } => {
                if let Some(p) = &mut self.pending {
                    match &mut p.stage {
                        Stage::ReadTag { req: want, best, acks }
                        | Stage::ReadTagAfter {
                            req: want,
                            best,
                            acks,
                            ..
                        } if *want == req => {
                            acks.insert(src);
                            *best = (*best).max(tag);
                        }
                        _ => {}
                    }
                }
            }
            TsMsg::ReadState { req } => {
                step.send(
                    src,
                    TsMsg::ReadStateAck {
                        state: self.snap.clone(),
                        req,
                    },
                );
            }
            TsMsg::ReadStateAck { state, req } => {
                if let Some(TsPending {
                    stage: Stage::ReadState { req: want, acc, acks },
                    ..
                }) = &mut self.pending
                {
                    if *want == req {
                        acc.join_assign(&state);
                        acks.insert(src);
                    }
                }
            }
            TsMsg::WriteState { state, req } => {
                self.snap.join_assign(&state);
                step.send(src, TsMsg::WriteStateAck { req });
            }
            TsMsg::WriteStateAck { req } => {
                if let Some(TsPending {
                    stage: Stage::WriteState { req: want, acks, .. },
                    ..
                }) = &mut self.pending
                {
                    if *want == req {
                        acks.insert(src);
                    }
                }
            }
            TsMsg::WriteView { view, tag, req } => {
                self.v.entry(tag).or_default().join_assign(&view);
                step.send(src, TsMsg::ViewAck { req });
            }
            TsMsg::ViewAck { req } => {
                if let Some(TsPending {
                    stage: Stage::WriteView { req: want, acks },
                    ..
                }) = &mut self.pending
                {
                    if *want == req {
                        acks.insert(src);
                    }
                }
            }
            TsMsg::La { tag, state } => {
                self.la_deliver(tag, src, &state, &mut step);
            }
        }
        self.pump(&mut step);
        step
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{
        run, CrashSpec, CrashTrigger, DelayModel, EventKind, Execution, Outgoing, RunOutcome,
        ScriptEntry, SimConfig,
    };

    fn pay(label: &str) -> Payload {
        Payload::label(label)
    }

    fn tv(label: &str, ts: Tag, writer: u32) -> TaggedValue {
        TaggedValue::new(pay(label), Timestamp::new(ts, NodeId(writer)))
    }

    fn sv(entries: &[(u32, TaggedValue)]) -> SnapVector {
        let mut v = SnapVector::new();
        for (j, val) in entries {
            v.update_max(NodeId(*j), val.clone());
        }
        v
    }

    // -- the vector lattice -------------------------------------------------

    #[test]
    fn join_is_entrywise_newest() {
        let a = sv(&[(1, tv("a1", 1, 1)), (2, tv("b2", 2, 2))]);
        let b = sv(&[(1, tv("a3", 3, 1)), (3, tv("c1", 1, 3))]);
        let j = a.join(&b);
        assert_eq!(j.get(NodeId(1)), Some(&tv("a3", 3, 1)));
        assert_eq!(j.get(NodeId(2)), Some(&tv("b2", 2, 2)));
        assert_eq!(j.get(NodeId(3)), Some(&tv("c1", 1, 3)));
        assert!(a.leq(&j) && b.leq(&j));
        assert!(!j.leq(&a));
        assert!(SnapVector::new().leq(&a), "⊥ below everything");
    }

    #[test]
    fn stale_value_does_not_regress_an_entry() {
        let mut v = sv(&[(1, tv("new", 5, 1))]);
        v.update_max(NodeId(1), tv("old", 2, 1));
        assert_eq!(v.get(NodeId(1)), Some(&tv("new", 5, 1)));
    }

    #[test]
    fn single_participant_instance_decides_its_input() {
        // n=3, f=1: with echoes from one peer, the sole participant's
        // decision must equal its input — validity pins it from both sides.
        let input = sv(&[(1, tv("a", 1, 1))]);
        let mut e: ElaEngine<SnapVector> = ElaEngine::new(NodeId(1), 3, 1);
        let eff = e.start(input.clone()).unwrap();
        assert_eq!(eff.echo, Vec::from([input.clone()]));
        // Own broadcast loops back, then the peer's echo arrives.
        e.on_atoms(NodeId(1), core::slice::from_ref(&input));
        let eff = e.on_atoms(NodeId(2), core::slice::from_ref(&input));
        assert_eq!(eff.decided, Some(input));
    }

    #[test]
    fn vector_messages_roundtrip_through_json() {
        let msg = TsMsg::WriteView {
            view: sv(&[(1, tv("a", 1, 1)), (3, tv("c", 7, 3))]),
            tag: 4,
            req: 9,
        };
        let text = serde_json::to_string(&msg).expect("serialize");
        let back: TsMsg = serde_json::from_str(&text).expect("deserialize");
        assert_eq!(msg, back);
    }

    // -- hand-fed choreographies --------------------------------------------

    /// Feed a full quorum procedure by hand: ack from self and node 2.
    fn ack2(a: &mut TsAutomaton, mk: impl Fn() -> TsMsg) -> Step<TsMsg, TsResp> {
        a.on_message(NodeId(1), mk());
        a.on_message(NodeId(2), mk())
    }

    fn broadcast_req(step: &Step<TsMsg, TsResp>, pick: impl Fn(&TsMsg) -> Option<u64>) -> u64 {
        step.outgoing
            .iter()
            .find_map(|o| match o {
                Outgoing::Broadcast { msg, .. } => pick(msg),
                _ => None,
            })
            .expect("expected broadcast missing")
    }

    #[test]
    fn one_tag_bump_forces_the_second_phase() {
        // Scan at node 1, n=3, f=1; a concurrent writeTag(2) spoils phase 1
        // after its instance decided, so phase 2 runs at tag 2 and returns
        // directly.
        let mut a = TsAutomaton::new(NodeId(1), 3, 1);
        let step = a.on_invoke(TsOp::Scan).unwrap();
        let rreq = broadcast_req(&step, |m| match m {
            TsMsg::ReadTag { req } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::ReadTagAck { tag: 0, req: rreq });
        // r = max(0, 0+1) = 1.
        let wreq = broadcast_req(&s, |m| match m {
            TsMsg::WriteTag { tag: 1, req } => Some(*req),
            _ => None,
        });

        // The competing tag lands now.
        a.on_message(NodeId(3), TsMsg::WriteTag { tag: 2, req: 77 });

        let s = ack2(&mut a, || TsMsg::WriteTagAck { tag: 1, req: wreq });
        let rsreq = broadcast_req(&s, |m| match m {
            TsMsg::ReadState { req } => Some(*req),
            _ => None,
        });
        let peer_state = sv(&[(2, tv("u", 1, 2))]);
        a.on_message(
            NodeId(1),
            TsMsg::ReadStateAck {
                state: SnapVector::new(),
                req: rsreq,
            },
        );
        let s = a.on_message(
            NodeId(2),
            TsMsg::ReadStateAck {
                state: peer_state.clone(),
                req: rsreq,
            },
        );
        let wsreq = broadcast_req(&s, |m| match m {
            TsMsg::WriteState { req, .. } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::WriteStateAck { req: wsreq });
        // Instance 1 started and broadcast its input.
        assert!(s.outgoing.iter().any(|o| matches!(
            o,
            Outgoing::Broadcast { msg: TsMsg::La { tag: 1, .. }, .. }
        )));
        // Echoes: own loopback plus node 2 echoing the same vector.
        a.on_message(
            NodeId(1),
            TsMsg::La {
                tag: 1,
                state: peer_state.clone(),
            },
        );
        let s = a.on_message(
            NodeId(2),
            TsMsg::La {
                tag: 1,
                state: peer_state.clone(),
            },
        );
        // Decided: the post-instance readTag goes out.
        let rreq2 = broadcast_req(&s, |m| match m {
            TsMsg::ReadTag { req } => Some(*req),
            _ => None,
        });
        // Acks now carry the bumped tag 2 > 1: phase 1 misses, phase 2
        // starts with a fresh readTag.
        let s = ack2(&mut a, || TsMsg::ReadTagAck { tag: 2, req: rreq2 });
        assert!(s.response.is_none());
        let rreq3 = broadcast_req(&s, |m| match m {
            TsMsg::ReadTag { req } => Some(*req),
            _ => None,
        });

        // Phase 2 at r = max(2, 1+1) = 2, uncontested this time.
        let s = ack2(&mut a, || TsMsg::ReadTagAck { tag: 2, req: rreq3 });
        let wreq2 = broadcast_req(&s, |m| match m {
            TsMsg::WriteTag { tag: 2, req } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::WriteTagAck { tag: 2, req: wreq2 });
        let rsreq2 = broadcast_req(&s, |m| match m {
            TsMsg::ReadState { req } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::ReadStateAck {
            state: peer_state.clone(),
            req: rsreq2,
        });
        let wsreq2 = broadcast_req(&s, |m| match m {
            TsMsg::WriteState { req, .. } => Some(*req),
            _ => None,
        });
        ack2(&mut a, || TsMsg::WriteStateAck { req: wsreq2 });
        a.on_message(
            NodeId(1),
            TsMsg::La {
                tag: 2,
                state: peer_state.clone(),
            },
        );
        let s = a.on_message(
            NodeId(2),
            TsMsg::La {
                tag: 2,
                state: peer_state.clone(),
            },
        );
        let rreq4 = broadcast_req(&s, |m| match m {
            TsMsg::ReadTag { req } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::ReadTagAck { tag: 2, req: rreq4 });
        // maxTag 2 ≤ r 2: direct. The view write must complete first.
        assert!(s.response.is_none());
        let vreq = broadcast_req(&s, |m| match m {
            TsMsg::WriteView { tag: 2, req, .. } => Some(*req),
            _ => None,
        });
        let s = ack2(&mut a, || TsMsg::ViewAck { req: vreq });
        match s.response.expect("phase-2 direct return") {
            TsResp::Snap {
                view, tag, direct, ..
            } => {
                assert_eq!(view, peer_state);
                assert_eq!(tag, 2);
                assert!(direct);
            }
            other => panic!("expected Snap, got {other:?}"),
        }
    }

    #[test]
    fn blocked_second_phase_borrows_the_published_view() {
        // Drive a scan through two spoiled phases, then unblock it with a
        // writeView for its final tag.
        let mut a = TsAutomaton::new(NodeId(1), 3, 1);
        let step = a.on_invoke(TsOp::Scan).unwrap();
        let mut rreq = broadcast_req(&step, |m| match m {
            TsMsg::ReadTag { req } => Some(*req),
            _ => None,
        });

        let published = sv(&[(2, tv("u", 1, 2))]);
        for (phase_tag, bump) in [(1u64, 2u64), (2, 3)] {
            let s = ack2(&mut a, || TsMsg::ReadTagAck {
                tag: phase_tag - 1,
                req: rreq,
            });
            let wreq = broadcast_req(&s, |m| match m {
                TsMsg::WriteTag { tag, req } if *tag == phase_tag => Some(*req),
                _ => None,
            });
            // The spoiler arrives while the tag write is in flight.
            a.on_message(NodeId(3), TsMsg::WriteTag { tag: bump, req: 99 });
            let s = ack2(&mut a, || TsMsg::WriteTagAck {
                tag: phase_tag,
                req: wreq,
            });
            let rsreq = broadcast_req(&s, |m| match m {
                TsMsg::ReadState { req } => Some(*req),
                _ => None,
            });
            let s = ack2(&mut a, || TsMsg::ReadStateAck {
                state: published.clone(),
                req: rsreq,
            });
            let wsreq = broadcast_req(&s, |m| match m {
                TsMsg::WriteState { req, .. } => Some(*req),
                _ => None,
            });
            ack2(&mut a, || TsMsg::WriteStateAck { req: wsreq });
            a.on_message(
                NodeId(1),
                TsMsg::La {
                    tag: phase_tag,
                    state: published.clone(),
                },
            );
            let s = a.on_message(
                NodeId(2),
                TsMsg::La {
                    tag: phase_tag,
                    state: published.clone(),
                },
            );
            let rr = broadcast_req(&s, |m| match m {
                TsMsg::ReadTag { req } => Some(*req),
                _ => None,
            });
            // Acks report the bumped tag: the phase misses.
            let s = ack2(&mut a, || TsMsg::ReadTagAck { tag: bump, req: rr });
            assert!(s.response.is_none(), "phase {phase_tag} must miss");
            if phase_tag == 1 {
                rreq = broadcast_req(&s, |m| match m {
                    TsMsg::ReadTag { req } => Some(*req),
                    _ => None,
                });
            }
        }
        assert!(!a.is_idle(), "blocked waiting for a published view");

        // Somebody publishes a view for tag 2: the wait completes, and the
        // view counts as borrowed.
        let s = a.on_message(
            NodeId(2),
            TsMsg::WriteView {
                view: published.clone(),
                tag: 2,
                req: 55,
            },
        );
        match s.response.expect("borrowed view") {
            TsResp::Snap {
                view, tag, direct, ..
            } => {
                assert_eq!(view, published);
                assert_eq!(tag, 2);
                assert!(!direct);
            }
            other => panic!("expected Snap, got {other:?}"),
        }
    }

    // -- simulated end-to-end runs -------------------------------------------

    fn ts_run(config: &SimConfig, script: &[ScriptEntry<TsOp>]) -> Execution<TsAutomaton> {
        run(
            config,
            |id| TsAutomaton::new(id, config.n, config.f),
            script,
        )
        .expect("run")
    }

    fn responses(exec: &Execution<TsAutomaton>) -> Vec<(NodeId, TsResp)> {
        exec.trace
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Respond { node, resp } => Some((*node, resp.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn fresh_scan_returns_all_initial_values() {
        let config = SimConfig::fixed(3, 1, 100);
        let exec = ts_run(
            &config,
            &[ScriptEntry {
                t: 0,
                node: NodeId(1),
                op: TsOp::Scan,
            }],
        );
        assert_eq!(exec.trace.outcome, RunOutcome::Quiescent);
        let rs = responses(&exec);
        assert_eq!(rs.len(), 1);
        match &rs[0].1 {
            TsResp::Snap { snap, direct, .. } => {
                assert_eq!(snap, &Snapshot::empty(3));
                assert!(direct);
            }
            other => panic!("expected Snap, got {other:?}"),
        }
    }

    #[test]
    fn scan_after_update_sees_at_least_that_value() {
        let d = 100;
        let config = SimConfig::fixed(3, 1, d);
        let exec = ts_run(
            &config,
            &[
                ScriptEntry {
                    t: 0,
                    node: NodeId(2),
                    op: TsOp::Update { payload: pay("u") },
                },
                ScriptEntry {
                    t: 60 * d,
                    node: NodeId(1),
                    op: TsOp::Scan,
                },
            ],
        );
        assert_eq!(exec.trace.outcome, RunOutcome::Quiescent);
        let snap_view = responses(&exec)
            .iter()
            .find_map(|(_, r)| match r {
                TsResp::Snap { view, .. } => Some(view.clone()),
                _ => None,
            })
            .expect("scan response");
        let entry = snap_view.get(NodeId(2)).expect("writer present");
        assert!(entry.ts >= Timestamp::new(1, NodeId(2)));
        assert_eq!(entry.payload, pay("u"));
    }

    #[test]
    fn sequential_updates_count_timestamps_up() {
        let d = 100;
        let config = SimConfig::fixed(3, 1, d);
        let script: Vec<ScriptEntry<TsOp>> = (0..3u64)
            .map(|k| ScriptEntry {
                t: k * 80 * d,
                node: NodeId(1),
                op: TsOp::Update {
                    payload: pay(&format!("v{k}")),
                },
            })
            .collect();
        let exec = ts_run(&config, &script);
        let stamps: Vec<Tag> = responses(&exec)
            .iter()
            .filter_map(|(_, r)| match r {
                TsResp::Ack { value, .. } => Some(value.ts.tag),
                _ => None,
            })
            .collect();
        assert_eq!(stamps, Vec::from([1, 2, 3]));
    }

    #[test]
    fn update_completes_despite_f_crashes() {
        let d = 100;
        let mut config = SimConfig::fixed(5, 2, d);
        config.crashes = Vec::from([
            CrashSpec {
                node: NodeId(4),
                trigger: CrashTrigger::AtTime(0),
            },
            CrashSpec {
                node: NodeId(5),
                trigger: CrashTrigger::AtTime(0),
            },
        ]);
        let exec = ts_run(
            &config,
            &[ScriptEntry {
                t: 0,
                node: NodeId(1),
                op: TsOp::Update { payload: pay("a") },
            }],
        );
        assert_eq!(exec.trace.outcome, RunOutcome::Quiescent);
        assert_eq!(responses(&exec).len(), 1);
    }

    #[test]
    fn concurrent_operations_return_comparable_views() {
        for seed in 0..10 {
            let d = 100;
            let config = SimConfig {
                delay: DelayModel::Uniform { d_min: 1, seed },
                ..SimConfig::fixed(3, 1, d)
            };
            let script = [
                ScriptEntry {
                    t: 0,
                    node: NodeId(1),
                    op: TsOp::Update { payload: pay("a") },
                },
                ScriptEntry {
                    t: 0,
                    node: NodeId(2),
                    op: TsOp::Update { payload: pay("b") },
                },
                ScriptEntry {
                    t: 0,
                    node: NodeId(3),
                    op: TsOp::Scan,
                },
            ];
            let exec = ts_run(&config, &script);
            assert_eq!(exec.trace.outcome, RunOutcome::Quiescent, "seed {seed}");
            let rs = responses(&exec);
            assert_eq!(rs.len(), 3, "seed {seed}");
            for (_, x) in &rs {
                for (_, y) in &rs {
                    let (a, b) = (x.view(), y.view());
                    assert!(
                        a.leq(b) || b.leq(a),
                        "seed {seed}: views must be comparable"
                    );
                }
            }
            // An update's view covers its own value.
            for (_, r) in &rs {
                if let TsResp::Ack { value, view, .. } = r {
                    let entry = view.get(value.ts.writer).expect("own entry present");
                    assert!(entry.ts >= value.ts);
                }
            }
        }
    }
}
