//! Amortized-constant-round atomic snapshot.
//!
//! The object exposes `update(v)` / `scan()` over `n` single-writer
//! segments. Both operations funnel through the same machinery:
//!
//!   * **Values** are broadcast once, tagged `⟨tag, writer⟩`, and forwarded
//!     once by every receiver, so they spread regardless of crashes.
//!   * **Tags** form a shared coarse clock. `readTag` collects `maxTag` from
//!     a quorum; `writeTag(r)` pushes `r` into a quorum, and receivers gossip
//!     it via `echoTag`. `maxTag` moves *only* on `writeTag`/`echoTag` — a
//!     value message never bumps it, which is what keeps the round
//!     complexity amortized-constant: tags advance one lattice operation at
//!     a time instead of racing ahead with every late value.
//!   * A **lattice operation** with tag `r` is one agreement attempt:
//!     `writeTag(r)`, then wait until the equivalence quorum holds over the
//!     view vector restricted to values with tag ≤ r, and capture that state
//!     the moment it first holds. The capture is *good* when no larger tag
//!     was seen meanwhile (`maxTag ≤ r`); a good capture announces itself
//!     with `goodLA(r)` so others can reuse its view.
//!   * **Renewal** runs up to three lattice operations, retagging with the
//!     current `maxTag` after each spoiled attempt. If all three are
//!     spoiled, the node stops competing and borrows the view of somebody
//!     else's good operation with the final tag — such an operation exists,
//!     because a tag can only spoil an attempt by being written, and writing
//!     it requires an earlier good operation per tag along the way.
//!
//! An update writes its value with tag `readTag()+1`, runs one warm-up
//! lattice operation (phase 0) at the read tag, then a renewal at
//! `max(r+1, maxTag)`; a scan is just a renewal at the read tag followed by
//! `extract`. Both record the renewal's view and tag, and whether the view
//! was obtained directly or borrowed — the trace checkers lean on these.
//!
//! Procedure acks (`readAck`/`writeAck`) carry back a per-call nonce so a
//! quorum wait only counts replies to its own request; without it, a
//! same-tag retry could complete on leftovers of an earlier call that never
//! reached a quorum of its own.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lattice::{
    eq_predicate, extract, NodeId, Payload, Snapshot, Tag, TaggedValue, Timestamp, View,
    ViewVector,
};
use crate::simnet::{
    value_broadcast_label, Automaton, InvokeError, LocalNote, Message, Step,
};

// ---------------------------------------------------------------------------
// Wire messages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum AcMsg {
    /// A tagged segment value, broadcast by its writer and forwarded once
    /// by every receiver.
    Value { value: TaggedValue },
    /// Push `tag` into a quorum; `req` is echoed in the matching acks.
    WriteTag { tag: Tag, req: u64 },
    WriteAck { tag: Tag, req: u64 },
    /// Receiver-side gossip of a written tag.
    EchoTag { tag: Tag },
    /// Ask a quorum for their `maxTag`.
    ReadTag { req: u64 },
    ReadAck { tag: Tag, req: u64 },
    /// The sender's lattice operation with this tag captured a good view.
    GoodLa { tag: Tag },
}

impl Message for AcMsg {
    fn carried_values(&self) -> Vec<TaggedValue> {
        match self {
            AcMsg::Value { value } => Vec::from([value.clone()]),
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Client operations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum AcOp {
    Update { payload: Payload },
    Scan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum AcResp {
    /// Update acknowledgment. `value` is the tagged value it wrote; `view`
    /// and `tag` come from its renewal, `direct` says the view was its own
    /// good capture rather than borrowed.
    Ack {
        value: TaggedValue,
        view: View,
        tag: Tag,
        direct: bool,
    },
    /// Scan result: the extracted snapshot plus the view it came from.
    Snap {
        snap: Snapshot,
        view: View,
        tag: Tag,
        direct: bool,
    },
}

impl AcResp {
    pub fn view(&self) -> &View {
        match self {
            AcResp::Ack { view, .. } | AcResp::Snap { view, .. } => view,
        }
    }

    pub fn tag(&self) -> Tag {
        match self {
            AcResp::Ack { tag, .. } | AcResp::Snap { tag, .. } => *tag,
        }
    }

    pub fn direct(&self) -> bool {
        match self {
            AcResp::Ack { direct, .. } | AcResp::Snap { direct, .. } => *direct,
        }
    }
}

// ---------------------------------------------------------------------------
// The in-flight operation's phase machine
// ---------------------------------------------------------------------------
//
// Every blocking wait of the sequential pseudocode becomes a state whose
// guard is re-evaluated after each atomic handler execution; `pump` chases
// the guards as far as they go within the same execution, so a capture
// happens in exactly the step whose delivery made it true.

#[derive(Debug, Clone)]
enum LatticeFsm {
    /// writeTag in flight: waiting for n−f matching acks.
    WriteTag {
        tag: Tag,
        req: u64,
        acks: BTreeSet<NodeId>,
    },
    /// Tag written; waiting for the equivalence quorum over `V^{≤tag}`.
    WaitEq { tag: Tag },
}

#[derive(Debug, Clone)]
enum OpFsm {
    /// readTag in flight: collecting acks and the largest tag seen in them.
    ReadTag {
        req: u64,
        best: Tag,
        acks: BTreeSet<NodeId>,
    },
    /// Update warm-up lattice operation at the read tag `r`.
    Phase0 { r: Tag, lat: LatticeFsm },
    /// Renewal attempt 1–3.
    Renewal { phase: u8, lat: LatticeFsm },
    /// Three spoiled attempts: waiting to borrow a good view with this tag.
    WaitBorrow { tag: Tag },
}

impl OpFsm {
    fn lattice_mut(&mut self) -> Option<&mut LatticeFsm> {
        match self {
            OpFsm::Phase0 { lat, .. } | OpFsm::Renewal { lat, .. } => Some(lat),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum OpKind {
    /// `value` is fixed once readTag yields the timestamp.
    Update {
        payload: Payload,
        value: Option<TaggedValue>,
    },
    Scan,
}

#[derive(Debug, Clone)]
struct PendingOp {
    kind: OpKind,
    fsm: OpFsm,
}

enum Stepped {
    Blocked(OpFsm),
    Moved(OpFsm),
    Finished,
}

// ---------------------------------------------------------------------------
// The automaton
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AcAutomaton {
    me: NodeId,
    n: usize,
    f: usize,
    /// `v.get(j)`: values received from `j`; the own entry absorbs everything.
    v: ViewVector,
    /// Largest tag seen via writeTag/echoTag — never via value messages.
    max_tag: Tag,
    /// Last borrowed view per sender, as announced by their goodLA.
    d: Vec<View>,
    /// First good view seen per tag; what a borrow wait actually consumes.
    /// Pinning the first receipt keeps a pending borrow immune to the same
    /// sender completing another good operation in the meantime.
    borrowable: BTreeMap<Tag, View>,
    /// Forward-once guard for value messages.
    seen: BTreeSet<TaggedValue>,
    next_req: u64,
    pending: Option<PendingOp>,
}

impl AcAutomaton {
    pub fn new(me: NodeId, n: usize, f: usize) -> Self {
        AcAutomaton {
            me,
            n,
            f,
            v: ViewVector::new(n),
            max_tag: 0,
            d: (0..n).map(|_| View::new()).collect(),
            borrowable: BTreeMap::new(),
            seen: BTreeSet::new(),
            next_req: 0,
            pending: None,
        }
    }

    pub fn max_tag(&self) -> Tag {
        self.max_tag
    }

    pub fn views(&self) -> &ViewVector {
        &self.v
    }

    pub fn borrowed_from(&self, j: NodeId) -> &View {
        &self.d[j.idx()]
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

    /// Begin a lattice operation: announce the tag and wait for its acks.
    fn start_lattice(&mut self, tag: Tag, step: &mut Step<AcMsg, AcResp>) -> LatticeFsm {
        let req = self.fresh_req();
        step.note(LocalNote::LatticeStart { tag });
        step.broadcast(format!("writeTag:{tag}"), AcMsg::WriteTag { tag, req });
        LatticeFsm::WriteTag {
            tag,
            req,
            acks: BTreeSet::new(),
        }
    }

    /// Chase the lattice operation's guards; `Some((good, view, tag))` when
    /// it completes in this very execution.
    fn lattice_advance(
        &mut self,
        lat: &mut LatticeFsm,
        step: &mut Step<AcMsg, AcResp>,
    ) -> Option<(bool, View, Tag)> {
        loop {
            match lat {
                LatticeFsm::WriteTag { tag, acks, .. } => {
                    if acks.len() < self.quorum() {
                        return None;
                    }
                    *lat = LatticeFsm::WaitEq { tag: *tag };
                }
                LatticeFsm::WaitEq { tag } => {
                    let tag = *tag;
                    let restricted = self.v.filter_by_tag(tag);
                    eq_predicate(&restricted, self.me, self.f)?;
                    // First satisfaction: capture now, decide goodness now.
                    let view = restricted.get(self.me).clone();
                    let good = self.max_tag <= tag;
                    if good {
                        step.broadcast(format!("goodLA:{tag}"), AcMsg::GoodLa { tag });
                    }
                    step.note(LocalNote::LatticeEnd {
                        tag,
                        good,
                        view: good.then(|| view.clone()),
                    });
                    return Some((good, view, tag));
                }
            }
        }
    }

    /// readTag finished with `r`: broadcast the update's value (if any) and
    /// enter the first lattice operation.
    fn after_read_tag(
        &mut self,
        kind: &mut OpKind,
        r: Tag,
        step: &mut Step<AcMsg, AcResp>,
    ) -> OpFsm {
        match kind {
            OpKind::Update { payload, value } => {
                let tv = TaggedValue::new(payload.clone(), Timestamp::new(r + 1, self.me));
                *value = Some(tv.clone());
                self.seen.insert(tv.clone());
                step.note(LocalNote::ValueIntroduced { value: tv.clone() });
                step.broadcast(value_broadcast_label([&tv]), AcMsg::Value { value: tv });
                OpFsm::Phase0 {
                    r,
                    lat: self.start_lattice(r, step),
                }
            }
            OpKind::Scan => OpFsm::Renewal {
                phase: 1,
                lat: self.start_lattice(r, step),
            },
        }
    }

    fn finish(
        &self,
        kind: &mut OpKind,
        view: View,
        tag: Tag,
        direct: bool,
        step: &mut Step<AcMsg, AcResp>,
    ) {
        match kind {
            OpKind::Update { value, .. } => step.respond(AcResp::Ack {
                value: value.take().expect("timestamp fixed by readTag"),
                view,
                tag,
                direct,
            }),
            OpKind::Scan => step.respond(AcResp::Snap {
                snap: extract(&view, self.n),
                view,
                tag,
                direct,
            }),
        }
    }

    /// One guard-check pass; true when the phase machine moved.
    fn advance(&mut self, step: &mut Step<AcMsg, AcResp>) -> bool {
        let Some(PendingOp { mut kind, fsm }) = self.pending.take() else {
            return false;
        };
        let stepped = match fsm {
            OpFsm::ReadTag { req, best, acks } => {
                if acks.len() >= self.quorum() {
                    Stepped::Moved(self.after_read_tag(&mut kind, best, step))
                } else {
                    Stepped::Blocked(OpFsm::ReadTag { req, best, acks })
                }
            }
            OpFsm::Phase0 { r, mut lat } => match self.lattice_advance(&mut lat, step) {
                None => Stepped::Blocked(OpFsm::Phase0 { r, lat }),
                // Phase 0's result is deliberately ignored: it exists to pin
                // the value's spread, not to produce the operation's view.
                Some(_) => {
                    let r2 = Tag::max(r + 1, self.max_tag);
                    Stepped::Moved(OpFsm::Renewal {
                        phase: 1,
                        lat: self.start_lattice(r2, step),
                    })
                }
            },
            OpFsm::Renewal { phase, mut lat } => match self.lattice_advance(&mut lat, step) {
                None => Stepped::Blocked(OpFsm::Renewal { phase, lat }),
                Some((true, view, tag)) => {
                    self.finish(&mut kind, view, tag, true, step);
                    Stepped::Finished
                }
                Some((false, _, tag)) => {
                    if phase < 3 {
                        let r2 = self.max_tag;
                        Stepped::Moved(OpFsm::Renewal {
                            phase: phase + 1,
                            lat: self.start_lattice(r2, step),
                        })
                    } else {
                        // Third spoiled attempt: keep its tag and borrow.
                        Stepped::Moved(OpFsm::WaitBorrow { tag })
                    }
                }
            },
            OpFsm::WaitBorrow { tag } => match self.borrowable.get(&tag) {
                Some(view) => {
                    let view = view.clone();
                    self.finish(&mut kind, view, tag, false, step);
                    Stepped::Finished
                }
                None => Stepped::Blocked(OpFsm::WaitBorrow { tag }),
            },
        };
        match stepped {
            Stepped::Blocked(fsm) => {
                self.pending = Some(PendingOp { kind, fsm });
                false
            }
            Stepped::Moved(fsm) => {
                self.pending = Some(PendingOp { kind, fsm });
                true
            }
            Stepped::Finished => true,
        }
    }

    fn pump(&mut self, step: &mut Step<AcMsg, AcResp>) {
        while self.advance(step) {}
    }
}

impl Automaton for AcAutomaton {
    type Msg = AcMsg;
    type Op = AcOp;
    type Resp = AcResp;

    fn on_invoke(&mut self, op: AcOp) -> Result<Step<AcMsg, AcResp>, InvokeError> {
        if self.pending.is_some() {
            return Err(InvokeError("operation already in flight"));
        }
        let kind = match op {
            AcOp::Update { payload } => OpKind::Update {
                payload,
                value: None,
            },
            AcOp::Scan => OpKind::Scan,
        };
        let req = self.fresh_req();
        let mut step = Step::new();
        step.broadcast(String::from("readTag"), AcMsg::ReadTag { req });
        self.pending = Some(PendingOp {
            kind,
            fsm: OpFsm::ReadTag {
                req,
                best: 0,
                acks: BTreeSet::new(),
            },
        });
        self.pump(&mut step);
        Ok(step)
    }

    fn on_message(&mut self, src: NodeId, msg: AcMsg) -> Step<AcMsg, AcResp> {
        let mut step = Step::new();
        match msg {
            AcMsg::Value { value } => {
                self.v.get_mut(src).insert(value.clone());
                self.v.get_mut(self.me).insert(value.clone());
                if self.seen.insert(value.clone()) {
                    step.broadcast(value_broadcast_label([&value]), AcMsg::Value { value });
                }
                // Deliberately no maxTag update here.
            }
            AcMsg::WriteTag { tag, req } => {
                self.max_tag = self.max_tag.max(tag);
                step.broadcast(format!("echoTag:{tag}"), AcMsg::EchoTag { tag });
                step.send(src, AcMsg::WriteAck { tag, req });
            }
            AcMsg::EchoTag { tag } => {
                self.max_tag = self.max_tag.max(tag);
            }
            AcMsg::ReadTag { req } => {
                step.send(
                    src,
                    AcMsg::ReadAck {
                        tag: self.max_tag,
                        req,
                    },
                );
            }
            AcMsg::ReadAck { tag, req } => {
                if let Some(PendingOp {
                    fsm: OpFsm::ReadTag { req: want, best, acks },
                    ..
                }) = &mut self.pending
                {
                    if *want == req {
                        acks.insert(src);
                        *best = (*best).max(tag);
                    }
                }
            }
            AcMsg::WriteAck { tag, req } => {
                if let Some(op) = &mut self.pending {
                    if let Some(LatticeFsm::WriteTag {
                        tag: want_tag,
                        req: want_req,
                        acks,
                    }) = op.fsm.lattice_mut()
                    {
                        if *want_req == req && *want_tag == tag {
                            acks.insert(src);
                        }
                    }
                }
            }
            AcMsg::GoodLa { tag } => {
                // FIFO delivery means everything the sender's good capture
                // contained arrived before this message, so the restriction
                // of their entry is exactly their good view.
                let borrowed = self.v.get(src).filter_by_tag(tag);
                self.d[src.idx()] = borrowed.clone();
                self.borrowable.entry(tag).or_insert(borrowed);
            }
        }
        self.pump(&mut step);
        step
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
