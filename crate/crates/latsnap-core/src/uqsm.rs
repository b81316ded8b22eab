//! Linearizable update-query state machine.
//!
//! A thin shell over the amortized-constant-round snapshot object for state
//! machines whose updates all commute: an update command funnels into
//! `update(payload)`, and a query runs the scan machinery but keeps the
//! renewal *view* — the set of update commands — instead of extracting a
//! per-writer snapshot. The reply folds those commands into the machine's
//! state; with commuting updates the fold order cannot matter, and the
//! snapshot object's view comparability is what makes replies linearizable.
//!
//! The built-in machine is the simplest commutative one: a grow-only set,
//! folded by union over the payloads in the view.

use alloc::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::acaso::{AcAutomaton, AcMsg, AcOp, AcResp};
use crate::lattice::{NodeId, Payload, Tag, TaggedValue, View};
use crate::simnet::{Automaton, InvokeError, Step};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum UqOp {
    Update { payload: Payload },
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum UqResp {
    /// Update acknowledged; the written command and its view ride along for
    /// the checkers.
    Ok {
        value: TaggedValue,
        view: View,
        tag: Tag,
        direct: bool,
    },
    /// Query reply: the folded state, with the view it was folded from.
    Reply {
        state: BTreeSet<Payload>,
        view: View,
        tag: Tag,
        direct: bool,
    },
}

impl UqResp {
    pub fn view(&self) -> &View {
        match self {
            UqResp::Ok { view, .. } | UqResp::Reply { view, .. } => view,
        }
    }
}

/// Fold a view's update commands into the grow-only set state.
pub fn apply(view: &View) -> BTreeSet<Payload> {
    view.iter().map(|v| v.payload.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct UqAutomaton {
    inner: AcAutomaton,
}

impl UqAutomaton {
    pub fn new(me: NodeId, n: usize, f: usize) -> Self {
        UqAutomaton {
            inner: AcAutomaton::new(me, n, f),
        }
    }

    fn relabel(step: Step<AcMsg, AcResp>) -> Step<AcMsg, UqResp> {
        let mut out = Step::new();
        out.outgoing = step.outgoing;
        out.notes = step.notes;
        out.response = step.response.map(|resp| match resp {
            AcResp::Ack {
                value,
                view,
                tag,
                direct,
            } => UqResp::Ok {
                value,
                view,
                tag,
                direct,
            },
            AcResp::Snap {
                view, tag, direct, ..
            } => UqResp::Reply {
                state: apply(&view),
                view,
                tag,
                direct,
            },
        });
        out
    }
}

impl Automaton for UqAutomaton {
    type Msg = AcMsg;
    type Op = UqOp;
    type Resp = UqResp;

    fn on_invoke(&mut self, op: UqOp) -> Result<Step<AcMsg, UqResp>, InvokeError> {
        let inner_op = match op {
            UqOp::Update { payload } => AcOp::Update { payload },
            UqOp::Query => AcOp::Scan,
        };
        self.inner.on_invoke(inner_op).map(Self::relabel)
    }

    fn on_message(&mut self, src: NodeId, msg: AcMsg) -> Step<AcMsg, UqResp> {
        Self::relabel(self.inner.on_message(src, msg))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
