//! Early-stopping lattice agreement.
//!
//! Every node starts with an input element of a join semi-lattice,
//! broadcasts it, and re-broadcasts each element it learns — once. Node `i`
//! tracks a view vector `V` where `V[j]` is the join of everything received
//! from `j` and `V[i]` additionally absorbs it all. The node decides the
//! first time the equivalence quorum holds — at least `n − f` entries equal
//! to `V[i]` — and outputs that `V[i]`.
//!
//! The point of the protocol is the *early-stopping* bound: with `k` actual
//! crashes it terminates in O(√k) rounds, not O(f). Intuitively, delaying
//! termination requires smuggling a value into the system late, which takes a
//! chain of nodes that each relay the value to exactly one successor and then
//! crash; long delays need long chains, and chains burn distinct faulty
//! nodes quadratically fast.
//!
//! The engine here is generic over the lattice so the snapshot protocols can
//! run embedded instances over other element types; the set-of-tagged-values
//! instantiation ([`ElaAutomaton`]) is the protocol proper.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lattice::{eq_quorum, JoinLattice, NodeId, TaggedValue, View};
use crate::simnet::{
    value_broadcast_label, Automaton, InvokeError, LocalNote, Message, Step,
};

// ---------------------------------------------------------------------------
// Generic engine
// ---------------------------------------------------------------------------

/// A lattice whose delivered messages decompose into *atoms*: the units the
/// echo-once guard is keyed on.
///
/// For the set lattice the atoms are the individual tagged values, so a node
/// that received `{a}` inside one message and `{a,b}` inside another only
/// ever re-broadcasts `a` once. For vector lattices the whole vector is one
/// atom.
pub trait Atomize: JoinLattice {
    type Atom: Clone + Ord + core::fmt::Debug;

    /// `self ⊔= atom`.
    fn absorb(&mut self, atom: &Self::Atom);

    /// Decompose an input element for its initial broadcast.
    fn atoms(&self) -> Vec<Self::Atom>;
}

impl Atomize for View {
    type Atom = TaggedValue;

    fn absorb(&mut self, atom: &TaggedValue) {
        self.insert(atom.clone());
    }

    fn atoms(&self) -> Vec<TaggedValue> {
        self.iter().cloned().collect()
    }
}

/// What one engine transition wants done.
#[derive(Debug, Clone, Default)]
pub struct EngineEffects<L: Atomize> {
    /// Fresh atoms to broadcast (as one message), if any.
    pub echo: Vec<L::Atom>,
    /// Output decided by this very transition (first satisfaction only).
    pub decided: Option<L>,
}

/// The protocol core, independent of message framing and timing.
///
/// The decide check runs inside every mutating call, so the decision
/// captures the first satisfying state exactly; the caller must treat each
/// call as one atomic handler execution.
#[derive(Debug, Clone)]
pub struct ElaEngine<L: Atomize> {
    me: NodeId,
    f: usize,
    input: Option<L>,
    v: Vec<L>,
    echoed: BTreeSet<L::Atom>,
    decided: Option<L>,
}

impl<L: Atomize> ElaEngine<L> {
    pub fn new(me: NodeId, n: usize, f: usize) -> Self {
        ElaEngine {
            me,
            f,
            input: None,
            v: (0..n).map(|_| L::bottom()).collect(),
            echoed: BTreeSet::new(),
            decided: None,
        }
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn started(&self) -> bool {
        self.input.is_some()
    }

    pub fn input(&self) -> Option<&L> {
        self.input.as_ref()
    }

    pub fn decided(&self) -> Option<&L> {
        self.decided.as_ref()
    }

    /// `V[j]`: the join of everything received from `j` (entry `me` also
    /// absorbs every delivery and the input).
    pub fn view_of(&self, j: NodeId) -> &L {
        &self.v[j.idx()]
    }

    /// Adopt the input, queue its broadcast, and run the decide check.
    pub fn start(&mut self, input: L) -> Result<EngineEffects<L>, InvokeError> {
        if self.started() {
            return Err(InvokeError("already started"));
        }
        let atoms = input.atoms();
        self.v[self.me.idx()].join_assign(&input);
        self.input = Some(input);
        for a in &atoms {
            self.echoed.insert(a.clone());
        }
        Ok(EngineEffects {
            echo: atoms,
            decided: self.try_decide(),
        })
    }

    /// Absorb a delivered element (as atoms) from `from`, echo whatever is
    /// new, and run the decide check.
    pub fn on_atoms(&mut self, from: NodeId, atoms: &[L::Atom]) -> EngineEffects<L> {
        for a in atoms {
            self.v[from.idx()].absorb(a);
            self.v[self.me.idx()].absorb(a);
        }
        let fresh: Vec<L::Atom> = atoms
            .iter()
            .filter(|a| self.echoed.insert((*a).clone()))
            .cloned()
            .collect();
        EngineEffects {
            echo: fresh,
            decided: self.try_decide(),
        }
    }

    /// First-satisfaction decide: `Some` exactly once, on the transition
    /// that makes the equivalence quorum true.
    fn try_decide(&mut self) -> Option<L> {
        if !self.started() || self.decided.is_some() {
            return None;
        }
        eq_quorum(&self.v, self.me, self.f)?;
        let y = self.v[self.me.idx()].clone();
        self.decided = Some(y.clone());
        Some(y)
    }
}

// ---------------------------------------------------------------------------
// The wire protocol over views
// ---------------------------------------------------------------------------

/// A value announcement: one lattice element, carried as its element set.
/// The sender's identity rides in the envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElaMsg {
    pub values: View,
}

impl Message for ElaMsg {
    fn carried_values(&self) -> Vec<TaggedValue> {
        self.values.iter().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElaOp {
    /// Start the (single-shot) agreement with this input.
    Start { input: View },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElaResp {
    /// The node decided; the start operation completes with the output.
    Decided { view: View },
}

/// Algorithm node: the engine plus message framing. Start is invoked by the
/// client script (so starts may be skewed); the operation responds when the
/// node decides, and handlers keep running afterwards.
#[derive(Debug, Clone)]
pub struct ElaAutomaton {
    engine: ElaEngine<View>,
}

impl ElaAutomaton {
    pub fn new(me: NodeId, n: usize, f: usize) -> Self {
        ElaAutomaton {
            engine: ElaEngine::new(me, n, f),
        }
    }

    pub fn engine(&self) -> &ElaEngine<View> {
        &self.engine
    }

    fn apply(&mut self, effects: EngineEffects<View>, step: &mut Step<ElaMsg, ElaResp>) {
        if !effects.echo.is_empty() {
            let values = View::from_values(effects.echo);
            step.broadcast(
                value_broadcast_label(values.iter()),
                ElaMsg { values },
            );
        }
        if let Some(view) = effects.decided {
            step.note(LocalNote::Decide {
                view: view.clone(),
                tag: None,
            });
            step.respond(ElaResp::Decided { view });
        }
    }
}

impl Automaton for ElaAutomaton {
    type Msg = ElaMsg;
    type Op = ElaOp;
    type Resp = ElaResp;

    fn on_invoke(&mut self, op: ElaOp) -> Result<Step<ElaMsg, ElaResp>, InvokeError> {
        let ElaOp::Start { input } = op;
        let mut step = Step::new();
        for value in input.iter() {
            step.note(LocalNote::ValueIntroduced {
                value: value.clone(),
            });
        }
        let effects = self.engine.start(input)?;
        self.apply(effects, &mut step);
        Ok(step)
    }

    fn on_message(&mut self, src: NodeId, msg: ElaMsg) -> Step<ElaMsg, ElaResp> {
        let atoms: Vec<TaggedValue> = msg.values.iter().cloned().collect();
        let effects = self.engine.on_atoms(src, &atoms);
        let mut step = Step::new();
        self.apply(effects, &mut step);
        step
    }
}

/// Convenience: the simultaneous-start script for inputs `x_1..x_n`.
pub fn simultaneous_start(inputs: &[View]) -> Vec<crate::simnet::ScriptEntry<ElaOp>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| crate::simnet::ScriptEntry {
            t: 0,
            node: NodeId::from_idx(i),
            op: ElaOp::Start {
                input: input.clone(),
            },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
