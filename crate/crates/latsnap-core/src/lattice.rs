//! Join semi-lattice of tagged values.
//!
//! The protocols in this crate agree on *views*: finite sets of
//! [`TaggedValue`]s ordered by inclusion, joined by union. A view vector
//! holds one view per node and is the whole of a protocol participant's
//! knowledge about who has relayed what.
//!
//! ```text
//!            {a,b}
//!            /   \
//!         {a}     {b}        join = set union
//!            \   /           leq  = set inclusion
//!             {}
//! ```
//!
//! Two views are *comparable* when one includes the other; lattice agreement
//! guarantees that all decided views form a chain under inclusion.
//!
//! The decision rule shared by the protocols is the *equivalence quorum*
//! predicate [`eq_predicate`]: node `i` may decide once at least `n - f`
//! entries of its view vector (including its own) are equal to entry `i`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// A node identifier in `1..=n`.
///
/// Zero is never a valid node id; keeping ids 1-based matches the on-wire
/// and on-trace rendering, and `idx()` converts to a 0-based vector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// 0-based index for vector storage.
    pub fn idx(self) -> usize {
        debug_assert!(self.0 >= 1, "node ids are 1-based");
        (self.0 - 1) as usize
    }

    /// Node id for a 0-based index.
    pub fn from_idx(idx: usize) -> Self {
        NodeId(idx as u32 + 1)
    }

    /// All node ids of an `n`-node system, ascending.
    pub fn all(n: usize) -> impl Iterator<Item = NodeId> {
        (1..=n as u32).map(NodeId)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Lattice-operation / value tag. Tags start at 1; 0 means "nothing yet".
pub type Tag = u64;

// ---------------------------------------------------------------------------
// Values
// ---------------------------------------------------------------------------

/// An opaque application payload: raw bytes plus an optional human-readable
/// label. The label participates in identity and ordering (after the bytes)
/// so that test fixtures can be written with labels alone.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Payload {
    /// Raw bytes; base64 on the wire.
    #[serde(
        default,
        skip_serializing_if = "Vec::is_empty",
        serialize_with = "ser_base64",
        deserialize_with = "de_base64"
    )]
    pub bytes: Vec<u8>,
    /// Optional human-readable label; empty when absent.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

fn ser_base64<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    use base64::Engine;
    s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
}

fn de_base64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    use base64::Engine;
    let s = String::deserialize(d)?;
    base64::engine::general_purpose::STANDARD
        .decode(&s)
        .map_err(serde::de::Error::custom)
}

impl Payload {
    /// Payload with the given label and no bytes. Handy in tests and
    /// hand-written scenarios.
    pub fn label(label: &str) -> Self {
        Payload {
            bytes: Vec::new(),
            label: String::from(label),
        }
    }

    /// Payload with the given bytes and no label.
    pub fn bytes(bytes: &[u8]) -> Self {
        Payload {
            bytes: bytes.to_vec(),
            label: String::new(),
        }
    }
}

/// A logical timestamp `(tag, writer)`, totally ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub tag: Tag,
    pub writer: NodeId,
}

impl Timestamp {
    pub fn new(tag: Tag, writer: NodeId) -> Self {
        Timestamp { tag, writer }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.tag, self.writer)
    }
}

/// A payload bound to the timestamp its writer assigned it.
///
/// Identity is the whole pair: two writes of equal bytes under different
/// timestamps are distinct lattice elements. The canonical order is by
/// timestamp first, then payload, so serialized views are byte-stable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedValue {
    pub payload: Payload,
    pub ts: Timestamp,
}

impl TaggedValue {
    pub fn new(payload: Payload, ts: Timestamp) -> Self {
        TaggedValue { payload, ts }
    }

    /// Short deterministic identity string, used to label broadcasts so that
    /// crash schedules can target the broadcast of one particular value.
    pub fn key(&self) -> String {
        use fmt::Write;
        let mut s = String::new();
        let _ = write!(s, "t{}w{}", self.ts.tag, self.ts.writer.0);
        if !self.payload.bytes.is_empty() {
            s.push('x');
            for b in &self.payload.bytes {
                let _ = write!(s, "{b:02x}");
            }
        }
        if !self.payload.label.is_empty() {
            s.push('.');
            s.push_str(&self.payload.label);
        }
        s
    }
}

impl Ord for TaggedValue {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        // Canonical order: timestamp first, then payload bytes, then label.
        (self.ts, &self.payload.bytes, &self.payload.label).cmp(&(
            other.ts,
            &other.payload.bytes,
            &other.payload.label,
        ))
    }
}

impl PartialOrd for TaggedValue {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

// ---------------------------------------------------------------------------
// Join semi-lattice
// ---------------------------------------------------------------------------

/// A join semi-lattice with a bottom element.
///
/// Laws (checked by property tests, not by the compiler):
/// join is associative, commutative and idempotent; `bottom` is its unit;
/// `a.leq(b)` iff `a.join(b) == b`.
pub trait JoinLattice: Clone + Eq + Ord {
    /// The least element.
    fn bottom() -> Self;

    /// `self <- self ⊔ other`.
    fn join_assign(&mut self, other: &Self);

    /// Lattice order: `self ≤ other`.
    fn leq(&self, other: &Self) -> bool;

    /// `self ⊔ other` by value.
    fn join(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.join_assign(other);
        out
    }

    /// True when the two elements are ordered one way or the other.
    fn comparable(&self, other: &Self) -> bool {
        self.leq(other) || other.leq(self)
    }
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

/// A finite set of tagged values: one element of the set-union lattice.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct View(pub BTreeSet<TaggedValue>);

impl View {
    pub fn new() -> Self {
        View(BTreeSet::new())
    }

    pub fn singleton(v: TaggedValue) -> Self {
        let mut s = BTreeSet::new();
        s.insert(v);
        View(s)
    }

    pub fn from_values(vs: impl IntoIterator<Item = TaggedValue>) -> Self {
        View(vs.into_iter().collect())
    }

    pub fn insert(&mut self, v: TaggedValue) -> bool {
        self.0.insert(v)
    }

    pub fn contains(&self, v: &TaggedValue) -> bool {
        self.0.contains(v)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaggedValue> {
        self.0.iter()
    }

    /// The sub-view of values whose tag is at most `tag`.
    ///
    /// Filtering is monotone and idempotent; filtering at tag 0 yields the
    /// empty view because value tags start at 1.
    pub fn filter_by_tag(&self, tag: Tag) -> View {
        View(self.0.iter().filter(|v| v.ts.tag <= tag).cloned().collect())
    }

    /// Largest value tag present, or 0 for the empty view.
    pub fn max_tag(&self) -> Tag {
        self.0.iter().map(|v| v.ts.tag).max().unwrap_or(0)
    }
}

impl JoinLattice for View {
    fn bottom() -> Self {
        View::new()
    }

    fn join_assign(&mut self, other: &Self) {
        for v in &other.0 {
            self.0.insert(v.clone());
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<TaggedValue> for View {
    fn from_iter<T: IntoIterator<Item = TaggedValue>>(iter: T) -> Self {
        View(iter.into_iter().collect())
    }
}

// ---------------------------------------------------------------------------
// View vectors and the equivalence quorum
// ---------------------------------------------------------------------------

/// One view per node: entry `j` is what this node has received from node `j`
/// (entry `i` of node `i`'s own vector additionally absorbs everything).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewVector {
    views: Vec<View>,
}

impl ViewVector {
    /// A vector of `n` empty views.
    pub fn new(n: usize) -> Self {
        ViewVector {
            views: vec![View::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.views.len()
    }

    pub fn get(&self, j: NodeId) -> &View {
        &self.views[j.idx()]
    }

    pub fn get_mut(&mut self, j: NodeId) -> &mut View {
        &mut self.views[j.idx()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &View)> {
        self.views
            .iter()
            .enumerate()
            .map(|(i, v)| (NodeId::from_idx(i), v))
    }

    /// Entrywise `filter_by_tag`.
    pub fn filter_by_tag(&self, tag: Tag) -> ViewVector {
        ViewVector {
            views: self.views.iter().map(|v| v.filter_by_tag(tag)).collect(),
        }
    }

    /// Join of all entries.
    pub fn join_all(&self) -> View {
        let mut out = View::new();
        for v in &self.views {
            out.join_assign(v);
        }
        out
    }
}

/// The equivalence quorum `EQ(V, i)` over arbitrary lattice entries.
///
/// Returns the *maximal* quorum: the set of every index `j` with
/// `entries[j] == entries[i]`, provided it has at least `n − f` members;
/// `None` otherwise. `i` itself always matches, so the result (when present)
/// contains `i`.
pub fn eq_quorum<L: Eq>(entries: &[L], i: NodeId, f: usize) -> Option<BTreeSet<NodeId>> {
    let n = entries.len();
    debug_assert!(2 * f < n, "requires f < n/2 (validated at configuration)");
    debug_assert!(i.idx() < n);
    let mine = &entries[i.idx()];
    let q: BTreeSet<NodeId> = entries
        .iter()
        .enumerate()
        .filter(|(_, v)| *v == mine)
        .map(|(j, _)| NodeId::from_idx(j))
        .collect();
    if q.len() >= n - f {
        Some(q)
    } else {
        None
    }
}

/// [`eq_quorum`] specialised to view vectors, the form the protocols use.
pub fn eq_predicate(v: &ViewVector, i: NodeId, f: usize) -> Option<BTreeSet<NodeId>> {
    eq_quorum(&v.views, i, f)
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

/// The client-facing result of a snapshot scan: for each node, the payload of
/// that node's most recent update, or `None` if it has not written yet.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Snapshot {
    /// Entry `j - 1` belongs to node `j`.
    pub entries: Vec<Option<Payload>>,
}

impl Snapshot {
    pub fn empty(n: usize) -> Self {
        Snapshot {
            entries: vec![None; n],
        }
    }

    pub fn get(&self, j: NodeId) -> Option<&Payload> {
        self.entries[j.idx()].as_ref()
    }
}

/// Distill a view into a [`Snapshot`]: per node, the payload of that node's
/// largest-tag value in the view.
///
/// A well-formed view never holds two distinct values of one writer under the
/// same tag (per-writer timestamps are strictly monotone); that is asserted
/// here because a duplicate would make the snapshot ambiguous.
pub fn extract(view: &View, n: usize) -> Snapshot {
    let mut best: BTreeMap<NodeId, &TaggedValue> = BTreeMap::new();
    for v in view.iter() {
        let w = v.ts.writer;
        match best.get(&w) {
            Some(cur) => {
                assert!(
                    cur.ts.tag != v.ts.tag,
                    "two values by writer {w} share tag {}",
                    v.ts.tag
                );
                if v.ts.tag > cur.ts.tag {
                    best.insert(w, v);
                }
            }
            None => {
                best.insert(w, v);
            }
        }
    }
    let mut snap = Snapshot::empty(n);
    for (w, v) in best {
        snap.entries[w.idx()] = Some(v.payload.clone());
    }
    snap
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
