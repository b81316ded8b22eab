//! Crash-tolerant early-stopping lattice agreement and atomic snapshot
//! protocols, together with the deterministic discrete-event network they run
//! in and the trace checkers that hold them to account.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`] — join semi-lattice of tagged values: the data the protocols
//!   agree on, plus the equivalence-quorum predicate they decide with.
//! * [`simnet`] — single-threaded simulated network: reliable FIFO channels,
//!   bounded message delay, crash injection (including mid-broadcast), and a
//!   totally ordered execution trace.
//! * [`ela`] — early-stopping lattice agreement: decide in O(sqrt(k)) rounds
//!   for k actual crashes instead of O(f) for the tolerated maximum.
//! * [`acaso`] — amortized-constant-round atomic snapshot object built from
//!   repeated lattice agreement with tag renewal and view borrowing.
//! * [`tsaso`] — timestamp-based atomic snapshot object: a two-phase scan
//!   over per-writer registers, using lattice agreement on state vectors.
//! * [`uqsm`] — update-query state machine replication on top of [`acaso`].
//! * [`verify`] — trace and history checkers: agreement properties,
//!   linearization witness construction, a brute-force linearizability
//!   oracle, and round-count metrics.
//!
//! Everything in this crate is deterministic: two runs from the same
//! configuration produce identical traces, byte for byte. No IO, no clocks,
//! no platform randomness — the crate is `no_std` (with `alloc`).

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod acaso;
pub mod ela;
pub mod lattice;
pub mod simnet;
pub mod tsaso;
pub mod uqsm;
pub mod verify;
