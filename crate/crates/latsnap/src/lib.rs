//! Scenario runner and experiment driver for the protocols in
//! `latsnap-core`: loads JSON scenarios, executes them on the simulated
//! network, grades the traces with the trace checkers, and sweeps
//! parameter grids into benchmark tables.
//!
//! The binary in this crate is a thin argument layer over three modules:
//!
//! * [`scenario`] — the on-disk scenario format and its compiler,
//! * [`runner`] — execution, grading, trace files, exit codes,
//! * [`sweep`] — (n, k, seed) grids with CSV/JSON output.

pub mod runner;
pub mod scenario;
pub mod sweep;
