//! Deterministic simulator of an N-modular-redundant multi-core system that
//! detects hardware faults by majority voting and recovers from permanent
//! faults by diversifying the software executed on the faulty core: dynamic
//! diversity (memory gaps, base offsets, variable order, data re-expression)
//! first, then self-test-guided static variant generation on a simulated
//! remote server.
//!
//! Everything is a pure function of its inputs and a seed: replica runs,
//! fault sampling, recovery traces, whole campaigns. Campaign trials and
//! coverage estimation are data-parallel (rayon, behind the default
//! `parallel` feature); sequential entry points are always available.

pub mod controller;
pub mod diversity;
pub mod exec;
pub mod faults;
pub mod harness;
pub mod machine;
pub mod programs;
pub mod redundancy;
pub mod rng;
pub mod selftest;
pub mod server;

pub use machine::{
    assemble, golden_run, run, ExecStatus, ExecutionOutcome, MachineImage, Program, Word,
};
