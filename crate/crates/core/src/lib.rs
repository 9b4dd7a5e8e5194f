//! Symbolic controller synthesis for impulsive systems with dwell-time constrained jumps.
//!
//! The pipeline goes from a concrete system and an incremental stability
//! certificate to a grid-based symbolic model, a safety controller on that
//! model, and its refinement back to the concrete system.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod certificates;
pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod pipeline;
pub mod synthesis;

pub use abstraction::{build_symbolic, check_nonblocking, AbstractState, ConcreteState, Scenario, SymbolicModel};
pub use dynamics::{ImpulseSchedule, ImpulsiveSystem, InputSignal, Trajectory};
pub use geometry::{AxisBox, GridDomain, GridIndex};
pub use synthesis::{closed_loop, refine, synthesize_safety, Guarantee, SafetyController, SafetySpec};
