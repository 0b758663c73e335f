//! Offline GPU-kernel performance advisor.
//!
//! The crate ingests a textual GPU-like assembly program ("GIR") together
//! with an instruction-sample profile, attributes each observed stall to the
//! instruction that caused it by backward slicing over the control-flow
//! graph, matches the attributed stalls against a catalog of optimizers,
//! estimates every optimizer's speedup with closed-form models, and emits a
//! ranked advice report. A deterministic sampling simulator can synthesize
//! profiles so the whole pipeline runs without GPU hardware.
//!
//! Pipeline stages, in dependency order:
//!
//! * [`isa`] — GIR parsing, instruction model, architecture descriptions.
//! * [`cfg`] — basic blocks, dominators, natural loops, path distances,
//!   program structure (function kinds, inline frames, line maps).
//! * [`profile`] — sample data model, profile files, and the simulator.
//! * [`blamer`] — backward slicing, the dependency graph, pruning, and
//!   stall apportioning.
//! * [`advisor`] — optimizer matching and the occupancy model.
//! * [`estimate`] — the speedup models.
//! * [`report`] — ranking and text/machine rendering.
//! * [`driver`] — end-to-end orchestration shared by the CLI and tests.

pub mod advisor;
pub mod blamer;
pub mod cfg;
pub mod driver;
pub mod estimate;
pub mod isa;
pub mod profile;
pub mod report;
