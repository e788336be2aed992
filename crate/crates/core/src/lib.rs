//! Deterministic simulation and optimization toolkit for online/offline
//! scheduling of tasks that each have a serial and a parallel implementation.
//!
//! The toolkit covers the one-fast-many-slow regime (one unit-rate fast
//! machine plus unlimited slow machines), the general p-processor regime, and
//! dependency-constrained instances, with exact rational arithmetic end to
//! end: online schedulers, offline optimizers and approximation schemes,
//! executable adversarial lower-bound families, and brute-force oracles that
//! cross-check everything.

pub mod constants;
pub mod engine;
pub mod mwf;
pub mod offline;
pub mod scalar;
pub mod task;
pub mod trace;

pub use engine::{simulate, CommitmentModel, Directive, Mode, Policy, SimError, SimOptions};
pub use scalar::Scalar;
pub use task::{Dtap, Instance, MachineModel, Metrics, Tap, Task, TaskId};
pub use trace::{validate_trace, ScheduleTrace};
