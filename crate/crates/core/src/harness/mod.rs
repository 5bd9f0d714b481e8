//! Deterministic simulation: a virtual clock, an in-process network with
//! per-provider fault programs, scenario files and the fault matrix.

mod clock;
mod faults;
mod matrix;
mod network;
mod scenario;
mod sim;

pub use clock::VirtualClock;
pub use faults::{FaultMode, FaultProgram};
pub use matrix::{fault_matrix, MatrixReport, MatrixRun};
pub use network::{HarnessError, Network, DEFAULT_TTL_MS};
pub use scenario::{kv_line, printable, Scenario, ScenarioError, ScenarioOutcome, Step};
pub use sim::{SimConfig, SimError, Simulation};
