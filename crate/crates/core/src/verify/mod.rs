//! Reference solvers, convergence studies, the stability sweep, and averaged
//! station quantities.

pub mod convergence;
pub mod driver;
pub mod elastic;
pub mod monolithic;
pub mod quantities;
pub mod sweep;

pub use convergence::{convergence_in_space, convergence_in_time, ConvergenceReport, NormTag};
pub use driver::{run_simulation, RunOutcome, RunResult};
pub use elastic::ElasticStepper;
pub use monolithic::MonolithicSolver;
pub use quantities::{mean_quantities, StationSample};
pub use sweep::{measure_critical_dt, stability_sweep, DxSweep, StabilitySweepResult, SweepSetup};
