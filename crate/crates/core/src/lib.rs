//! Finite-element solver for pressure-driven flow in a 2D channel whose
//! upper wall is a thin elastic membrane backed by a thick poroelastic layer.
//!
//! The channel fluid (incompressible Navier-Stokes or Stokes) couples to the
//! wall through membrane-inertia Robin conditions and a pore-pressure flux
//! balance; time stepping is a loosely coupled two-substep splitting with no
//! sub-iterations. A fully implicit monolithic reference solver, discrete
//! energy monitoring, stability-threshold sweeps and convergence studies live
//! in [`verify`].

pub mod error;
pub mod fem;
pub mod forms;
pub mod mesh;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use fem::{LinearSystem, SparseMatrix, Spaces};
pub use forms::{FormCatalog, KoiterCoeffs, PhysicalParams};
pub use mesh::{build_mesh, interface_trace, BilayerMesh, InterfaceMap};
pub use solver::{cfl_bound, CflEnforcement, EnergyRecord, Mode, Stepper, SystemState, TimeConfig};
