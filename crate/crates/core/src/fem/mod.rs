//! Finite-element infrastructure: reference elements, quadrature, DOF maps,
//! sparse assembly, boundary conditions, and direct solves.

pub mod assembly;
pub mod constraints;
pub mod eval;
pub mod quadrature;
pub mod solve;
pub mod space;
pub mod sparse;
pub mod trace_inverse;

pub use assembly::{assemble, assemble_interface, boundary_component_load, volume_load, IfaceKernel, Kernel};
pub use constraints::{Constraint, Reducer};
pub use eval::FieldEvaluator;
pub use solve::{solve, Factorization, SOLVE_TOLERANCE};
pub use space::{ElementFamily, FESpace, Spaces, TraceSegment};
pub use sparse::{BlockBuilder, LinearSystem, SparseMatrix};
pub use trace_inverse::estimate_trace_inverse_constant;
