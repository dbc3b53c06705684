//! Sparse direct solves.
//!
//! Factorizations are cached by callers and reused across time steps whenever
//! the operator is time-independent. faer runs sequentially here so repeated
//! runs are bitwise reproducible regardless of ambient thread counts.

use super::sparse::{LinearSystem, SparseMatrix};
use crate::error::{Error, Result};
use faer::sparse::linalg::solvers::Lu;
use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Relative residual bound enforced after every solve.
pub const SOLVE_TOLERANCE: f64 = 1e-9;

pub struct Factorization {
    lu: Lu<usize, f64>,
    n: usize,
    frobenius: f64,
    matrix: SparseMatrix,
}

impl Factorization {
    /// LU-factor a square operator (fill-reducing ordering inside faer).
    pub fn new(matrix: &SparseMatrix, step: &str) -> Result<Self> {
        if matrix.nrows != matrix.ncols {
            return Err(Error::invalid(format!(
                "cannot factor a {}x{} matrix",
                matrix.nrows, matrix.ncols
            )));
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let mut trips = Vec::with_capacity(matrix.nnz());
        for r in 0..matrix.nrows {
            for (c, v) in matrix.row(r) {
                trips.push(Triplet::new(r, c, v));
            }
        }
        let a = SparseColMat::try_new_from_triplets(matrix.nrows, matrix.ncols, &trips)
            .map_err(|e| Error::SolverFailure {
                step: step.to_string(),
                detail: format!("matrix construction failed: {e:?}"),
            })?;
        let lu = a.sp_lu().map_err(|e| Error::SolverFailure {
            step: step.to_string(),
            detail: format!("LU factorization failed (singular matrix?): {e:?}"),
        })?;
        Ok(Factorization {
            lu,
            n: matrix.nrows,
            frobenius: matrix.frobenius_norm(),
            matrix: matrix.clone(),
        })
    }

    /// Solve and verify the residual contract
    /// `||Ax - b|| <= tol (||A||_F ||x|| + ||b||)`.
    pub fn solve(&self, rhs: &[f64], step: &str) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let x: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                step: step.to_string(),
                detail: "non-finite solution".into(),
            });
        }
        let ax = self.matrix.matvec(&x);
        let res: f64 = ax
            .iter()
            .zip(rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = SOLVE_TOLERANCE * (self.frobenius * xn + bn);
        if res > bound && res > f64::MIN_POSITIVE {
            return Err(Error::SolverFailure {
                step: step.to_string(),
                detail: format!("residual {res:.3e} exceeds bound {bound:.3e}"),
            });
        }
        Ok(x)
    }
}

/// One-shot solve of a constrained system.
pub fn solve(system: &LinearSystem, step: &str) -> Result<Vec<f64>> {
    let f = Factorization::new(&system.matrix, step)?;
    f.solve(&system.rhs, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::{assemble, Kernel};
    use crate::fem::space::{ElementFamily, FESpace};
    use crate::mesh::{build_mesh, Region};

    #[test]
    fn identity_system() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
        let sys = LinearSystem::new(a, vec![1.0, 0.0, 0.0]);
        let x = solve(&sys, "test").unwrap();
        assert_eq!(x, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn spd_mass_solve_recovers_ones() {
        let mesh = build_mesh(2.0, 1.0, 0.2, 6, 3, 1).unwrap();
        let sp = FESpace::build(&mesh, Region::Fluid, ElementFamily::P2, 1);
        let m = assemble(&sp, &sp, Kernel::Mass { coeff: 1.0 }, &mesh, None).unwrap();
        let ones = vec![1.0; sp.ndofs()];
        let b = m.matvec(&ones);
        let sys = LinearSystem::new(m, b);
        let x = solve(&sys, "test").unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reports_step() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.0)]);
        let sys = LinearSystem::new(a, vec![1.0, 1.0]);
        let err = solve(&sys, "fluid step").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fluid step"), "{msg}");
    }
}
