//! Affine constraint elimination: `x = T y + c`.
//!
//! Supports fixed values (Dirichlet) and linear multi-point constraints
//! (slave DOF = linear combination of master DOFs plus an offset). Reducing a
//! Galerkin system with `T' A T y = T' (b - A c)` keeps symmetry of the
//! constrained operator and is exact for conforming subspaces.

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Clone, Debug)]
pub enum Constraint {
    Fixed(f64),
    /// dof = sum(coeff * master) + offset, same relation for trial and test.
    Linear { masters: Vec<(usize, f64)>, offset: f64 },
    /// Petrov variant: the trial (solution) relation and the test-function
    /// relation carry different coefficients over the same masters. Needed
    /// when a kinematic tie couples quantities of different time stencils:
    /// the reduced operator becomes T_test' A T_trial.
    Petrov {
        trial: Vec<(usize, f64)>,
        test: Vec<(usize, f64)>,
        offset: f64,
    },
}

#[derive(Clone, Debug)]
enum Row {
    Free(usize),
    Fixed(f64),
    Slave {
        trial: Vec<(usize, f64)>,
        test: Vec<(usize, f64)>,
        offset: f64,
    },
}

pub struct Reducer {
    rows: Vec<Row>,
    n_reduced: usize,
}

impl Reducer {
    pub fn new(n: usize, constraints: &BTreeMap<usize, Constraint>) -> Result<Self> {
        for &dof in constraints.keys() {
            if dof >= n {
                return Err(Error::invalid(format!("constrained DOF {dof} out of range")));
            }
        }
        // Number the free DOFs in order.
        let mut reduced_of = vec![usize::MAX; n];
        let mut n_reduced = 0;
        for dof in 0..n {
            if !constraints.contains_key(&dof) {
                reduced_of[dof] = n_reduced;
                n_reduced += 1;
            }
        }
        let resolve = |masters: &[(usize, f64)],
                       offset: &mut f64,
                       fold_fixed: bool,
                       dof: usize|
         -> Result<Vec<(usize, f64)>> {
            let mut resolved = Vec::with_capacity(masters.len());
            for &(m, coeff) in masters {
                match constraints.get(&m) {
                    None => resolved.push((reduced_of[m], coeff)),
                    Some(Constraint::Fixed(v)) => {
                        if fold_fixed {
                            *offset += coeff * v;
                        }
                    }
                    Some(_) => {
                        return Err(Error::invalid(format!(
                            "chained constraint: master {m} of DOF {dof} is itself a slave"
                        )));
                    }
                }
            }
            Ok(resolved)
        };
        let mut rows = Vec::with_capacity(n);
        for dof in 0..n {
            match constraints.get(&dof) {
                None => rows.push(Row::Free(reduced_of[dof])),
                Some(Constraint::Fixed(v)) => rows.push(Row::Fixed(*v)),
                Some(Constraint::Linear { masters, offset }) => {
                    let mut off = *offset;
                    let trial = resolve(masters, &mut off, true, dof)?;
                    rows.push(Row::Slave {
                        test: trial.clone(),
                        trial,
                        offset: off,
                    });
                }
                Some(Constraint::Petrov { trial, test, offset }) => {
                    let mut off = *offset;
                    let trial = resolve(trial, &mut off, true, dof)?;
                    let mut dummy = 0.0;
                    let test = resolve(test, &mut dummy, false, dof)?;
                    rows.push(Row::Slave { trial, test, offset: off });
                }
            }
        }
        Ok(Reducer { rows, n_reduced })
    }

    pub fn n_full(&self) -> usize {
        self.rows.len()
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }

    /// Update the affine offset of an already-registered constraint. Offsets
    /// change every time step while coefficients (and hence the reduced
    /// operator) stay fixed.
    pub fn set_offset(&mut self, dof: usize, offset: f64) -> Result<()> {
        match &mut self.rows[dof] {
            Row::Fixed(v) => *v = offset,
            Row::Slave { offset: o, .. } => *o = offset,
            Row::Free(_) => {
                return Err(Error::invalid(format!("DOF {dof} is unconstrained")));
            }
        }
        Ok(())
    }

    fn test_row(&self, dof: usize) -> &[(usize, f64)] {
        const EMPTY: &[(usize, f64)] = &[];
        match &self.rows[dof] {
            Row::Free(_) | Row::Fixed(_) => EMPTY,
            Row::Slave { test, .. } => test,
        }
    }

    fn trial_row(&self, dof: usize) -> &[(usize, f64)] {
        const EMPTY: &[(usize, f64)] = &[];
        match &self.rows[dof] {
            Row::Free(_) | Row::Fixed(_) => EMPTY,
            Row::Slave { trial, .. } => trial,
        }
    }

    /// T_test' A T_trial (plain T' A T in the Galerkin case).
    pub fn reduce_matrix(&self, a: &SparseMatrix) -> SparseMatrix {
        assert_eq!(a.nrows, self.rows.len());
        assert_eq!(a.ncols, self.rows.len());
        let mut trips = Vec::new();
        let mut push = |ri: usize, rc: f64, cj: usize, cc: f64, v: f64| {
            trips.push((ri, cj, v * rc * cc));
        };
        for r in 0..a.nrows {
            for (c, v) in a.row(r) {
                if v == 0.0 {
                    continue;
                }
                match (&self.rows[r], &self.rows[c]) {
                    (Row::Free(i), Row::Free(j)) => push(*i, 1.0, *j, 1.0, v),
                    (Row::Free(i), Row::Slave { .. }) => {
                        for &(j, cc) in self.trial_row(c) {
                            push(*i, 1.0, j, cc, v);
                        }
                    }
                    (Row::Slave { .. }, Row::Free(j)) => {
                        for &(i, rc) in self.test_row(r) {
                            push(i, rc, *j, 1.0, v);
                        }
                    }
                    (Row::Slave { .. }, Row::Slave { .. }) => {
                        let rrow: Vec<(usize, f64)> = self.test_row(r).to_vec();
                        for (i, rc) in rrow {
                            for &(j, cc) in self.trial_row(c) {
                                push(i, rc, j, cc, v);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        // Reduced systems must stay factorable even when a row decouples.
        for i in 0..self.n_reduced {
            trips.push((i, i, 0.0));
        }
        SparseMatrix::from_triplets(self.n_reduced, self.n_reduced, &trips)
    }

    /// T_test' (b - A c) for the current trial offsets.
    pub fn reduce_rhs(&self, a: &SparseMatrix, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.rows.len());
        let mut c = vec![0.0; self.rows.len()];
        for (dof, row) in self.rows.iter().enumerate() {
            match row {
                Row::Fixed(v) => c[dof] = *v,
                Row::Slave { offset, .. } => c[dof] = *offset,
                Row::Free(_) => {}
            }
        }
        let ac = a.matvec(&c);
        let mut out = vec![0.0; self.n_reduced];
        for (dof, row) in self.rows.iter().enumerate() {
            let w = b[dof] - ac[dof];
            match row {
                Row::Free(i) => out[*i] += w,
                Row::Slave { test, .. } => {
                    for &(i, coeff) in test {
                        out[i] += coeff * w;
                    }
                }
                Row::Fixed(_) => {}
            }
        }
        out
    }

    /// x = T_trial y + c
    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n_reduced);
        let mut x = vec![0.0; self.rows.len()];
        for (dof, row) in self.rows.iter().enumerate() {
            x[dof] = match row {
                Row::Free(i) => y[*i],
                Row::Fixed(v) => *v,
                Row::Slave { trial, offset, .. } => {
                    trial.iter().map(|&(i, c)| c * y[i]).sum::<f64>() + offset
                }
            };
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solve;
    use crate::fem::sparse::LinearSystem;

    #[test]
    fn fixed_and_slave_reduction() {
        // 3-DOF system: A = tridiag(-1, 2, -1), x0 fixed to 1, x2 = 2*x1 + 0.5.
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
            ],
        );
        let mut cons = BTreeMap::new();
        cons.insert(0, Constraint::Fixed(1.0));
        cons.insert(
            2,
            Constraint::Linear { masters: vec![(1, 2.0)], offset: 0.5 },
        );
        let red = Reducer::new(3, &cons).unwrap();
        assert_eq!(red.n_reduced(), 1);
        let ra = red.reduce_matrix(&a);
        let rb = red.reduce_rhs(&a, &[0.0, 1.0, 0.0]);
        // Galerkin check by hand: T = [0; 1; 2], c = [1; 0; 0.5].
        // T'AT = 2 - 2 - 2 + 4*2 = 6. T'(b - Ac): b-Ac = [-2+?, 1+0.5, -1] ->
        // Ac = [2*1, -1*1 - 0.5, 1.0]... verify numerically instead.
        let x1 = rb[0] / ra.row(0).next().unwrap().1;
        let x = red.expand(&[x1]);
        // Residual of the constrained system rows at free test directions:
        // t' (b - A x) = 0.
        let ax = a.matvec(&x);
        let r: Vec<f64> = ax.iter().zip([0.0, 1.0, 0.0]).map(|(a, b)| b - a).collect();
        let projected = r[1] + 2.0 * r[2];
        assert!(projected.abs() < 1e-12);
        assert_eq!(x[0], 1.0);
        assert!((x[2] - (2.0 * x[1] + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn matches_apply_dirichlet_for_pure_fixed() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 1.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 1.0),
            ],
        );
        let mut sys = LinearSystem::new(a.clone(), vec![0.0; 3]);
        sys.apply_dirichlet(&[(0, 0.0), (2, 1.0)]).unwrap();
        let x_dir = solve::solve(&sys, "test").unwrap();

        let mut cons = BTreeMap::new();
        cons.insert(0, Constraint::Fixed(0.0));
        cons.insert(2, Constraint::Fixed(1.0));
        let red = Reducer::new(3, &cons).unwrap();
        let ra = red.reduce_matrix(&a);
        let rb = red.reduce_rhs(&a, &[0.0, 0.0, 0.0]);
        let sys2 = LinearSystem::new(ra, rb);
        let y = solve::solve(&sys2, "test").unwrap();
        let x_red = red.expand(&y);
        for (a, b) in x_dir.iter().zip(&x_red) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chained_constraints_rejected() {
        let mut cons = BTreeMap::new();
        cons.insert(
            0,
            Constraint::Linear { masters: vec![(1, 1.0)], offset: 0.0 },
        );
        cons.insert(
            1,
            Constraint::Linear { masters: vec![(2, 1.0)], offset: 0.0 },
        );
        assert!(Reducer::new(3, &cons).is_err());
    }
}
