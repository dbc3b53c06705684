//! Compressed-row sparse matrices with deterministic assembly.
//!
//! Duplicate triplets are summed in insertion order regardless of how many
//! workers produced them, so assembled matrices are bitwise reproducible
//! across thread counts.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from triplets. Duplicates are summed in the order they appear in
    /// `triplets`, which callers keep deterministic (element order).
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            debug_assert!(r < nrows);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // Bucket by row, preserving insertion order within each row.
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            debug_assert!(c < ncols);
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let lo = counts[r];
            let hi = counts[r + 1];
            order.clear();
            order.extend(lo..hi);
            // Stable sort keeps insertion order among equal columns, so the
            // subsequent fold sums duplicates deterministically.
            order.sort_by_key(|&k| cols[k]);
            let mut k = 0;
            while k < order.len() {
                let c = cols[order[k]];
                let mut v = vals[order[k]];
                k += 1;
                while k < order.len() && cols[order[k]] == c {
                    v += vals[order[k]];
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            y[r] += alpha * acc;
        }
    }

    /// y += alpha * A^T x
    pub fn matvec_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = alpha * x[r];
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
    }

    /// x^T A y
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            if x[r] == 0.0 {
                continue;
            }
            let mut row_acc = 0.0;
            for (c, v) in self.row(r) {
                row_acc += v * y[c];
            }
            acc += x[r] * row_acc;
        }
        acc
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut trips = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                trips.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.ncols, self.nrows, &trips)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// max |A - A^T| entrywise; 0 for structurally/numerically symmetric.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            let mut a: Vec<(usize, f64)> = self.row(r).collect();
            let mut b: Vec<(usize, f64)> = t.row(r).collect();
            a.sort_by_key(|e| e.0);
            b.sort_by_key(|e| e.0);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                match (a.get(i), b.get(j)) {
                    (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                        worst = worst.max((va - vb).abs());
                        i += 1;
                        j += 1;
                    }
                    (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                        worst = worst.max(va.abs());
                        i += 1;
                    }
                    (Some(_), Some(&(_, vb))) => {
                        worst = worst.max(vb.abs());
                        j += 1;
                    }
                    (Some(&(_, va)), None) => {
                        worst = worst.max(va.abs());
                        i += 1;
                    }
                    (None, Some(&(_, vb))) => {
                        worst = worst.max(vb.abs());
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
        }
        worst
    }

    pub fn scaled(&self, alpha: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= alpha;
        }
        out
    }
}

/// Accumulates `(row_offset, col_offset, factor, block)` contributions into
/// one coupled system matrix. Insertion order fixes the duplicate-summation
/// order, keeping composed systems deterministic.
pub struct BlockBuilder {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl BlockBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        BlockBuilder {
            nrows,
            ncols,
            triplets: Vec::new(),
        }
    }

    pub fn add_block(&mut self, row_off: usize, col_off: usize, factor: f64, block: &SparseMatrix) {
        assert!(row_off + block.nrows <= self.nrows);
        assert!(col_off + block.ncols <= self.ncols);
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                self.triplets.push((row_off + r, col_off + c, factor * v));
            }
        }
    }

    pub fn add_block_transposed(
        &mut self,
        row_off: usize,
        col_off: usize,
        factor: f64,
        block: &SparseMatrix,
    ) {
        assert!(row_off + block.ncols <= self.nrows);
        assert!(col_off + block.nrows <= self.ncols);
        for r in 0..block.nrows {
            for (c, v) in block.row(r) {
                self.triplets.push((row_off + c, col_off + r, factor * v));
            }
        }
    }

    /// Ensure every diagonal entry exists so Dirichlet rows can be rewritten.
    pub fn reserve_diagonal(&mut self) {
        let n = self.nrows.min(self.ncols);
        for i in 0..n {
            self.triplets.push((i, i, 0.0));
        }
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.nrows, self.ncols, &self.triplets)
    }
}

/// Assembled operator, right-hand side and pending Dirichlet constraints.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub constraints: Vec<(usize, f64)>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        assert_eq!(matrix.nrows, rhs.len());
        LinearSystem {
            matrix,
            rhs,
            constraints: Vec::new(),
        }
    }

    /// Constrain DOFs to prescribed values: symmetric elimination moves the
    /// known columns to the right-hand side, then constrained rows become
    /// identity rows carrying the prescribed values.
    pub fn apply_dirichlet(&mut self, constraints: &[(usize, f64)]) -> Result<()> {
        let n = self.matrix.nrows;
        let mut value = vec![0.0f64; n];
        let mut fixed = vec![false; n];
        for &(dof, v) in constraints {
            if dof >= n {
                return Err(Error::invalid(format!(
                    "dirichlet DOF {dof} out of range for a {n}-DOF system"
                )));
            }
            fixed[dof] = true;
            value[dof] = v;
        }
        let m = &mut self.matrix;
        for r in 0..n {
            let lo = m.row_ptr[r];
            let hi = m.row_ptr[r + 1];
            if fixed[r] {
                let mut has_diag = false;
                for k in lo..hi {
                    m.values[k] = if m.col_idx[k] == r { 1.0 } else { 0.0 };
                    has_diag |= m.col_idx[k] == r;
                }
                if !has_diag {
                    return Err(Error::Inconsistent(format!(
                        "constrained row {r} has no diagonal entry; assemble with reserve_diagonal"
                    )));
                }
                self.rhs[r] = value[r];
            } else {
                for k in lo..hi {
                    let c = m.col_idx[k];
                    if fixed[c] {
                        self.rhs[r] -= m.values[k] * value[c];
                        m.values[k] = 0.0;
                    }
                }
            }
        }
        self.constraints.extend_from_slice(constraints);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_summation_is_insertion_ordered() {
        let trips = vec![(0, 0, 1.0), (0, 0, 2.0), (1, 1, 3.0), (0, 0, 4.0)];
        let a = SparseMatrix::from_triplets(2, 2, &trips);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.row(0).next().unwrap(), (0, 7.0));
    }

    #[test]
    fn matvec_and_transpose() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]);
        let y = a.matvec(&[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![7.0, -2.0]);
        let t = a.transpose();
        let mut z = vec![0.0; 3];
        t.matvec_add(1.0, &[1.0, 2.0], &mut z);
        let mut z2 = vec![0.0; 3];
        a.matvec_transpose_add(1.0, &[1.0, 2.0], &mut z2);
        assert_eq!(z, z2);
    }

    #[test]
    fn dirichlet_identity_rows_and_rhs_lift() {
        // 1D Laplace on 3 nodes, ends pinned to (0, 1) -> midpoint 0.5.
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
        let mut sys = LinearSystem::new(a, vec![0.0; 3]);
        sys.apply_dirichlet(&[(0, 0.0), (2, 1.0)]).unwrap();
        // Row 1: 2 u1 = 0 + 1 -> u1 = 0.5
        assert_eq!(sys.rhs, vec![0.0, 1.0, 1.0]);
        let row1: Vec<_> = sys.matrix.row(1).collect();
        assert_eq!(row1, vec![(0, 0.0), (1, 2.0), (2, 0.0)]);
    }

    #[test]
    fn dirichlet_out_of_range() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]);
        let mut sys = LinearSystem::new(a, vec![0.0; 2]);
        assert!(sys.apply_dirichlet(&[(5, 0.0)]).is_err());
    }
}
