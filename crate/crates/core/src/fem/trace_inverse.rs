//! Numerical estimate of the local trace-inverse constant.
//!
//! For the discrete pore-pressure space the inequality
//! `||psi||^2_{L2(Gamma)} <= (C_TI / h) ||psi||^2_{L2(Omega_p)}`
//! holds with a constant depending only on element shape. The sharp discrete
//! constant is the largest generalized Rayleigh quotient
//! `h (psi' T psi) / (psi' M psi)` of the interface-mass matrix `T` against
//! the region-mass matrix `M`, found here by power iteration on `M^{-1} T`.

use super::assembly::{assemble, assemble_interface, IfaceKernel, Kernel};
use super::solve::Factorization;
use super::space::FESpace;
use crate::error::{Error, Result};
use crate::mesh::{BilayerMesh, Region};

pub fn estimate_trace_inverse_constant(space: &FESpace, mesh: &BilayerMesh) -> Result<f64> {
    if space.ncomp != 1 || space.region != Region::Poro {
        return Err(Error::invalid(
            "trace-inverse estimate expects a scalar space on the poro region",
        ));
    }
    if space.interface_nodes.is_empty() {
        return Err(Error::invalid("space has an empty interface"));
    }
    let t = assemble_interface(space, space, IfaceKernel::Mass { coeff: 1.0, comp: Some(0) })?;
    let m = assemble(space, space, Kernel::Mass { coeff: 1.0 }, mesh, None)?;
    let m_fact = Factorization::new(&m, "trace-inverse mass solve")?;

    // Start on the trace so the dominant (trace-supported) eigenvector is
    // reachable; modes with zero trace lie in the null space of T and are
    // never mixed in.
    let n = space.ndofs();
    let mut z = vec![0.0; n];
    for &node in &space.interface_nodes {
        z[space.dof(node, 0)] = 1.0;
    }
    let mut lambda = 0.0;
    for _ in 0..400 {
        let tz = t.matvec(&z);
        let w = m_fact.solve(&tz, "trace-inverse power iteration")?;
        let num = t.quadratic_form(&w, &w);
        let den = m.quadratic_form(&w, &w);
        if den == 0.0 {
            return Err(Error::Inconsistent("power iteration collapsed".into()));
        }
        let next = num / den;
        let norm = den.sqrt();
        for (zi, wi) in z.iter_mut().zip(&w) {
            *zi = wi / norm;
        }
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(mesh.h * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::space::{ElementFamily, FESpace};
    use crate::mesh::build_mesh;

    /// Dense oracle: Cholesky-transform the generalized problem and take the
    /// largest eigenvalue of L^{-1} T L^{-T}.
    fn dense_oracle(space: &FESpace, mesh: &BilayerMesh) -> f64 {
        let t = assemble_interface(space, space, IfaceKernel::Mass { coeff: 1.0, comp: Some(0) }).unwrap();
        let m = assemble(space, space, Kernel::Mass { coeff: 1.0 }, mesh, None).unwrap();
        let n = space.ndofs();
        let mut dm = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut dt = nalgebra::DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for (c, v) in m.row(r) {
                dm[(r, c)] = v;
            }
            for (c, v) in t.row(r) {
                dt[(r, c)] = v;
            }
        }
        let chol = dm.cholesky().expect("mass SPD");
        let l_inv = chol.l().try_inverse().unwrap();
        let sym = &l_inv * dt * l_inv.transpose();
        let eig = nalgebra::SymmetricEigen::new(sym);
        mesh.h * eig.eigenvalues.max()
    }

    #[test]
    fn strip_constant_in_range_and_nx_independent() {
        // Single-layer strip with r_p >= L/nx so h stays fixed across nx.
        let mut values = Vec::new();
        for nx in [4usize, 8, 16] {
            let mesh = build_mesh(1.0, 0.5, 0.5, nx, 1, 1).unwrap();
            let sp = FESpace::build(&mesh, Region::Poro, ElementFamily::P1, 1);
            let c = estimate_trace_inverse_constant(&sp, &mesh).unwrap();
            let oracle = dense_oracle(&sp, &mesh);
            assert!((c - oracle).abs() < 1e-8 * oracle, "power {c} vs dense {oracle}");
            assert!(c >= 1.0 && c <= 10.0, "C_TI = {c}");
            values.push(c);
        }
        let base = values[0];
        for v in &values {
            assert!((v - base).abs() <= 0.05 * base, "nx dependence: {values:?}");
        }
    }

    #[test]
    fn bounded_under_y_refinement_at_fixed_aspect() {
        // Shrink cells isotropically: C_TI stays bounded (shape constant).
        let mut values = Vec::new();
        for k in [1usize, 2, 4] {
            let mesh = build_mesh(1.0, 0.5, 0.5, 2 * k, 1, k).unwrap();
            let sp = FESpace::build(&mesh, Region::Poro, ElementFamily::P1, 1);
            let c = estimate_trace_inverse_constant(&sp, &mesh).unwrap();
            let oracle = dense_oracle(&sp, &mesh);
            assert!((c - oracle).abs() < 1e-8 * oracle);
            values.push(c);
        }
        for v in &values {
            assert!(*v > 0.1 && *v < 20.0, "C_TI drifted: {values:?}");
        }
    }

    #[test]
    fn rejects_wrong_space() {
        let mesh = build_mesh(1.0, 0.5, 0.5, 4, 2, 2).unwrap();
        let fluid = FESpace::build(&mesh, Region::Fluid, ElementFamily::P1, 1);
        assert!(estimate_trace_inverse_constant(&fluid, &mesh).is_err());
        let vector = FESpace::build(&mesh, Region::Poro, ElementFamily::P1, 2);
        assert!(estimate_trace_inverse_constant(&vector, &mesh).is_err());
    }
}
