//! Element-matrix kernels and sparse assembly.
//!
//! Assembly may fan element integration out across a rayon pool; the gathered
//! local matrices are merged serially in element order, so the result is
//! independent of worker count.

use super::quadrature::{EDGE_GAUSS4, TRI_DEG6};
use super::space::{ElementFamily, FESpace, TraceSegment};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};
use crate::mesh::{BilayerMesh, BoundaryTag};
use rayon::prelude::*;

/// Element-integrand descriptors for volume assembly.
#[derive(Clone, Copy)]
pub enum Kernel<'a> {
    /// coeff * (u, v); block-diagonal over components for vector spaces.
    Mass { coeff: f64 },
    /// coeff * (grad u, grad v) on scalar spaces.
    Stiffness { coeff: f64 },
    /// coeff * (grad u : grad v) componentwise on vector spaces.
    GradGrad { coeff: f64 },
    /// 2 mu (D(u), D(v)) + lambda (div u, div v) on vector spaces.
    Elasticity { mu: f64, lambda: f64 },
    /// coeff * (psi, div u): rows on a scalar space, columns on a vector one.
    Divergence { coeff: f64 },
    /// coeff * ((a . grad) u, v) with `a` a DOF vector on the column space.
    Convection { coeff: f64, field: &'a [f64] },
}

/// Integrand descriptors on the interface trace.
#[derive(Clone, Copy)]
pub enum IfaceKernel {
    /// coeff * (u, v) over the trace; `comp` restricts to one component.
    Mass { coeff: f64, comp: Option<usize> },
    /// coeff * (psi, phi . n) with n = (0,1): rows vector, columns scalar.
    NormalCoupling { coeff: f64 },
    /// Membrane operator: c1 u_x' v_x' - c2 u_y' v_x + c0 u_y v_y + c2 u_x' v_y.
    Membrane { c0: f64, c1: f64, c2: f64 },
    /// Symmetric membrane strain-energy form:
    /// 2 mu r (u_x' v_x' + u_y v_y / R^2) + g r (u_x' + u_y/R)(v_x' + v_y/R),
    /// with g = 2 mu lambda / (lambda + 2 mu).
    MembraneEnergy { mu_r: f64, g_r: f64, radius: f64 },
}

struct BasisTable {
    /// values[q][i]
    values: Vec<Vec<f64>>,
    /// ref_grads[q][i] = (d/dxi, d/deta)
    ref_grads: Vec<Vec<[f64; 2]>>,
}

fn basis_table(family: ElementFamily) -> BasisTable {
    let mut values = Vec::with_capacity(TRI_DEG6.len());
    let mut ref_grads = Vec::with_capacity(TRI_DEG6.len());
    for p in TRI_DEG6.iter() {
        let [l1, l2, l3] = p.l;
        match family {
            ElementFamily::P1 => {
                values.push(vec![l1, l2, l3]);
                ref_grads.push(vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
            }
            ElementFamily::P2 => {
                values.push(vec![
                    l1 * (2.0 * l1 - 1.0),
                    l2 * (2.0 * l2 - 1.0),
                    l3 * (2.0 * l3 - 1.0),
                    4.0 * l1 * l2,
                    4.0 * l2 * l3,
                    4.0 * l3 * l1,
                ]);
                let g1 = [-1.0, -1.0];
                let g2 = [1.0, 0.0];
                let g3 = [0.0, 1.0];
                let lin = |a: f64, ga: [f64; 2]| [(4.0 * a - 1.0) * ga[0], (4.0 * a - 1.0) * ga[1]];
                let edge = |a: f64, ga: [f64; 2], b: f64, gb: [f64; 2]| {
                    [4.0 * (b * ga[0] + a * gb[0]), 4.0 * (b * ga[1] + a * gb[1])]
                };
                ref_grads.push(vec![
                    lin(l1, g1),
                    lin(l2, g2),
                    lin(l3, g3),
                    edge(l1, g1, l2, g2),
                    edge(l2, g2, l3, g3),
                    edge(l3, g3, l1, g1),
                ]);
            }
        }
    }
    BasisTable { values, ref_grads }
}

struct ElementGeometry {
    /// Physical basis gradients: grads[q][i] = (d/dx, d/dy).
    grads: Vec<Vec<[f64; 2]>>,
    area: f64,
}

fn element_geometry(coords: &[[f64; 2]], table: &BasisTable) -> ElementGeometry {
    let j00 = coords[1][0] - coords[0][0];
    let j10 = coords[1][1] - coords[0][1];
    let j01 = coords[2][0] - coords[0][0];
    let j11 = coords[2][1] - coords[0][1];
    let det = j00 * j11 - j01 * j10;
    // inv(J)^T rows
    let it00 = j11 / det;
    let it01 = -j10 / det;
    let it10 = -j01 / det;
    let it11 = j00 / det;
    let grads = table
        .ref_grads
        .iter()
        .map(|g| {
            g.iter()
                .map(|r| [it00 * r[0] + it01 * r[1], it10 * r[0] + it11 * r[1]])
                .collect()
        })
        .collect();
    ElementGeometry {
        grads,
        area: 0.5 * det.abs(),
    }
}

fn local_volume(
    kernel: &Kernel,
    row_space: &FESpace,
    col_space: &FESpace,
    row_nodes: &[usize],
    col_nodes: &[usize],
    row_tab: &BasisTable,
    col_tab: &BasisTable,
    row_geo: &ElementGeometry,
    col_geo: &ElementGeometry,
) -> Vec<f64> {
    let nr = row_nodes.len() * row_space.ncomp;
    let nc = col_nodes.len() * col_space.ncomp;
    let mut local = vec![0.0; nr * nc];
    let area = row_geo.area;
    for (q, tp) in TRI_DEG6.iter().enumerate() {
        let w = tp.w * area;
        match *kernel {
            Kernel::Mass { coeff } => {
                let k = coeff * w;
                for c in 0..row_space.ncomp {
                    for i in 0..row_nodes.len() {
                        let vi = row_tab.values[q][i];
                        for j in 0..col_nodes.len() {
                            local[(i * row_space.ncomp + c) * nc + (j * col_space.ncomp + c)] +=
                                k * vi * col_tab.values[q][j];
                        }
                    }
                }
            }
            Kernel::Stiffness { coeff } => {
                let k = coeff * w;
                for i in 0..row_nodes.len() {
                    let gi = row_geo.grads[q][i];
                    for j in 0..col_nodes.len() {
                        let gj = col_geo.grads[q][j];
                        local[i * nc + j] += k * (gi[0] * gj[0] + gi[1] * gj[1]);
                    }
                }
            }
            Kernel::GradGrad { coeff } => {
                let k = coeff * w;
                for c in 0..row_space.ncomp {
                    for i in 0..row_nodes.len() {
                        let gi = row_geo.grads[q][i];
                        for j in 0..col_nodes.len() {
                            let gj = col_geo.grads[q][j];
                            local[(i * row_space.ncomp + c) * nc + (j * col_space.ncomp + c)] +=
                                k * (gi[0] * gj[0] + gi[1] * gj[1]);
                        }
                    }
                }
            }
            Kernel::Elasticity { mu, lambda } => {
                // D(u):D(v) expanded per component pair.
                for i in 0..row_nodes.len() {
                    let gi = row_geo.grads[q][i];
                    for j in 0..col_nodes.len() {
                        let gj = col_geo.grads[q][j];
                        // rows: test component a; cols: trial component b.
                        for a in 0..2 {
                            for b in 0..2 {
                                let dd = if a == b {
                                    let other = 1 - a;
                                    gi[a] * gj[a] + 0.5 * gi[other] * gj[other]
                                } else {
                                    0.5 * gi[b] * gj[a]
                                };
                                let div = gi[a] * gj[b];
                                local[(i * 2 + a) * nc + (j * 2 + b)] +=
                                    w * (2.0 * mu * dd + lambda * div);
                            }
                        }
                    }
                }
            }
            Kernel::Divergence { coeff } => {
                let k = coeff * w;
                for i in 0..row_nodes.len() {
                    let vi = row_tab.values[q][i];
                    for j in 0..col_nodes.len() {
                        let gj = col_geo.grads[q][j];
                        for b in 0..2 {
                            local[i * nc + (j * 2 + b)] += k * vi * gj[b];
                        }
                    }
                }
            }
            Kernel::Convection { coeff, field } => {
                // Advecting velocity at the quadrature point.
                let mut a = [0.0f64; 2];
                for j in 0..col_nodes.len() {
                    let v = col_tab.values[q][j];
                    for c in 0..2 {
                        a[c] += field[col_space.dof(col_nodes[j], c)] * v;
                    }
                }
                let k = coeff * w;
                for i in 0..row_nodes.len() {
                    let vi = row_tab.values[q][i];
                    for j in 0..col_nodes.len() {
                        let gj = col_geo.grads[q][j];
                        let adv = a[0] * gj[0] + a[1] * gj[1];
                        for c in 0..2 {
                            local[(i * 2 + c) * nc + (j * 2 + c)] += k * vi * adv;
                        }
                    }
                }
            }
        }
    }
    local
}

/// Assemble a volume form over the common region of `row_space`/`col_space`.
pub fn assemble(
    row_space: &FESpace,
    col_space: &FESpace,
    kernel: Kernel,
    mesh: &BilayerMesh,
    pool: Option<&rayon::ThreadPool>,
) -> Result<SparseMatrix> {
    row_space.expect_same_region(col_space)?;
    match kernel {
        Kernel::Mass { .. } | Kernel::GradGrad { .. } if row_space.ncomp != col_space.ncomp => {
            return Err(Error::invalid("Mass/GradGrad kernels expect matching component counts"));
        }
        Kernel::Stiffness { .. } if row_space.ncomp != 1 || col_space.ncomp != 1 => {
            return Err(Error::invalid("Stiffness kernel expects scalar spaces"));
        }
        Kernel::Divergence { .. } if row_space.ncomp != 1 || col_space.ncomp != 2 => {
            return Err(Error::invalid(
                "Divergence kernel expects scalar rows and vector columns",
            ));
        }
        Kernel::Elasticity { .. } | Kernel::Convection { .. }
            if row_space.ncomp != 2 || col_space.ncomp != 2 =>
        {
            return Err(Error::invalid("kernel expects vector spaces"));
        }
        Kernel::Convection { field, .. } if field.len() != col_space.ndofs() => {
            return Err(Error::invalid(format!(
                "advecting field has {} DOFs, column space has {}",
                field.len(),
                col_space.ndofs()
            )));
        }
        _ => {}
    }
    let row_tab = basis_table(row_space.family);
    let col_tab = basis_table(col_space.family);
    let n_elem = row_space.tri_nodes.len();
    debug_assert_eq!(n_elem, col_space.tri_nodes.len());

    let compute = |e: usize| -> Vec<f64> {
        let rn = &row_space.tri_nodes[e];
        let cn = &col_space.tri_nodes[e];
        let tri = &mesh.triangles[row_space.tri_mesh_ids[e]];
        let coords = [
            mesh.nodes[tri.v[0]],
            mesh.nodes[tri.v[1]],
            mesh.nodes[tri.v[2]],
        ];
        let row_geo = element_geometry(&coords, &row_tab);
        let col_geo = if row_space.family == col_space.family {
            None
        } else {
            Some(element_geometry(&coords, &col_tab))
        };
        local_volume(
            &kernel,
            row_space,
            col_space,
            rn,
            cn,
            &row_tab,
            &col_tab,
            &row_geo,
            col_geo.as_ref().unwrap_or(&row_geo),
        )
    };

    let locals: Vec<Vec<f64>> = match pool {
        Some(p) if p.current_num_threads() > 1 => {
            p.install(|| (0..n_elem).into_par_iter().map(compute).collect())
        }
        _ => (0..n_elem).map(compute).collect(),
    };

    // Serial merge in element order: deterministic across worker counts.
    let mut trips = Vec::new();
    for (e, local) in locals.iter().enumerate() {
        let rn = &row_space.tri_nodes[e];
        let cn = &col_space.tri_nodes[e];
        let nc = cn.len() * col_space.ncomp;
        for (li, &node_i) in rn.iter().enumerate() {
            for a in 0..row_space.ncomp {
                let gi = row_space.dof(node_i, a);
                for (lj, &node_j) in cn.iter().enumerate() {
                    for b in 0..col_space.ncomp {
                        let v = local[(li * row_space.ncomp + a) * nc + (lj * col_space.ncomp + b)];
                        if v != 0.0 {
                            trips.push((gi, col_space.dof(node_j, b), v));
                        }
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(
        row_space.ndofs(),
        col_space.ndofs(),
        &trips,
    ))
}

fn trace_basis(family: ElementFamily, s: f64) -> (Vec<f64>, Vec<f64>) {
    match family {
        ElementFamily::P1 => (vec![1.0 - s, s], vec![-1.0, 1.0]),
        ElementFamily::P2 => (
            vec![
                (1.0 - s) * (1.0 - 2.0 * s),
                4.0 * s * (1.0 - s),
                s * (2.0 * s - 1.0),
            ],
            vec![4.0 * s - 3.0, 4.0 - 8.0 * s, 4.0 * s - 1.0],
        ),
    }
}

fn paired_segments<'a>(
    row_space: &'a FESpace,
    col_space: &'a FESpace,
) -> Result<Vec<(&'a TraceSegment, &'a TraceSegment)>> {
    let rs = row_space.interface_segments();
    let cs = col_space.interface_segments();
    if rs.is_empty() || cs.is_empty() {
        return Err(Error::invalid("space has no interface trace"));
    }
    if rs.len() != cs.len() {
        return Err(Error::Inconsistent(format!(
            "interface meshes do not conform: {} vs {} segments",
            rs.len(),
            cs.len()
        )));
    }
    for (a, b) in rs.iter().zip(cs) {
        if (a.p[0][0] - b.p[0][0]).abs() > 1e-12 || (a.p[1][0] - b.p[1][0]).abs() > 1e-12 {
            return Err(Error::Inconsistent(
                "interface segment endpoints differ between spaces".into(),
            ));
        }
    }
    Ok(rs.iter().zip(cs.iter()).collect())
}

/// Assemble a trace form over the interface. Both spaces must see the same
/// segment partition (conforming meshes).
pub fn assemble_interface(
    row_space: &FESpace,
    col_space: &FESpace,
    kernel: IfaceKernel,
) -> Result<SparseMatrix> {
    match kernel {
        IfaceKernel::NormalCoupling { .. } if row_space.ncomp != 2 || col_space.ncomp != 1 => {
            return Err(Error::invalid(
                "NormalCoupling expects vector rows and scalar columns",
            ));
        }
        IfaceKernel::Membrane { .. } | IfaceKernel::MembraneEnergy { .. }
            if row_space.ncomp != 2 || col_space.ncomp != 2 =>
        {
            return Err(Error::invalid("membrane kernels expect vector spaces"));
        }
        IfaceKernel::Mass { comp: Some(c), .. } if c >= row_space.ncomp || c >= col_space.ncomp => {
            return Err(Error::invalid("trace mass component out of range"));
        }
        _ => {}
    }
    let mut trips = Vec::new();
    for (seg_r, seg_c) in paired_segments(row_space, col_space)? {
        let len = seg_r.len();
        let nr = seg_r.nodes.len();
        let ncn = seg_c.nodes.len();
        let nc_dofs = ncn * col_space.ncomp;
        let mut local = vec![0.0; nr * row_space.ncomp * nc_dofs];
        for &(s, w) in EDGE_GAUSS4.iter() {
            let (rv, rd) = trace_basis(row_space.family, s);
            let (cv, cd) = trace_basis(col_space.family, s);
            let jw = w * len;
            match kernel {
                IfaceKernel::Mass { coeff, comp } => {
                    let comps: Vec<usize> = match comp {
                        Some(c) => vec![c],
                        None => (0..row_space.ncomp.min(col_space.ncomp)).collect(),
                    };
                    for &c in &comps {
                        for i in 0..nr {
                            for j in 0..ncn {
                                local[(i * row_space.ncomp + c) * nc_dofs
                                    + (j * col_space.ncomp + c)] += coeff * jw * rv[i] * cv[j];
                            }
                        }
                    }
                }
                IfaceKernel::NormalCoupling { coeff } => {
                    // n = (0, 1): only the y test component sees the scalar.
                    for i in 0..nr {
                        for j in 0..ncn {
                            local[(i * 2 + 1) * nc_dofs + j] += coeff * jw * rv[i] * cv[j];
                        }
                    }
                }
                IfaceKernel::Membrane { c0, c1, c2 } => {
                    // d/dx = d/ds / len; x is tangential, y radial.
                    for i in 0..nr {
                        let vi = rv[i];
                        let di = rd[i] / len;
                        for j in 0..ncn {
                            let vj = cv[j];
                            let dj = cd[j] / len;
                            let row_x = (i * 2) * nc_dofs;
                            let row_y = (i * 2 + 1) * nc_dofs;
                            local[row_x + j * 2] += jw * c1 * dj * di;
                            local[row_x + j * 2 + 1] += jw * (-c2) * dj * vi;
                            local[row_y + j * 2] += jw * c2 * dj * vi;
                            local[row_y + j * 2 + 1] += jw * c0 * vj * vi;
                        }
                    }
                }
                IfaceKernel::MembraneEnergy { mu_r, g_r, radius } => {
                    for i in 0..nr {
                        let vi = rv[i];
                        let di = rd[i] / len;
                        for j in 0..ncn {
                            let vj = cv[j];
                            let dj = cd[j] / len;
                            let row_x = (i * 2) * nc_dofs;
                            let row_y = (i * 2 + 1) * nc_dofs;
                            // 2 mu r (u_x' v_x' + u_y v_y / R^2)
                            local[row_x + j * 2] += jw * 2.0 * mu_r * dj * di;
                            local[row_y + j * 2 + 1] += jw * 2.0 * mu_r * vj * vi / (radius * radius);
                            // g r (u_x' + u_y/R)(v_x' + v_y/R)
                            local[row_x + j * 2] += jw * g_r * dj * di;
                            local[row_x + j * 2 + 1] += jw * g_r * (vj / radius) * di;
                            local[row_y + j * 2] += jw * g_r * dj * (vi / radius);
                            local[row_y + j * 2 + 1] += jw * g_r * (vj / radius) * (vi / radius);
                        }
                    }
                }
            }
        }
        for (li, &ni) in seg_r.nodes.iter().enumerate() {
            for a in 0..row_space.ncomp {
                for (lj, &nj) in seg_c.nodes.iter().enumerate() {
                    for b in 0..col_space.ncomp {
                        let v = local[(li * row_space.ncomp + a) * nc_dofs + (lj * col_space.ncomp + b)];
                        if v != 0.0 {
                            trips.push((row_space.dof(ni, a), col_space.dof(nj, b), v));
                        }
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(
        row_space.ndofs(),
        col_space.ndofs(),
        &trips,
    ))
}

/// Load vector of one component over a tagged boundary: b[dof(i,comp)] =
/// integral of the i-th trace basis function along the tag.
pub fn boundary_component_load(space: &FESpace, tag: BoundaryTag, comp: usize) -> Vec<f64> {
    let mut b = vec![0.0; space.ndofs()];
    let Some(segs) = space.boundary_segments.get(&tag) else {
        return b;
    };
    for seg in segs {
        let len = seg.len();
        for &(s, w) in EDGE_GAUSS4.iter() {
            let (v, _) = trace_basis(space.family, s);
            for (i, &n) in seg.nodes.iter().enumerate() {
                b[space.dof(n, comp)] += w * len * v[i];
            }
        }
    }
    b
}

/// Volume load: b[dof(i,c)] = integral of f(x)_c * phi_i over the region.
pub fn volume_load(space: &FESpace, mesh: &BilayerMesh, f: &dyn Fn([f64; 2]) -> Vec<f64>) -> Vec<f64> {
    let tab = basis_table(space.family);
    let mut b = vec![0.0; space.ndofs()];
    for (e, nodes) in space.tri_nodes.iter().enumerate() {
        let tri = &mesh.triangles[space.tri_mesh_ids[e]];
        let coords = [
            mesh.nodes[tri.v[0]],
            mesh.nodes[tri.v[1]],
            mesh.nodes[tri.v[2]],
        ];
        let geo = element_geometry(&coords, &tab);
        for (q, tp) in TRI_DEG6.iter().enumerate() {
            let [l1, l2, l3] = tp.l;
            let x = [
                l1 * coords[0][0] + l2 * coords[1][0] + l3 * coords[2][0],
                l1 * coords[0][1] + l2 * coords[1][1] + l3 * coords[2][1],
            ];
            let fv = f(x);
            debug_assert_eq!(fv.len(), space.ncomp);
            let w = tp.w * geo.area;
            for (i, &n) in nodes.iter().enumerate() {
                for c in 0..space.ncomp {
                    b[space.dof(n, c)] += w * fv[c] * tab.values[q][i];
                }
            }
        }
    }
    b
}
