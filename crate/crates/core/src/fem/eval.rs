//! Point evaluation of FE fields on the structured bilayer grid.
//!
//! Cross-mesh error norms evaluate a fine-mesh solution at the quadrature
//! points of a coarse mesh; the structured grid makes location O(1).

use super::space::{ElementFamily, FESpace};
use crate::mesh::{BilayerMesh, Region};

pub struct FieldEvaluator<'a> {
    mesh: &'a BilayerMesh,
    space: &'a FESpace,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(mesh: &'a BilayerMesh, space: &'a FESpace) -> Self {
        FieldEvaluator { mesh, space }
    }

    /// Locate the region-local triangle containing (x, y) and its reference
    /// coordinates. Points outside the region are clamped onto it.
    fn locate(&self, x: f64, y: f64) -> (usize, f64, f64) {
        let d = &self.mesh.dims;
        let dx = d.length / d.nx as f64;
        let (y0, dy, ny) = match self.space.region {
            Region::Fluid => (0.0, d.radius / d.ny_f as f64, d.ny_f),
            Region::Poro => (d.radius, d.wall_thickness / d.ny_p as f64, d.ny_p),
        };
        let fx = (x / dx).clamp(0.0, d.nx as f64 - 1e-12);
        let fy = ((y - y0) / dy).clamp(0.0, ny as f64 - 1e-12);
        let i = fx.floor() as usize;
        let j = fy.floor() as usize;
        let sx = fx - i as f64;
        let sy = fy - j as f64;
        // Cell split by the diagonal from (0,0) to (1,1): the lower-right
        // triangle (v order a,b,c) covers sx >= sy.
        let cell = j * d.nx + i;
        if sx >= sy {
            // vertices a=(0,0), b=(1,0), c=(1,1): xi along ab, eta along bc.
            // x = a + xi*(b-a) + eta*(c-a) with b-a=(1,0), c-a=(1,1):
            // sx = xi + eta, sy = eta.
            (2 * cell, sx - sy, sy)
        } else {
            // vertices a=(0,0), c=(1,1), d=(0,1): sx = xi, sy = xi + eta.
            (2 * cell + 1, sx, sy - sx)
        }
    }

    fn basis(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let l1 = 1.0 - xi - eta;
        let (l2, l3) = (xi, eta);
        match self.space.family {
            ElementFamily::P1 => (
                vec![l1, l2, l3],
                vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
            ),
            ElementFamily::P2 => {
                let g1 = [-1.0, -1.0];
                let g2 = [1.0, 0.0];
                let g3 = [0.0, 1.0];
                let lin = |a: f64, g: [f64; 2]| [(4.0 * a - 1.0) * g[0], (4.0 * a - 1.0) * g[1]];
                let edge = |a: f64, ga: [f64; 2], b: f64, gb: [f64; 2]| {
                    [4.0 * (b * ga[0] + a * gb[0]), 4.0 * (b * ga[1] + a * gb[1])]
                };
                (
                    vec![
                        l1 * (2.0 * l1 - 1.0),
                        l2 * (2.0 * l2 - 1.0),
                        l3 * (2.0 * l3 - 1.0),
                        4.0 * l1 * l2,
                        4.0 * l2 * l3,
                        4.0 * l3 * l1,
                    ],
                    vec![
                        lin(l1, g1),
                        lin(l2, g2),
                        lin(l3, g3),
                        edge(l1, g1, l2, g2),
                        edge(l2, g2, l3, g3),
                        edge(l3, g3, l1, g1),
                    ],
                )
            }
        }
    }

    /// Evaluate value and gradient of every component at (x, y).
    /// Returns (values, gradients) with one entry per component.
    pub fn eval(&self, dofs: &[f64], x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (tri_local, xi, eta) = self.locate(x, y);
        let nodes = &self.space.tri_nodes[tri_local];
        let tri = &self.mesh.triangles[self.space.tri_mesh_ids[tri_local]];
        let coords = [
            self.mesh.nodes[tri.v[0]],
            self.mesh.nodes[tri.v[1]],
            self.mesh.nodes[tri.v[2]],
        ];
        let (vals, ref_grads) = self.basis(xi, eta);
        let j00 = coords[1][0] - coords[0][0];
        let j10 = coords[1][1] - coords[0][1];
        let j01 = coords[2][0] - coords[0][0];
        let j11 = coords[2][1] - coords[0][1];
        let det = j00 * j11 - j01 * j10;
        let mut out_v = vec![0.0; self.space.ncomp];
        let mut out_g = vec![[0.0; 2]; self.space.ncomp];
        for (i, &n) in nodes.iter().enumerate() {
            let g = ref_grads[i];
            let gx = (j11 * g[0] - j10 * g[1]) / det;
            let gy = (-j01 * g[0] + j00 * g[1]) / det;
            for c in 0..self.space.ncomp {
                let u = dofs[self.space.dof(n, c)];
                out_v[c] += u * vals[i];
                out_g[c][0] += u * gx;
                out_g[c][1] += u * gy;
            }
        }
        (out_v, out_g)
    }
}
