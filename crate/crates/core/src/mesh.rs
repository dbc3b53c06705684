//! Structured, conforming triangulation of the bilayer reference geometry.
//!
//! The domain is a fluid rectangle `(0,L) x (0,R)` stacked under a poroelastic
//! rectangle `(0,L) x (R,R+r_p)`. Both layers are meshed from one tensor grid
//! so the interface line `y = R` is shared node-for-node. Each grid cell is
//! split into two right triangles by the diagonal from its lower-left to its
//! upper-right corner, which makes every refinement deterministic and lets a
//! single `dx` knob drive resolution studies.

use crate::error::{Error, Result};
use std::fmt;
use std::io::Write;

/// Which layer a triangle belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Fluid,
    Poro,
}

/// Boundary segment tags. `Interface` marks the shared line `y = R`, which is
/// interior to the mesh but a boundary of both single-region FE spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum BoundaryTag {
    InletF,
    OutletF,
    Axis,
    Interface,
    InletP,
    OutletP,
    Exterior,
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::InletF => "inlet_f",
            BoundaryTag::OutletF => "outlet_f",
            BoundaryTag::Axis => "axis",
            BoundaryTag::Interface => "interface",
            BoundaryTag::InletP => "inlet_p",
            BoundaryTag::OutletP => "outlet_p",
            BoundaryTag::Exterior => "exterior",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Triangle {
    /// Node indices, counter-clockwise (positive signed area).
    pub v: [usize; 3],
    pub region: Region,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

/// Subdivision counts and physical extents the mesh was built from.
#[derive(Clone, Copy, Debug)]
pub struct GridDims {
    pub length: f64,
    pub radius: f64,
    pub wall_thickness: f64,
    pub nx: usize,
    pub ny_f: usize,
    pub ny_p: usize,
}

/// Conforming triangulation of the bilayer channel. Immutable after
/// construction; safe to share read-only across assembly workers.
#[derive(Clone, Debug)]
pub struct BilayerMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Characteristic mesh size: the largest axis-aligned cell edge (cm).
    pub h: f64,
    pub dims: GridDims,
}

impl BilayerMesh {
    /// Grid node index for column `i` (0..=nx) and row `j` (0..=ny_f+ny_p).
    #[inline]
    pub fn node_id(&self, i: usize, j: usize) -> usize {
        j * (self.dims.nx + 1) + i
    }

    pub fn n_rows(&self) -> usize {
        self.dims.ny_f + self.dims.ny_p + 1
    }

    /// Row index of the interface line `y = R`.
    pub fn interface_row(&self) -> usize {
        self.dims.ny_f
    }

    pub fn triangle_area(&self, t: &Triangle) -> f64 {
        let [a, b, c] = t.v;
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn region_area(&self, region: Region) -> f64 {
        self.triangles
            .iter()
            .filter(|t| t.region == region)
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Dump the mesh as a legacy-ASCII VTK unstructured grid with region tags
    /// as cell data, for visual inspection.
    pub fn write_vtk(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = String::new();
        buf.push_str("# vtk DataFile Version 3.0\nbilayer mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
        buf.push_str(&format!("POINTS {} double\n", self.nodes.len()));
        for p in &self.nodes {
            buf.push_str(&format!("{:.17e} {:.17e} 0.0\n", p[0], p[1]));
        }
        buf.push_str(&format!(
            "CELLS {} {}\n",
            self.triangles.len(),
            4 * self.triangles.len()
        ));
        for t in &self.triangles {
            buf.push_str(&format!("3 {} {} {}\n", t.v[0], t.v[1], t.v[2]));
        }
        buf.push_str(&format!("CELL_TYPES {}\n", self.triangles.len()));
        for _ in &self.triangles {
            buf.push_str("5\n");
        }
        buf.push_str(&format!("CELL_DATA {}\n", self.triangles.len()));
        buf.push_str("SCALARS region int 1\nLOOKUP_TABLE default\n");
        for t in &self.triangles {
            buf.push_str(if t.region == Region::Fluid { "0\n" } else { "1\n" });
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        f.write_all(buf.as_bytes()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// One interface node with its fluid-side and poro-side handles. The meshes
/// are conforming, so both handles point at the same grid node; keeping both
/// makes the bijection between the two trace spaces explicit.
#[derive(Clone, Copy, Debug)]
pub struct InterfaceNode {
    pub fluid_node: usize,
    pub poro_node: usize,
    /// Arc coordinate along the interface, `x` in `[0, L]`.
    pub arc: f64,
}

/// Ordered map of the interface trace, increasing in `x`.
#[derive(Clone, Debug)]
pub struct InterfaceMap {
    pub nodes: Vec<InterfaceNode>,
}

impl InterfaceMap {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Build the structured bilayer mesh.
///
/// `nx`, `ny_f`, `ny_p` are the cell counts along `x`, across the fluid layer
/// and across the poroelastic layer. Every cell is split into two triangles,
/// so the mesh has `(nx+1)(ny_f+ny_p+1)` nodes and `2 nx (ny_f+ny_p)`
/// triangles.
pub fn build_mesh(
    length: f64,
    radius: f64,
    wall_thickness: f64,
    nx: usize,
    ny_f: usize,
    ny_p: usize,
) -> Result<BilayerMesh> {
    if !(length > 0.0) || !(radius > 0.0) || !(wall_thickness > 0.0) {
        return Err(Error::invalid(format!(
            "mesh dimensions must be positive, got L={length}, R={radius}, r_p={wall_thickness}"
        )));
    }
    if nx == 0 || ny_f == 0 || ny_p == 0 {
        return Err(Error::invalid(format!(
            "subdivision counts must be at least 1, got nx={nx}, ny_f={ny_f}, ny_p={ny_p}"
        )));
    }

    let dx = length / nx as f64;
    let dy_f = radius / ny_f as f64;
    let dy_p = wall_thickness / ny_p as f64;
    let ny = ny_f + ny_p;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // Rows are pinned to exact layer boundaries so the interface and the
        // exterior wall carry no accumulated rounding.
        let y = if j <= ny_f {
            if j == ny_f {
                radius
            } else {
                j as f64 * dy_f
            }
        } else if j == ny {
            radius + wall_thickness
        } else {
            radius + (j - ny_f) as f64 * dy_p
        };
        for i in 0..=nx {
            let x = if i == nx { length } else { i as f64 * dx };
            nodes.push([x, y]);
        }
    }

    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        let region = if j < ny_f { Region::Fluid } else { Region::Poro };
        for i in 0..nx {
            let a = id(i, j);
            let b = id(i + 1, j);
            let c = id(i + 1, j + 1);
            let d = id(i, j + 1);
            // Diagonal runs lower-left to upper-right.
            triangles.push(Triangle { v: [a, b, c], region });
            triangles.push(Triangle { v: [a, c, d], region });
        }
    }

    let mut boundary_edges = Vec::new();
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            v: [id(i, 0), id(i + 1, 0)],
            tag: BoundaryTag::Axis,
        });
        boundary_edges.push(BoundaryEdge {
            v: [id(i, ny_f), id(i + 1, ny_f)],
            tag: BoundaryTag::Interface,
        });
        boundary_edges.push(BoundaryEdge {
            v: [id(i, ny), id(i + 1, ny)],
            tag: BoundaryTag::Exterior,
        });
    }
    for j in 0..ny {
        let (in_tag, out_tag) = if j < ny_f {
            (BoundaryTag::InletF, BoundaryTag::OutletF)
        } else {
            (BoundaryTag::InletP, BoundaryTag::OutletP)
        };
        boundary_edges.push(BoundaryEdge {
            v: [id(0, j), id(0, j + 1)],
            tag: in_tag,
        });
        boundary_edges.push(BoundaryEdge {
            v: [id(nx, j), id(nx, j + 1)],
            tag: out_tag,
        });
    }

    let h = dx.max(dy_f).max(dy_p);
    let mesh = BilayerMesh {
        nodes,
        triangles,
        boundary_edges,
        h,
        dims: GridDims {
            length,
            radius,
            wall_thickness,
            nx,
            ny_f,
            ny_p,
        },
    };
    debug_assert!(mesh.triangles.iter().all(|t| mesh.triangle_area(t) > 0.0));
    Ok(mesh)
}

/// Extract the ordered interface trace map. Fails if the two layers do not
/// share identical interface nodes (cannot happen for meshes produced by
/// [`build_mesh`], but the contract is checked).
pub fn interface_trace(mesh: &BilayerMesh) -> Result<InterfaceMap> {
    let radius = mesh.dims.radius;
    let row = mesh.interface_row();
    let mut nodes = Vec::with_capacity(mesh.dims.nx + 1);
    for i in 0..=mesh.dims.nx {
        let n = mesh.node_id(i, row);
        let p = mesh.nodes[n];
        if (p[1] - radius).abs() > 1e-12 {
            return Err(Error::Inconsistent(format!(
                "interface node {n} sits at y={} instead of y={radius}",
                p[1]
            )));
        }
        nodes.push(InterfaceNode {
            fluid_node: n,
            poro_node: n,
            arc: p[0],
        });
    }
    for w in nodes.windows(2) {
        if !(w[1].arc > w[0].arc) {
            return Err(Error::Inconsistent(
                "interface arc coordinates are not strictly increasing".into(),
            ));
        }
    }
    Ok(InterfaceMap { nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_match_structured_grid() {
        let m = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        assert_eq!(m.nodes.len(), 13 * 7);
        assert_eq!(m.triangles.len(), 2 * 12 * (4 + 2));
    }

    #[test]
    fn unit_bilayer_areas() {
        let m = build_mesh(1.0, 1.0, 1.0, 1, 1, 1).unwrap();
        let fluid: Vec<_> = m.triangles.iter().filter(|t| t.region == Region::Fluid).collect();
        let poro: Vec<_> = m.triangles.iter().filter(|t| t.region == Region::Poro).collect();
        assert_eq!(fluid.len(), 2);
        assert_eq!(poro.len(), 2);
        let total: f64 = m.triangles.iter().map(|t| m.triangle_area(t)).sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn example1_resolution_h() {
        // Subdivisions chosen so the largest axis-aligned edge is ~0.016.
        let m = build_mesh(6.0, 0.5, 0.1, 375, 31, 7).unwrap();
        // Direct measurement over the built mesh: max over the two
        // axis-aligned edges of every triangle (the hypotenuse is the split
        // diagonal, not a grid edge).
        let mut max_edge: f64 = 0.0;
        for t in &m.triangles {
            for (a, b) in [(t.v[0], t.v[1]), (t.v[1], t.v[2]), (t.v[2], t.v[0])] {
                let pa = m.nodes[a];
                let pb = m.nodes[b];
                let axis_aligned = (pa[0] - pb[0]).abs() < 1e-15 || (pa[1] - pb[1]).abs() < 1e-15;
                if axis_aligned {
                    let e = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                    max_edge = max_edge.max(e);
                }
            }
        }
        assert!((m.h - max_edge).abs() < 1e-12);
        assert!((m.h - 0.016).abs() < 2e-4, "h = {}", m.h);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_mesh(0.0, 0.5, 0.1, 4, 2, 1).is_err());
        assert!(build_mesh(6.0, -1.0, 0.1, 4, 2, 1).is_err());
        assert!(build_mesh(6.0, 0.5, 0.1, 0, 2, 1).is_err());
        assert!(build_mesh(6.0, 0.5, 0.1, 4, 2, 0).is_err());
    }

    #[test]
    fn no_duplicate_nodes() {
        let m = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        for (i, a) in m.nodes.iter().enumerate() {
            for b in m.nodes.iter().skip(i + 1) {
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!(d > 1e-12);
            }
        }
    }

    #[test]
    fn boundary_tags_partition() {
        let m = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let (l, r, rp) = (6.0, 0.5, 0.1);
        for e in &m.boundary_edges {
            let pa = m.nodes[e.v[0]];
            let pb = m.nodes[e.v[1]];
            let on = |f: &dyn Fn(&[f64; 2]) -> bool| f(&pa) && f(&pb);
            match e.tag {
                BoundaryTag::Axis => assert!(on(&|p| p[1] == 0.0)),
                BoundaryTag::Interface => assert!(on(&|p| p[1] == r)),
                BoundaryTag::Exterior => assert!(on(&|p| p[1] == r + rp)),
                BoundaryTag::InletF => assert!(on(&|p| p[0] == 0.0 && p[1] <= r)),
                BoundaryTag::OutletF => assert!(on(&|p| p[0] == l && p[1] <= r)),
                BoundaryTag::InletP => assert!(on(&|p| p[0] == 0.0 && p[1] >= r)),
                BoundaryTag::OutletP => assert!(on(&|p| p[0] == l && p[1] >= r)),
            }
        }
    }

    #[test]
    fn interface_map_uniform_spacing() {
        let m = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let im = interface_trace(&m).unwrap();
        assert_eq!(im.len(), 13);
        for (k, n) in im.nodes.iter().enumerate() {
            assert!((n.arc - 0.5 * k as f64).abs() < 1e-12);
            assert_eq!(n.fluid_node, n.poro_node);
        }
        assert_eq!(im.nodes.first().unwrap().arc, 0.0);
        assert_eq!(im.nodes.last().unwrap().arc, 6.0);
    }

    #[test]
    fn interface_map_unit_bilayer() {
        let m = build_mesh(1.0, 1.0, 1.0, 1, 1, 1).unwrap();
        let im = interface_trace(&m).unwrap();
        assert_eq!(im.len(), 2);
    }

    #[test]
    fn refinement_doubles_interface_nodes() {
        for nx in [3usize, 6, 12] {
            let m = build_mesh(6.0, 0.5, 0.1, 2 * nx, 4, 2).unwrap();
            let im = interface_trace(&m).unwrap();
            assert_eq!(im.len(), 2 * nx + 1);
            assert!(im.nodes.windows(2).all(|w| w[1].arc > w[0].arc));
        }
    }

    #[test]
    fn refinement_halves_h() {
        let m1 = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let m2 = build_mesh(6.0, 0.5, 0.1, 24, 8, 4).unwrap();
        assert_eq!(m2.h, 0.5 * m1.h);
    }

    #[test]
    fn interface_edges_have_one_triangle_per_side() {
        let m = build_mesh(3.0, 0.5, 0.1, 6, 3, 2).unwrap();
        for e in m.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Interface) {
            let mut fluid = 0;
            let mut poro = 0;
            for t in &m.triangles {
                let has = |n: usize| t.v.contains(&n);
                if has(e.v[0]) && has(e.v[1]) {
                    match t.region {
                        Region::Fluid => fluid += 1,
                        Region::Poro => poro += 1,
                    }
                }
            }
            assert_eq!((fluid, poro), (1, 1));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn area_conservation(nx in 1usize..12, ny_f in 1usize..8, ny_p in 1usize..5) {
            let (l, r, rp) = (6.0, 0.5, 0.1);
            let m = build_mesh(l, r, rp, nx, ny_f, ny_p).unwrap();
            let af = m.region_area(Region::Fluid);
            let ap = m.region_area(Region::Poro);
            prop_assert!(((af - l * r) / (l * r)).abs() < 1e-10);
            prop_assert!(((ap - l * rp) / (l * rp)).abs() < 1e-10);
            for t in &m.triangles {
                prop_assert!(m.triangle_area(t) > 0.0);
            }
        }
    }
}
