//! Scalar and vector Lagrange spaces (degree 1 and 2) restricted to one mesh
//! region, with interface trace bookkeeping.
//!
//! DOF layout is node-major interleaved: `dof = node * ncomp + comp`.

use crate::error::{Error, Result};
use crate::mesh::{BilayerMesh, BoundaryTag, Region};
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementFamily {
    P1,
    P2,
}

/// One boundary segment of a trace mesh, nodes ordered along the segment.
/// P1 segments carry `[a, b]`, P2 segments `[a, mid, b]`.
#[derive(Clone, Debug)]
pub struct TraceSegment {
    pub nodes: Vec<usize>,
    pub p: [[f64; 2]; 2],
}

impl TraceSegment {
    pub fn len(&self) -> f64 {
        let dx = self.p[1][0] - self.p[0][0];
        let dy = self.p[1][1] - self.p[0][1];
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct FESpace {
    pub region: Region,
    pub family: ElementFamily,
    pub ncomp: usize,
    /// Coordinates of every space node (vertices, then P2 edge midpoints as
    /// they are first encountered).
    pub node_coords: Vec<[f64; 2]>,
    /// Per region triangle (mesh order): space node indices, local order
    /// `[v0,v1,v2]` or `[v0,v1,v2,m01,m12,m20]`.
    pub tri_nodes: Vec<Vec<usize>>,
    /// Mesh triangle index for each entry of `tri_nodes`.
    pub tri_mesh_ids: Vec<usize>,
    /// Space node for each mesh vertex, where present.
    pub node_of_vertex: Vec<Option<usize>>,
    /// Space nodes on each tagged boundary, sorted.
    pub boundary_nodes: BTreeMap<BoundaryTag, Vec<usize>>,
    /// Trace segments of each tagged boundary this region touches, ordered
    /// along the boundary.
    pub boundary_segments: BTreeMap<BoundaryTag, Vec<TraceSegment>>,
    /// Interface trace nodes sorted by x (vertices and, for P2, midpoints).
    pub interface_nodes: Vec<usize>,
}

impl FESpace {
    pub fn build(
        mesh: &BilayerMesh,
        region: Region,
        family: ElementFamily,
        ncomp: usize,
    ) -> Self {
        assert!(ncomp == 1 || ncomp == 2);
        let mut node_of_vertex: Vec<Option<usize>> = vec![None; mesh.nodes.len()];
        let mut node_coords: Vec<[f64; 2]> = Vec::new();
        let mut edge_nodes: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tri_nodes = Vec::new();
        let mut tri_mesh_ids = Vec::new();

        for (tid, tri) in mesh.triangles.iter().enumerate() {
            if tri.region != region {
                continue;
            }
            let mut locals = Vec::with_capacity(if family == ElementFamily::P2 { 6 } else { 3 });
            for &v in &tri.v {
                let n = *node_of_vertex[v].get_or_insert_with(|| {
                    node_coords.push(mesh.nodes[v]);
                    node_coords.len() - 1
                });
                locals.push(n);
            }
            if family == ElementFamily::P2 {
                for (a, b) in [(tri.v[0], tri.v[1]), (tri.v[1], tri.v[2]), (tri.v[2], tri.v[0])] {
                    let key = (a.min(b), a.max(b));
                    let n = *edge_nodes.entry(key).or_insert_with(|| {
                        let pa = mesh.nodes[a];
                        let pb = mesh.nodes[b];
                        node_coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                        node_coords.len() - 1
                    });
                    locals.push(n);
                }
            }
            tri_nodes.push(locals);
            tri_mesh_ids.push(tid);
        }

        let mut boundary_nodes: BTreeMap<BoundaryTag, Vec<usize>> = BTreeMap::new();
        let mut boundary_segments: BTreeMap<BoundaryTag, Vec<TraceSegment>> = BTreeMap::new();
        for edge in &mesh.boundary_edges {
            let a = node_of_vertex[edge.v[0]];
            let b = node_of_vertex[edge.v[1]];
            let (Some(a), Some(b)) = (a, b) else { continue };
            let mid = if family == ElementFamily::P2 {
                let key = (edge.v[0].min(edge.v[1]), edge.v[0].max(edge.v[1]));
                match edge_nodes.get(&key) {
                    Some(&m) => Some(m),
                    // Edge of the other region (e.g. the interface seen from a
                    // space that has no triangle on that side).
                    None => continue,
                }
            } else {
                None
            };
            let set = boundary_nodes.entry(edge.tag).or_default();
            set.push(a);
            set.push(b);
            if let Some(m) = mid {
                set.push(m);
            }
            // Order the segment by (x, y) so interface segments run left to
            // right and inlet/outlet segments bottom to top.
            let (pa, pb) = (node_coords[a], node_coords[b]);
            let (left, right) = if (pa[0], pa[1]) <= (pb[0], pb[1]) { (a, b) } else { (b, a) };
            let nodes = match mid {
                Some(m) => vec![left, m, right],
                None => vec![left, right],
            };
            boundary_segments.entry(edge.tag).or_default().push(TraceSegment {
                nodes,
                p: [node_coords[left], node_coords[right]],
            });
        }
        for set in boundary_nodes.values_mut() {
            set.sort_unstable();
            set.dedup();
        }
        for segs in boundary_segments.values_mut() {
            segs.sort_by(|s, t| {
                (s.p[0][0], s.p[0][1])
                    .partial_cmp(&(t.p[0][0], t.p[0][1]))
                    .unwrap()
            });
        }

        let mut interface_nodes: Vec<usize> = boundary_segments
            .get(&BoundaryTag::Interface)
            .map(|segs| segs.iter().flat_map(|s| s.nodes.iter().copied()).collect())
            .unwrap_or_default();
        interface_nodes.sort_by(|&a, &b| node_coords[a][0].partial_cmp(&node_coords[b][0]).unwrap());
        interface_nodes.dedup();

        FESpace {
            region,
            family,
            ncomp,
            node_coords,
            tri_nodes,
            tri_mesh_ids,
            node_of_vertex,
            boundary_nodes,
            boundary_segments,
            interface_nodes,
        }
    }

    pub fn interface_segments(&self) -> &[TraceSegment] {
        self.boundary_segments
            .get(&BoundaryTag::Interface)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn ndofs(&self) -> usize {
        self.node_coords.len() * self.ncomp
    }

    #[inline]
    pub fn dof(&self, node: usize, comp: usize) -> usize {
        debug_assert!(comp < self.ncomp);
        node * self.ncomp + comp
    }

    pub fn nodes_per_tri(&self) -> usize {
        match self.family {
            ElementFamily::P1 => 3,
            ElementFamily::P2 => 6,
        }
    }

    /// DOFs of one component on a tagged boundary (empty if the tag does not
    /// touch this region).
    pub fn boundary_dofs(&self, tag: BoundaryTag, comp: usize) -> Vec<usize> {
        self.boundary_nodes
            .get(&tag)
            .map(|nodes| nodes.iter().map(|&n| self.dof(n, comp)).collect())
            .unwrap_or_default()
    }

    /// Space nodes at the given physical coordinates, if any.
    pub fn node_at(&self, x: f64, y: f64, tol: f64) -> Option<usize> {
        self.node_coords
            .iter()
            .position(|p| (p[0] - x).abs() <= tol && (p[1] - y).abs() <= tol)
    }

    /// Ordered interface DOFs of one component (increasing x).
    pub fn interface_dofs(&self, comp: usize) -> Vec<usize> {
        self.interface_nodes.iter().map(|&n| self.dof(n, comp)).collect()
    }

    pub fn expect_same_region(&self, other: &FESpace) -> Result<()> {
        if self.region != other.region {
            return Err(Error::invalid(
                "row and column spaces live on different mesh regions",
            ));
        }
        Ok(())
    }
}

/// The element pair used throughout: degree-2 velocity with degree-1 pressure
/// on the fluid (inf-sup stable), degree-1 displacement/velocity and pressure
/// on the poroelastic layer. Membrane unknowns are the interface traces of
/// the poroelastic spaces.
#[derive(Clone, Debug)]
pub struct Spaces {
    pub fluid_v: FESpace,
    pub fluid_p: FESpace,
    pub poro_v: FESpace,
    pub poro_p: FESpace,
}

impl Spaces {
    pub fn build(mesh: &BilayerMesh) -> Self {
        Spaces {
            fluid_v: FESpace::build(mesh, Region::Fluid, ElementFamily::P2, 2),
            fluid_p: FESpace::build(mesh, Region::Fluid, ElementFamily::P1, 1),
            poro_v: FESpace::build(mesh, Region::Poro, ElementFamily::P1, 2),
            poro_p: FESpace::build(mesh, Region::Poro, ElementFamily::P1, 1),
        }
    }

    pub fn total_dofs(&self) -> usize {
        self.fluid_v.ndofs() + self.fluid_p.ndofs() + 2 * self.poro_v.ndofs() + self.poro_p.ndofs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn dof_counts() {
        let mesh = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let s = Spaces::build(&mesh);
        // P1 scalar on fluid: (nx+1)(ny_f+1) vertices.
        assert_eq!(s.fluid_p.ndofs(), 13 * 5);
        // P1 vector on poro: (nx+1)(ny_p+1) vertices x 2.
        assert_eq!(s.poro_v.ndofs(), 13 * 3 * 2);
        // P2 vector on fluid: vertices + edges, x 2. Structured grid:
        // edges = horizontal + vertical + diagonal.
        let verts = 13 * 5;
        let edges = 12 * 5 + 13 * 4 + 12 * 4;
        assert_eq!(s.fluid_v.ndofs(), (verts + edges) * 2);
    }

    #[test]
    fn shared_edges_share_dofs() {
        let mesh = build_mesh(1.0, 1.0, 1.0, 2, 2, 1).unwrap();
        let sp = FESpace::build(&mesh, Region::Fluid, ElementFamily::P2, 1);
        // Count how many triangles every node appears in; interior vertices
        // of the structured grid belong to 6 triangles.
        let mut uses = vec![0usize; sp.n_nodes()];
        for t in &sp.tri_nodes {
            for &n in t {
                uses[n] += 1;
            }
        }
        assert!(uses.iter().all(|&u| u >= 1));
        let interior = sp.node_at(0.5, 0.5, 1e-12).unwrap();
        assert_eq!(uses[interior], 6);
    }

    #[test]
    fn interface_nodes_ordered() {
        let mesh = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let s = Spaces::build(&mesh);
        // Fluid P2 trace: vertices and midpoints, 2*nx+1 of them.
        assert_eq!(s.fluid_v.interface_nodes.len(), 25);
        assert_eq!(s.poro_v.interface_nodes.len(), 13);
        let xs: Vec<f64> = s
            .fluid_v
            .interface_nodes
            .iter()
            .map(|&n| s.fluid_v.node_coords[n][0])
            .collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s.fluid_v.interface_segments().len(), 12);
        assert_eq!(s.poro_v.interface_segments().len(), 12);
    }

    #[test]
    fn boundary_sets() {
        let mesh = build_mesh(6.0, 0.5, 0.1, 12, 4, 2).unwrap();
        let s = Spaces::build(&mesh);
        // Axis: nx+1 vertices + nx midpoints for P2.
        assert_eq!(s.fluid_v.boundary_nodes[&BoundaryTag::Axis].len(), 25);
        // Poro space does not see fluid-only boundaries.
        assert!(s.poro_v.boundary_nodes.get(&BoundaryTag::Axis).is_none());
        assert!(s.poro_v.boundary_nodes.get(&BoundaryTag::InletF).is_none());
        // Drained boundary of the pore-pressure space.
        assert_eq!(s.poro_p.boundary_nodes[&BoundaryTag::Exterior].len(), 13);
        assert_eq!(s.poro_p.boundary_nodes[&BoundaryTag::InletP].len(), 3);
    }
}
