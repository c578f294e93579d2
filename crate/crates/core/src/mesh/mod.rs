//! Triangulations of the unit disk.
//!
//! A [`TriMesh`] stores node coordinates, counterclockwise triangles and the
//! ordered ring of boundary nodes. Every constructor validates the mesh, so a
//! `TriMesh` value always satisfies:
//!
//! * every triangle has strictly positive signed area;
//! * boundary ring nodes lie on the unit circle (within [`BOUNDARY_TOLERANCE`]);
//! * the ring edges form one closed cycle and are exactly the edges owned by a
//!   single triangle;
//! * no edge is shared by more than two triangles.

mod density;
mod generate;
mod io;
mod optical;

use std::collections::HashMap;

pub use density::DensityField;
pub use generate::generate_disk_mesh;
pub use io::{
    format_density, format_mesh, load_density, load_mesh, parse_density, parse_mesh, save_density, save_mesh,
    MeshLoadReport,
};
pub use optical::estimate_optical_radius;
pub(crate) use io::Lines;

use crate::error::{Error, Result};

/// Allowed deviation of a boundary node from the unit circle.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Coordinates of a node in the plane.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_ring: Vec<usize>,
}

/// Area and constant gradients of the three P1 basis functions of a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    pub gradients: [[f64; 2]; 3],
}

impl TriMesh {
    /// Builds a mesh and checks every invariant.
    pub fn new(nodes: Vec<Point>, triangles: Vec<[usize; 3]>, boundary_ring: Vec<usize>) -> Result<Self> {
        let mesh = TriMesh {
            nodes,
            triangles,
            boundary_ring,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_ring(&self) -> &[usize] {
        &self.boundary_ring
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_ring.len()
    }

    /// Consecutive ring pairs, closing the cycle with `(last, first)`.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let n = self.boundary_ring.len();
        (0..n)
            .map(|a| [self.boundary_ring[a], self.boundary_ring[(a + 1) % n]])
            .collect()
    }

    /// Position of every node in the boundary ring, `None` for interior nodes.
    pub fn boundary_positions(&self) -> Vec<Option<usize>> {
        let mut pos = vec![None; self.nodes.len()];
        for (a, &node) in self.boundary_ring.iter().enumerate() {
            pos[node] = Some(a);
        }
        pos
    }

    pub fn triangle_geometry(&self, k: usize) -> Result<TriangleGeometry> {
        let tri = self.triangles.get(k).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "triangle index {k} out of range ({} triangles)",
                self.triangles.len()
            ))
        })?;
        Ok(geometry_of(&self.nodes, tri))
    }

    pub fn centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.triangles[k];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    pub fn areas(&self) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|tri| signed_area(&self.nodes, tri))
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        self.areas().iter().sum()
    }

    /// Pairs of triangles sharing an interior edge, sorted by edge.
    pub fn interior_edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<([usize; 2], usize, usize)> = self
            .edge_owners()
            .into_iter()
            .filter_map(|(edge, owners)| match owners.as_slice() {
                [a, b] => Some((edge, *a.min(b), *a.max(b))),
                _ => None,
            })
            .collect();
        pairs.sort_unstable();
        pairs.into_iter().map(|(_, a, b)| (a, b)).collect()
    }

    /// Undirected mesh edges with the triangles adjacent to each.
    pub fn edge_owners(&self) -> HashMap<[usize; 2], Vec<usize>> {
        let mut owners: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (k, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                owners.entry([a.min(b), a.max(b)]).or_default().push(k);
            }
        }
        owners
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.triangles.is_empty() {
            return Err(invariant("non-empty", "mesh has no triangles".into()));
        }
        if let Some(p) = self.nodes.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(invariant("finite coordinates", format!("node at {p:?}")));
        }
        for (k, tri) in self.triangles.iter().enumerate() {
            if let Some(&i) = tri.iter().find(|&&i| i >= n) {
                return Err(invariant(
                    "node index in range",
                    format!("triangle {k} references node {i} but there are {n} nodes"),
                ));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(invariant("distinct vertices", format!("triangle {k} is {tri:?}")));
            }
            let area = signed_area(&self.nodes, tri);
            if area <= 0.0 {
                return Err(invariant(
                    "positive signed area",
                    format!("triangle {k} {tri:?} has signed area {area:e}"),
                ));
            }
        }

        let ring = &self.boundary_ring;
        if ring.len() < 3 {
            return Err(invariant("closed boundary cycle", format!("ring has {} nodes", ring.len())));
        }
        let mut seen = vec![false; n];
        for &b in ring {
            if b >= n {
                return Err(invariant("node index in range", format!("boundary node {b} of {n}")));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(invariant("closed boundary cycle", format!("node {b} repeated in ring")));
            }
            let r = self.nodes[b][0].hypot(self.nodes[b][1]);
            if (r - 1.0).abs() > BOUNDARY_TOLERANCE {
                return Err(invariant(
                    "boundary on unit circle",
                    format!("boundary node {b} has radius {r}"),
                ));
            }
        }

        let owners = self.edge_owners();
        if let Some((edge, tris)) = owners.iter().find(|(_, t)| t.len() > 2) {
            return Err(invariant(
                "edge shared by at most two triangles",
                format!("edge {edge:?} is shared by triangles {tris:?}"),
            ));
        }
        let mut ring_edges: Vec<[usize; 2]> = self
            .boundary_edges()
            .into_iter()
            .map(|[a, b]| [a.min(b), a.max(b)])
            .collect();
        ring_edges.sort_unstable();
        let mut single: Vec<[usize; 2]> = owners
            .iter()
            .filter(|(_, t)| t.len() == 1)
            .map(|(e, _)| *e)
            .collect();
        single.sort_unstable();
        if ring_edges != single {
            return Err(invariant(
                "boundary edges are exactly the single-owner edges",
                format!(
                    "ring has {} edges, mesh has {} single-owner edges",
                    ring_edges.len(),
                    single.len()
                ),
            ));
        }
        Ok(())
    }
}

fn invariant(invariant: &'static str, detail: String) -> Error {
    Error::MeshInvariant { invariant, detail }
}

pub(crate) fn signed_area(nodes: &[Point], tri: &[usize; 3]) -> f64 {
    let (a, b, c) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn geometry_of(nodes: &[Point], tri: &[usize; 3]) -> TriangleGeometry {
    let (a, b, c) = (nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
    let area = signed_area(nodes, tri);
    let s = 1.0 / (2.0 * area);
    // Gradient of the hat at vertex v is the rotated opposite edge over 2·area.
    let gradients = [
        [(b[1] - c[1]) * s, (c[0] - b[0]) * s],
        [(c[1] - a[1]) * s, (a[0] - c[0]) * s],
        [(a[1] - b[1]) * s, (b[0] - a[0]) * s],
    ];
    TriangleGeometry { area, gradients }
}
