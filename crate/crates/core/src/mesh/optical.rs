use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{DensityField, TriMesh};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Weighted edge list: each mesh edge weighs its length times the square root
/// of the mean density of the triangles adjacent to it.
pub(crate) fn travel_time_edges(mesh: &TriMesh, density: &DensityField) -> Result<Vec<(usize, usize, f64)>> {
    if density.len() != mesh.triangle_count() {
        return Err(Error::DimensionMismatch(format!(
            "density has {} values, mesh has {} triangles",
            density.len(),
            mesh.triangle_count()
        )));
    }
    let rho = density.values();
    let mut edges: Vec<(usize, usize, f64)> = mesh
        .edge_owners()
        .into_iter()
        .map(|([a, b], owners)| {
            let mean = owners.iter().map(|&k| rho[k]).sum::<f64>() / owners.len() as f64;
            let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
            let len = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
            (a, b, len * mean.sqrt())
        })
        .collect();
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    Ok(edges)
}

/// Graph estimate of the optical radius `sup dist(x, Γ)` in the metric `√ρ |dx|`.
///
/// Multi-source Dijkstra from all boundary nodes over the mesh edge graph.
/// Graph paths are a subset of all paths, so this over-approximates the
/// continuous radius.
pub fn estimate_optical_radius(mesh: &TriMesh, density: &DensityField) -> Result<f64> {
    let edges = travel_time_edges(mesh, density)?;
    let n = mesh.node_count();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &edges {
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    for &b in mesh.boundary_ring() {
        dist[b] = 0.0;
        heap.push(Entry { dist: 0.0, node: b });
    }
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let candidate = d + w;
            if candidate < dist[next] {
                dist[next] = candidate;
                heap.push(Entry {
                    dist: candidate,
                    node: next,
                });
            }
        }
    }

    let unreachable = dist.iter().filter(|d| d.is_infinite()).count();
    if unreachable > 0 {
        return Err(Error::Disconnected(unreachable));
    }
    Ok(dist.into_iter().fold(0.0, f64::max))
}
