use std::f64::consts::PI;

use super::{signed_area, Point, TriMesh};
use crate::error::{Error, Result};

/// Smallest triangle area accepted from the generator.
const MIN_AREA: f64 = 1e-12;

/// Concentric-ring triangulation of the unit disk.
///
/// Ring `r` (1-based) has radius `r / n_rings` and `round(n_boundary · r / n_rings)`
/// nodes (at least 3), all starting at angle zero. Neighbouring rings are
/// stitched by walking both rings in angle order. The outermost ring is the
/// boundary ring, listed counterclockwise.
pub fn generate_disk_mesh(n_rings: usize, n_boundary: usize) -> Result<TriMesh> {
    if n_rings < 1 {
        return Err(Error::InvalidArgument("n_rings must be at least 1".into()));
    }
    if n_boundary < 8 {
        return Err(Error::InvalidArgument(format!(
            "n_boundary must be at least 8, got {n_boundary}"
        )));
    }

    let mut nodes: Vec<Point> = vec![[0.0, 0.0]];
    let mut rings: Vec<Vec<usize>> = Vec::with_capacity(n_rings);
    for r in 1..=n_rings {
        let count = ((n_boundary * r) as f64 / n_rings as f64).round().max(3.0) as usize;
        let count = if r == n_rings { n_boundary } else { count };
        let radius = r as f64 / n_rings as f64;
        let ring = (0..count)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / count as f64;
                nodes.push(if r == n_rings {
                    [angle.cos(), angle.sin()]
                } else {
                    [radius * angle.cos(), radius * angle.sin()]
                });
                nodes.len() - 1
            })
            .collect();
        rings.push(ring);
    }

    let mut triangles = Vec::new();
    let first = &rings[0];
    for k in 0..first.len() {
        triangles.push([0, first[k], first[(k + 1) % first.len()]]);
    }
    for pair in rings.windows(2) {
        stitch(&pair[0], &pair[1], &mut triangles);
    }

    for (k, tri) in triangles.iter().enumerate() {
        let area = signed_area(&nodes, tri);
        if area <= MIN_AREA {
            return Err(Error::DegenerateMesh(format!(
                "triangle {k} has area {area:e} for n_rings={n_rings}, n_boundary={n_boundary}"
            )));
        }
    }

    let boundary = rings.pop().expect("at least one ring");
    TriMesh::new(nodes, triangles, boundary)
}

/// Fills the annulus between two rings whose nodes are ordered by angle.
fn stitch(inner: &[usize], outer: &[usize], triangles: &mut Vec<[usize; 3]>) {
    let (ni, no) = (inner.len(), outer.len());
    let (mut i, mut j) = (0, 0);
    while i < ni || j < no {
        // Compare next angles as fractions of a turn: (i+1)/ni vs (j+1)/no.
        let advance_outer = j < no && (i >= ni || (j + 1) * ni <= (i + 1) * no);
        if advance_outer {
            triangles.push([inner[i % ni], outer[j], outer[(j + 1) % no]]);
            j += 1;
        } else {
            triangles.push([inner[i], outer[j % no], inner[(i + 1) % ni]]);
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_ring_fan() {
        let mesh = generate_disk_mesh(1, 8).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.triangle_count(), 8);
        assert_eq!(mesh.boundary_ring().len(), 8);
    }

    #[test]
    fn boundary_ring_is_closed_cycle() {
        let mesh = generate_disk_mesh(4, 32).unwrap();
        assert_eq!(mesh.boundary_ring().len(), 32);
        let edges = mesh.boundary_edges();
        assert_eq!(edges.len(), 32);
        for w in edges.windows(2) {
            assert_eq!(w[0][1], w[1][0]);
        }
        assert_eq!(edges[31][1], edges[0][0]);
    }

    #[test]
    fn area_close_to_pi() {
        for (rings, nb) in [(1, 12), (2, 16), (4, 32), (6, 24), (8, 48)] {
            let a = generate_disk_mesh(rings, nb).unwrap().total_area();
            assert!(a <= PI && a >= 0.95 * PI, "({rings},{nb}) area {a}");
        }
    }

    #[test]
    fn area_grows_with_boundary_refinement() {
        let areas: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&nb| generate_disk_mesh(3, nb).unwrap().total_area())
            .collect();
        for w in areas.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn triangle_count_between_rings() {
        // Each annulus contributes n_inner + n_outer triangles.
        let mesh = generate_disk_mesh(6, 24).unwrap();
        let counts = [4, 8, 12, 16, 20, 24];
        let expected = counts[0] + counts.windows(2).map(|w| w[0] + w[1]).sum::<usize>();
        assert_eq!(mesh.triangle_count(), expected);
        assert_eq!(mesh.node_count(), 1 + counts.iter().sum::<usize>());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_disk_mesh(0, 8).is_err());
        assert!(generate_disk_mesh(2, 7).is_err());
    }

    #[test]
    fn many_rings_few_boundary_nodes() {
        // Inner rings clamp to 3 nodes; the stitcher must still produce valid triangles.
        let mesh = generate_disk_mesh(5, 8).unwrap();
        assert_eq!(mesh.boundary_count(), 8);
    }
}
