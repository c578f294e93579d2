use bctomo_core::mesh::{estimate_optical_radius, generate_disk_mesh, DensityField, TriMesh};
use proptest::prelude::*;

// Floyd–Warshall over the same edge weights.
fn brute_force(mesh: &TriMesh, rho: &DensityField) -> f64 {
    let n = mesh.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for ([a, b], owners) in mesh.edge_owners() {
        let mean = owners.iter().map(|&k| rho.values()[k]).sum::<f64>() / owners.len() as f64;
        let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
        let w = (pa[0] - pb[0]).hypot(pa[1] - pb[1]) * mean.sqrt();
        d[a][b] = d[a][b].min(w);
        d[b][a] = d[b][a].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    (0..n)
        .map(|x| mesh.boundary_ring().iter().map(|&b| d[b][x]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn field(mesh: &TriMesh, values: &[f64]) -> DensityField {
    DensityField::new(
        (0..mesh.triangle_count()).map(|k| values[k % values.len()]).collect(),
        (0.1, 10.0),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_all_pairs_shortest_paths(values in prop::collection::vec(0.2f64..5.0, 1..12)) {
        let mesh = generate_disk_mesh(3, 12).unwrap();
        let rho = field(&mesh, &values);
        let fast = estimate_optical_radius(&mesh, &rho).unwrap();
        let slow = brute_force(&mesh, &rho);
        prop_assert!((fast - slow).abs() <= 1e-12 * slow, "{} vs {}", fast, slow);
    }

    #[test]
    fn monotone_in_density(values in prop::collection::vec(0.2f64..5.0, 1..12), bump in 0.0f64..4.0) {
        let mesh = generate_disk_mesh(3, 12).unwrap();
        let low = field(&mesh, &values);
        let raised: Vec<f64> = values.iter().map(|v| v + bump).collect();
        let high = field(&mesh, &raised);
        prop_assert!(estimate_optical_radius(&mesh, &low).unwrap() <= estimate_optical_radius(&mesh, &high).unwrap());
    }
}

#[test]
fn scales_with_square_root_of_density() {
    let mesh = generate_disk_mesh(4, 16).unwrap();
    let one = DensityField::constant(mesh.triangle_count(), 1.0, (0.1, 10.0)).unwrap();
    let four = DensityField::constant(mesh.triangle_count(), 4.0, (0.1, 10.0)).unwrap();
    let (r1, r4) = (
        estimate_optical_radius(&mesh, &one).unwrap(),
        estimate_optical_radius(&mesh, &four).unwrap(),
    );
    assert!((r4 - 2.0 * r1).abs() <= 1e-12 * r4);
    assert!((1.0..1.2).contains(&r1), "{r1}");
}
