//! P1 finite elements: mass and stiffness matrices, per-triangle mass blocks
//! and boundary load vectors.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{geometry_of, DensityField, TriMesh};

/// Symmetric sparse matrix in compressed-row form. Both triangles are
/// stored, and mirrored entries are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymMatrix {
    /// Zero matrix with the node-adjacency pattern of `mesh` (diagonal included).
    fn with_mesh_pattern(mesh: &TriMesh) -> Self {
        let n = mesh.node_count();
        let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    neighbours[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut row in neighbours {
            row.sort_unstable();
            row.dedup();
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        SparseSymMatrix {
            dim: n,
            row_ptr,
            cols,
            vals,
        }
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    fn add_local(&mut self, nodes: &[usize; 3], local: &[[f64; 3]; 3], scale: f64) {
        for a in 0..3 {
            for b in 0..3 {
                let s = self.slot(nodes[a], nodes[b]).expect("entry in mesh pattern");
                self.vals[s] += scale * local[a][b];
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.vals[s])
    }

    /// Stored entries as `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |s| (i, self.cols[s], self.vals[s]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for s in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[s] * x[self.cols[s]];
            }
            *yi = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn scaled(&self, c: f64) -> SparseSymMatrix {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        self.entries().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Coordinate dump: header `dim nnz`, then `i j value` per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.dim, self.nnz());
        for (i, j, v) in self.entries() {
            let _ = writeln!(out, "{i} {j} {v:.16e}");
        }
        out
    }
}

/// Unit-density P1 mass matrix of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMassBlock {
    pub triangle: usize,
    pub nodes: [usize; 3],
    pub entries: [[f64; 3]; 3],
}

impl LocalMassBlock {
    fn new(triangle: usize, nodes: [usize; 3], area: f64) -> Self {
        let d = area / 6.0;
        let o = area / 12.0;
        LocalMassBlock {
            triangle,
            nodes,
            entries: [[d, o, o], [o, d, o], [o, o, d]],
        }
    }

    /// `Σ_ij x(i) y(j) m_ij` over the triangle's nodes.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..3 {
            let xa = x[self.nodes[a]];
            for b in 0..3 {
                acc += xa * y[self.nodes[b]] * self.entries[a][b];
            }
        }
        acc
    }
}

pub fn local_mass_blocks(mesh: &TriMesh) -> Vec<LocalMassBlock> {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(k, tri)| LocalMassBlock::new(k, *tri, geometry_of(mesh.nodes(), tri).area))
        .collect()
}

/// `M(ρ) = Σ_k ρ_k · scatter(m^k)`.
pub fn assemble_mass(mesh: &TriMesh, density: &DensityField) -> Result<SparseSymMatrix> {
    assemble_mass_from_blocks(mesh, &local_mass_blocks(mesh), density.values())
}

/// Mass matrix for raw per-triangle weights; the summation order matches
/// [`assemble_mass`] exactly.
pub fn assemble_mass_from_blocks(
    mesh: &TriMesh,
    blocks: &[LocalMassBlock],
    rho: &[f64],
) -> Result<SparseSymMatrix> {
    if rho.len() != mesh.triangle_count() || blocks.len() != mesh.triangle_count() {
        return Err(Error::DimensionMismatch(format!(
            "{} densities and {} blocks for {} triangles",
            rho.len(),
            blocks.len(),
            mesh.triangle_count()
        )));
    }
    if let Some((k, r)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(Error::Density(format!("nonpositive density {r} on triangle {k}")));
    }
    let mut m = SparseSymMatrix::with_mesh_pattern(mesh);
    for (block, &r) in blocks.iter().zip(rho) {
        m.add_local(&block.nodes, &block.entries, r);
    }
    Ok(m)
}

pub fn local_stiffness(mesh: &TriMesh, k: usize) -> [[f64; 3]; 3] {
    let g = geometry_of(mesh.nodes(), &mesh.triangles()[k]);
    let mut ke = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let v = g.area
                * (g.gradients[a][0] * g.gradients[b][0] + g.gradients[a][1] * g.gradients[b][1]);
            ke[a][b] = v;
            ke[b][a] = v;
        }
    }
    ke
}

/// `K_ij = ∫ ∇ψ_i · ∇ψ_j`. Independent of the density.
pub fn assemble_stiffness(mesh: &TriMesh) -> SparseSymMatrix {
    let mut k = SparseSymMatrix::with_mesh_pattern(mesh);
    for (idx, tri) in mesh.triangles().iter().enumerate() {
        k.add_local(tri, &local_stiffness(mesh, idx), 1.0);
    }
    k
}

/// Nodal load `G_i = a ∫_Γ ψ_i q dΓ` for a boundary profile `q` given at the
/// ring nodes (piecewise linear along ring edges). Interior entries are zero.
pub fn boundary_load(mesh: &TriMesh, profile: &[f64], amplitude: f64) -> Result<Vec<f64>> {
    let ring = mesh.boundary_ring();
    if profile.len() != ring.len() {
        return Err(Error::DimensionMismatch(format!(
            "profile has {} values, boundary ring has {}",
            profile.len(),
            ring.len()
        )));
    }
    let mut g = vec![0.0; mesh.node_count()];
    let nb = ring.len();
    for a in 0..nb {
        let b = (a + 1) % nb;
        let (pa, pb) = (mesh.nodes()[ring[a]], mesh.nodes()[ring[b]]);
        let len = (pa[0] - pb[0]).hypot(pa[1] - pb[1]);
        g[ring[a]] += amplitude * len / 6.0 * (2.0 * profile[a] + profile[b]);
        g[ring[b]] += amplitude * len / 6.0 * (2.0 * profile[b] + profile[a]);
    }
    Ok(g)
}

/// Load of the boundary hat `q_α` (value 1 at ring position `alpha`), unit amplitude.
pub fn hat_load(mesh: &TriMesh, alpha: usize) -> Vec<f64> {
    let mut q = vec![0.0; mesh.boundary_count()];
    q[alpha] = 1.0;
    boundary_load(mesh, &q, 1.0).expect("profile sized to ring")
}
