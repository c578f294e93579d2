//! Discrete harmonic targets `K φ_α = L_α` with boundary-supported sources,
//! plus the constant function.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::fem::SparseSymMatrix;
use crate::mesh::TriMesh;

/// A source may not sum to more than this (relative to its largest entry).
const ZERO_SUM_TOLERANCE: f64 = 1e-12;

/// `L_α = e_{b_α} − e_{b_{α+1}}` for consecutive ring nodes, `α = 0..N_b−1`.
pub fn build_boundary_sources(mesh: &TriMesh) -> Vec<Vec<f64>> {
    let ring = mesh.boundary_ring();
    (0..ring.len() - 1)
        .map(|a| {
            let mut l = vec![0.0; mesh.node_count()];
            l[ring[a]] = 1.0;
            l[ring[a + 1]] = -1.0;
            l
        })
        .collect()
}

/// Solves the singular Neumann system `K φ = L` on the mean-zero subspace.
///
/// Node 0 is pinned to zero, the reduced system is factored once, and the
/// mean is removed from every solution.
pub struct HarmonicSolver {
    reduced: Cholesky<f64, Dyn>,
    stiffness: SparseSymMatrix,
}

impl HarmonicSolver {
    pub fn new(stiffness: &SparseSymMatrix) -> Result<Self> {
        let n = stiffness.dim();
        if n < 2 {
            return Err(Error::InvalidArgument("stiffness matrix too small".into()));
        }
        let full = stiffness.to_dense();
        let reduced = full.view((1, 1), (n - 1, n - 1)).into_owned();
        let reduced = Cholesky::new(reduced)
            .ok_or_else(|| Error::NotPositiveDefinite("stiffness with one node pinned".into()))?;
        Ok(HarmonicSolver {
            reduced,
            stiffness: stiffness.clone(),
        })
    }

    pub fn solve(&self, source: &[f64]) -> Result<Vec<f64>> {
        let n = self.stiffness.dim();
        if source.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "source of length {} for {n} nodes",
                source.len()
            )));
        }
        let total: f64 = source.iter().sum();
        let scale = source.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if total.abs() > ZERO_SUM_TOLERANCE * scale.max(1.0) {
            return Err(Error::Unsolvable(format!("source has nonzero total {total:e}")));
        }
        let rhs = DVector::from_column_slice(&source[1..]);
        let reduced = self.reduced.solve(&rhs);
        let mut phi = Vec::with_capacity(n);
        phi.push(0.0);
        phi.extend(reduced.iter());
        let mean = phi.iter().sum::<f64>() / n as f64;
        phi.iter_mut().for_each(|x| *x -= mean);
        Ok(phi)
    }

    /// `‖Kφ − L‖ / ‖L‖`, or `‖Kφ‖` when `L = 0`.
    pub fn residual(&self, phi: &[f64], source: &[f64]) -> f64 {
        let kphi = self.stiffness.mul_vec(phi);
        let r = kphi
            .iter()
            .zip(source)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = source.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            r / norm
        } else {
            r
        }
    }
}

pub fn solve_harmonic(stiffness: &SparseSymMatrix, source: &[f64]) -> Result<Vec<f64>> {
    HarmonicSolver::new(stiffness)?.solve(source)
}

/// Targets `φ_0 .. φ_{N_b−2}` with their sources, then the constant.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicBasis {
    pub sources: Vec<Vec<f64>>,
    /// All `N_h = N_b` targets; the last one is the constant.
    pub functions: Vec<Vec<f64>>,
    pub boundary_ring: Vec<usize>,
}

impl HarmonicBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn is_constant(&self, alpha: usize) -> bool {
        alpha == self.sources.len()
    }

    /// `φ_α` at the ring nodes, in ring order.
    pub fn boundary_values(&self, alpha: usize) -> Vec<f64> {
        self.boundary_ring.iter().map(|&b| self.functions[alpha][b]).collect()
    }

    /// `L_α` at the ring nodes; zero for the constant target.
    pub fn boundary_source(&self, alpha: usize) -> Vec<f64> {
        match self.sources.get(alpha) {
            Some(l) => self.boundary_ring.iter().map(|&b| l[b]).collect(),
            None => vec![0.0; self.boundary_ring.len()],
        }
    }

    /// Nodal values, one target per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.functions.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, self.len(), |i, a| self.functions[a][i])
    }

    /// CSV with one row per node and one column per target.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node");
        for a in 0..self.len() {
            let _ = write!(out, ",phi_{a}");
        }
        out.push('\n');
        let n = self.functions.first().map_or(0, Vec::len);
        for i in 0..n {
            let _ = write!(out, "{i}");
            for f in &self.functions {
                let _ = write!(out, ",{:.16e}", f[i]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_harmonic_basis(mesh: &TriMesh, stiffness: &SparseSymMatrix) -> Result<HarmonicBasis> {
    if stiffness.dim() != mesh.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "stiffness of size {} for {} nodes",
            stiffness.dim(),
            mesh.node_count()
        )));
    }
    let solver = HarmonicSolver::new(stiffness)?;
    let sources = build_boundary_sources(mesh);
    let mut functions = sources.iter().map(|l| solver.solve(l)).collect::<Result<Vec<_>>>()?;
    functions.push(vec![1.0; mesh.node_count()]);
    Ok(HarmonicBasis {
        sources,
        functions,
        boundary_ring: mesh.boundary_ring().to_vec(),
    })
}
