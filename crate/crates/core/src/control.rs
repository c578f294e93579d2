//! Boundary control synthesis: coefficients `c_α` such that the terminal wave
//! `Σ_j c_j U^{f_j}(T)` approximates the harmonic target `φ_α`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forms::FormData;
use crate::harmonics::HarmonicBasis;
use crate::mesh::Lines;

pub const DEFAULT_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSettings {
    /// Relative singular value cutoff of the normal solution.
    pub cutoff: f64,
    /// Weight of the terminal-value block against the potential block.
    pub block_weight: f64,
    /// Largest acceptable boundary residual.
    pub residual_ceiling: Option<f64>,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            cutoff: DEFAULT_CUTOFF,
            block_weight: 1.0,
            residual_ceiling: None,
        }
    }
}

/// Stacked least-squares system `[P/s₁; w·B/s₂] c = [Bᵀ L_α / s₁; w·φ_α|Γ / s₂]`,
/// each block scaled so its largest row norm is one.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    let r = m.row_iter().map(|row| row.norm()).fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn check_sizes(data: &FormData, basis: &HarmonicBasis) -> Result<()> {
    let n = data.n_controls();
    if data.potential.shape() != (n, n) || data.terminal.ncols() != n {
        return Err(Error::DimensionMismatch("form data matrices disagree in size".into()));
    }
    if data.terminal.nrows() != basis.boundary_ring.len() {
        return Err(Error::DimensionMismatch(format!(
            "form data has {} boundary rows, harmonic basis has {} ring nodes",
            data.terminal.nrows(),
            basis.boundary_ring.len()
        )));
    }
    Ok(())
}

fn check_target(basis: &HarmonicBasis, alpha: usize) -> Result<()> {
    if alpha >= basis.len() {
        return Err(Error::InvalidArgument(format!(
            "target {alpha} out of range ({} targets)",
            basis.len()
        )));
    }
    Ok(())
}

pub fn assemble_control_system(
    data: &FormData,
    basis: &HarmonicBasis,
    alpha: usize,
    block_weight: f64,
) -> Result<ControlSystem> {
    check_sizes(data, basis)?;
    check_target(basis, alpha)?;
    let (matrix, s1, s2) = stacked_matrix(data, block_weight);
    Ok(ControlSystem {
        matrix,
        rhs: stacked_rhs(data, basis, alpha, block_weight, s1, s2),
    })
}

fn stacked_matrix(data: &FormData, w: f64) -> (DMatrix<f64>, f64, f64) {
    let n = data.n_controls();
    let nb = data.terminal.nrows();
    let s1 = max_row_norm(&data.potential);
    let s2 = max_row_norm(&data.terminal);
    let mut a = DMatrix::zeros(n + nb, n);
    a.view_mut((0, 0), (n, n)).copy_from(&(&data.potential / s1));
    a.view_mut((n, 0), (nb, n)).copy_from(&(&data.terminal * (w / s2)));
    (a, s1, s2)
}

fn stacked_rhs(data: &FormData, basis: &HarmonicBasis, alpha: usize, w: f64, s1: f64, s2: f64) -> DVector<f64> {
    let n = data.n_controls();
    let nb = data.terminal.nrows();
    let l = DVector::from_vec(basis.boundary_source(alpha));
    let phi = DVector::from_vec(basis.boundary_values(alpha));
    let top = data.terminal.tr_mul(&l) / s1;
    let mut b = DVector::zeros(n + nb);
    b.rows_mut(0, n).copy_from(&top);
    b.rows_mut(n, nb).copy_from(&(phi * (w / s2)));
    b
}

/// Truncated-SVD pseudoinverse, factored once and applied to many right-hand sides.
pub struct NormalSolver {
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    threshold: f64,
    rank: usize,
    cols: usize,
}

impl NormalSolver {
    pub fn new(a: &DMatrix<f64>, cutoff: f64) -> Result<Self> {
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        if !(cutoff >= 0.0) {
            return Err(Error::InvalidArgument(format!("cutoff must be nonnegative, got {cutoff}")));
        }
        let svd = SVD::new(a.clone(), true, true);
        let smax = svd.singular_values.max();
        let threshold = cutoff * smax;
        let rank = svd.singular_values.iter().filter(|s| **s > threshold && **s > 0.0).count();
        Ok(NormalSolver {
            svd,
            threshold,
            rank,
            cols: a.ncols(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.singular_values
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let u = self.svd.u.as_ref().expect("computed with U");
        let vt = self.svd.v_t.as_ref().expect("computed with Vᵀ");
        let mut c = DVector::zeros(self.cols);
        for (k, &s) in self.svd.singular_values.iter().enumerate() {
            if s > self.threshold && s > 0.0 {
                let coeff = u.column(k).dot(b) / s;
                c.axpy(coeff, &vt.row(k).transpose(), 1.0);
            }
        }
        c
    }
}

/// Minimum-norm least-squares solution with relative truncation at `cutoff`.
pub fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>, cutoff: f64) -> Result<(DVector<f64>, usize)> {
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {} rows",
            b.len(),
            a.nrows()
        )));
    }
    let solver = NormalSolver::new(a, cutoff)?;
    Ok((solver.solve(b), solver.rank()))
}

/// `‖Σ_j c_j B_j − φ_α|Γ‖ / ‖φ_α|Γ‖`.
pub fn control_residual(c: &[f64], data: &FormData, basis: &HarmonicBasis, alpha: usize) -> Result<f64> {
    check_sizes(data, basis)?;
    check_target(basis, alpha)?;
    let phi = DVector::from_vec(basis.boundary_values(alpha));
    let denom = phi.norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument(format!("target {alpha} vanishes on the boundary")));
    }
    let bc = &data.terminal * DVector::from_column_slice(c);
    Ok((bc - phi).norm() / denom)
}

/// `Φ(c) = cᵀPc − 2 Σ_j c_j (B_j, L_α) + (φ_α, L_α)`, the potential-energy
/// distance between the steered wave and the target.
pub fn phi_diagnostic(c: &[f64], data: &FormData, basis: &HarmonicBasis, alpha: usize) -> Result<f64> {
    check_sizes(data, basis)?;
    check_target(basis, alpha)?;
    let c = DVector::from_column_slice(c);
    let l = DVector::from_vec(basis.boundary_source(alpha));
    let phi = DVector::from_vec(basis.boundary_values(alpha));
    let pc = &data.potential * &c;
    let bl = data.terminal.tr_mul(&l);
    Ok(c.dot(&pc) - 2.0 * c.dot(&bl) + phi.dot(&l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub target: usize,
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub phi: f64,
    pub rank: usize,
}

impl ControlSolution {
    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub solutions: Vec<ControlSolution>,
    /// Targets whose residual exceeds the configured ceiling.
    pub breaches: Vec<usize>,
}

impl ControlOutcome {
    pub fn max_residual(&self) -> f64 {
        self.solutions.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

/// One SVD of the stacked matrix serves every target.
pub fn solve_all_controls(data: &FormData, basis: &HarmonicBasis, settings: &ControlSettings) -> Result<ControlOutcome> {
    check_sizes(data, basis)?;
    let (matrix, s1, s2) = stacked_matrix(data, settings.block_weight);
    let solver = NormalSolver::new(&matrix, settings.cutoff)?;
    let solutions = (0..basis.len())
        .into_par_iter()
        .map(|alpha| {
            let rhs = stacked_rhs(data, basis, alpha, settings.block_weight, s1, s2);
            let c: Vec<f64> = solver.solve(&rhs).iter().copied().collect();
            Ok(ControlSolution {
                target: alpha,
                residual: control_residual(&c, data, basis, alpha)?,
                phi: phi_diagnostic(&c, data, basis, alpha)?,
                rank: solver.rank(),
                coefficients: c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let breaches = match settings.residual_ceiling {
        Some(ceiling) => solutions
            .iter()
            .filter(|s| !(s.residual <= ceiling))
            .map(|s| s.target)
            .collect(),
        None => Vec::new(),
    };
    Ok(ControlOutcome { solutions, breaches })
}

/// CSV report: one row per target.
pub fn format_control_report(outcome: &ControlOutcome) -> String {
    let mut out = String::from("target,residual,phi,rank,norm\n");
    for s in &outcome.solutions {
        let _ = writeln!(out, "{},{:.6e},{:.6e},{},{:.6e}", s.target, s.residual, s.phi, s.rank, s.norm());
    }
    out
}

/// Coefficient dump: `bccontrols 1`, `targets N_h controls N`, then per target
/// a line `target residual phi rank` followed by one line of coefficients.
pub fn format_controls(outcome: &ControlOutcome) -> String {
    let mut out = String::from("bccontrols 1\n");
    let n = outcome.solutions.first().map_or(0, |s| s.coefficients.len());
    let _ = writeln!(out, "targets {} controls {n}", outcome.solutions.len());
    for s in &outcome.solutions {
        let _ = writeln!(out, "{} {:.16e} {:.16e} {}", s.target, s.residual, s.phi, s.rank);
        let row: Vec<String> = s.coefficients.iter().map(|c| format!("{c:.16e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn parse_controls(text: &str, path: &Path) -> Result<Vec<ControlSolution>> {
    let mut lines = Lines::new(text, path);
    lines.expect_header("bccontrols")?;
    let (ln, l) = lines.next_line()?;
    let (targets, n) = match l.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["targets", t, "controls", n] => match (t.parse::<usize>(), n.parse::<usize>()) {
            (Ok(t), Ok(n)) => (t, n),
            _ => return Err(lines.error(ln, format!("bad counts in '{l}'"))),
        },
        _ => return Err(lines.error(ln, format!("expected 'targets <n> controls <n>', found '{l}'"))),
    };
    let mut out = Vec::with_capacity(targets);
    for _ in 0..targets {
        let (ln, l) = lines.next_line()?;
        let head: Vec<&str> = l.split_whitespace().collect();
        let parsed = match head.as_slice() {
            [t, r, p, k] => match (t.parse(), r.parse(), p.parse(), k.parse()) {
                (Ok(t), Ok(r), Ok(p), Ok(k)) => Some((t, r, p, k)),
                _ => None,
            },
            _ => None,
        };
        let (target, residual, phi, rank) =
            parsed.ok_or_else(|| lines.error(ln, format!("bad target line '{l}'")))?;
        let (ln, l) = lines.next_line()?;
        let coefficients: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.error(ln, "bad coefficient".into()))?;
        if coefficients.len() != n {
            return Err(lines.error(ln, format!("{} coefficients, expected {n}", coefficients.len())));
        }
        out.push(ControlSolution {
            target,
            coefficients,
            residual,
            phi,
            rank,
        });
    }
    lines.expect_end()?;
    Ok(out)
}
