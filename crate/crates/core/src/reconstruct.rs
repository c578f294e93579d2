//! Density recovery from the Gram identity `(φ_α, M(ρ) φ_β) = c_αᵀ C c_β`,
//! which is linear in the per-triangle densities.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{ControlSolution, NormalSolver};
use crate::error::{Error, Result};
use crate::fem::{local_mass_blocks, LocalMassBlock};
use crate::forms::FormData;
use crate::harmonics::HarmonicBasis;
use crate::mesh::{DensityField, TriMesh};

/// Rows `(α, β)`, `α ≤ β`; one column per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub bounds: (f64, f64),
    /// Triangles sharing an interior edge; rows of the difference operator.
    pub adjacency: Vec<(usize, usize)>,
}

fn target_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect()
}

/// `A_{(αβ),k} = Σ_ij φ_α(i) φ_β(j) m^k_ij`.
pub fn assembly_matrix(blocks: &[LocalMassBlock], harmonics: &HarmonicBasis) -> DMatrix<f64> {
    let pairs = target_pairs(harmonics.len());
    let rows: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (fa, fb) = (&harmonics.functions[a], &harmonics.functions[b]);
            blocks.iter().map(|blk| blk.bilinear(fa, fb)).collect()
        })
        .collect();
    DMatrix::from_fn(pairs.len(), blocks.len(), |r, k| rows[r][k])
}

pub fn assemble_density_system(
    mesh: &TriMesh,
    harmonics: &HarmonicBasis,
    data: &FormData,
    controls: &[ControlSolution],
    bounds: (f64, f64),
) -> Result<ReconstructionSystem> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::Density(format!("box must satisfy 0 < min < max, got [{lo}, {hi}]")));
    }
    if harmonics.functions.iter().any(|f| f.len() != mesh.node_count()) {
        return Err(Error::DimensionMismatch("harmonic functions do not match the mesh".into()));
    }
    if controls.len() != harmonics.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} control solutions for {} targets",
            controls.len(),
            harmonics.len()
        )));
    }
    let n = data.n_controls();
    if let Some(s) = controls.iter().find(|s| s.coefficients.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "control for target {} has {} coefficients, form data has {n} controls",
            s.target,
            s.coefficients.len()
        )));
    }
    let pairs = target_pairs(harmonics.len());
    let matrix = assembly_matrix(&local_mass_blocks(mesh), harmonics);
    let coeffs: Vec<DVector<f64>> = controls
        .iter()
        .map(|s| DVector::from_column_slice(&s.coefficients))
        .collect();
    let cc: Vec<DVector<f64>> = coeffs.iter().map(|c| &data.connecting * c).collect();
    let rhs = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| coeffs[a].dot(&cc[b])));
    Ok(ReconstructionSystem {
        matrix,
        rhs,
        pairs,
        bounds,
        adjacency: mesh.interior_edge_pairs(),
    })
}

impl ReconstructionSystem {
    pub fn difference_operator(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.adjacency.len(), self.matrix.ncols());
        for (r, &(a, b)) in self.adjacency.iter().enumerate() {
            d[(r, a)] = 1.0;
            d[(r, b)] = -1.0;
        }
        d
    }

    /// `‖A‖₂² / ‖D‖₂²`, the natural unit of the regularization weight.
    pub fn lambda_unit(&self) -> f64 {
        let a = self.matrix.singular_values().max();
        let d = self.difference_operator().singular_values().max();
        if d > 0.0 {
            (a / d).powi(2)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensitySolver {
    /// Bounded-variable active-set least squares; exact finite termination.
    #[default]
    ActiveSet,
    /// Spectral projected gradient with a monotone Armijo line search.
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub solver: DensitySolver,
    /// Absolute regularization weight `λ`.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Relative objective change that ends the projected gradient.
    pub tolerance: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            solver: DensitySolver::ActiveSet,
            lambda: 0.0,
            max_iterations: 100_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub estimate: DensityField,
    /// `‖Aρ − b‖ / ‖b‖`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iterate, starting at the midpoint.
    pub objective_history: Vec<f64>,
    pub singular_values: (f64, f64),
    pub lambda: f64,
}

struct BoxProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lo: f64,
    hi: f64,
}

impl BoxProblem {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&(&self.a * x - &self.b))
    }

    fn clamp(&self, x: &mut DVector<f64>) {
        x.iter_mut().for_each(|v| *v = v.clamp(self.lo, self.hi));
    }
}

struct Solved {
    x: DVector<f64>,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

pub fn solve_density(system: &ReconstructionSystem, settings: &SolveSettings) -> Result<ReconstructionResult> {
    let (lo, hi) = system.bounds;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Density(format!("box must satisfy 0 < min < max, got [{lo}, {hi}]")));
    }
    if !(settings.lambda >= 0.0 && settings.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("λ must be nonnegative, got {}", settings.lambda)));
    }
    let k = system.matrix.ncols();
    let (a, b) = if settings.lambda > 0.0 {
        let d = system.difference_operator() * settings.lambda.sqrt();
        let mut a = DMatrix::zeros(system.matrix.nrows() + d.nrows(), k);
        a.view_mut((0, 0), system.matrix.shape()).copy_from(&system.matrix);
        a.view_mut((system.matrix.nrows(), 0), d.shape()).copy_from(&d);
        let mut b = DVector::zeros(a.nrows());
        b.rows_mut(0, system.rhs.len()).copy_from(&system.rhs);
        (a, b)
    } else {
        (system.matrix.clone(), system.rhs.clone())
    };
    let problem = BoxProblem { a, b, lo, hi };
    let solved = match settings.solver {
        DensitySolver::ActiveSet => active_set(&problem, settings.max_iterations),
        DensitySolver::ProjectedGradient => projected_gradient(&problem, settings.max_iterations, settings.tolerance),
    };

    let residual = {
        let r = (&system.matrix * &solved.x - &system.rhs).norm();
        let nb = system.rhs.norm();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    };
    let sv = system.matrix.singular_values();
    Ok(ReconstructionResult {
        estimate: DensityField::new(solved.x.iter().copied().collect(), (lo, hi))?,
        residual,
        iterations: solved.iterations,
        converged: solved.converged,
        objective_history: solved.history,
        singular_values: (sv.max(), sv.min()),
        lambda: settings.lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Bounded-variable least squares (Stark and Parker), started with every
/// variable free at the box midpoint.
fn active_set(p: &BoxProblem, max_iterations: usize) -> Solved {
    let n = p.a.ncols();
    let mid = 0.5 * (p.lo + p.hi);
    let mut x = DVector::from_element(n, mid);
    let mut state = vec![Bound::Free; n];
    let mut history = vec![p.objective(&x)];
    let mut iterations = 0;
    let mut excluded: Vec<usize> = Vec::new();
    let mut added: Option<(usize, Bound)> = None;
    let tol = 1e-12 * p.a.norm() * (p.b.norm() + p.a.norm() * p.hi);

    loop {
        // Inner loop: minimize over the free set while staying feasible.
        let mut first = true;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Solved {
                    x,
                    iterations: max_iterations,
                    converged: false,
                    history,
                };
            }
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
            if free.is_empty() {
                break;
            }
            let mut r = p.b.clone();
            for i in (0..n).filter(|&i| state[i] != Bound::Free) {
                r.axpy(-x[i], &p.a.column(i), 1.0);
            }
            let af = p.a.select_columns(free.iter());
            let z = NormalSolver::new(&af, 1e-13).expect("finite matrix").solve(&r);

            if first {
                if let Some((t, from)) = added {
                    let pos = free.iter().position(|&i| i == t).expect("added variable is free");
                    let wrong_way = match from {
                        Bound::Lower => z[pos] <= p.lo,
                        Bound::Upper => z[pos] >= p.hi,
                        Bound::Free => false,
                    };
                    if wrong_way {
                        state[t] = from;
                        excluded.push(t);
                        break;
                    }
                }
            }
            first = false;

            if z.iter().all(|&v| v >= p.lo && v <= p.hi) {
                for (pos, &i) in free.iter().enumerate() {
                    x[i] = z[pos];
                }
                excluded.clear();
                history.push(p.objective(&x));
                break;
            }
            // Move toward z until the first free variable hits a bound.
            let mut alpha = 1.0;
            let mut blocking = free[0];
            for (pos, &i) in free.iter().enumerate() {
                let step = z[pos] - x[i];
                let limit = if z[pos] < p.lo {
                    (p.lo - x[i]) / step
                } else if z[pos] > p.hi {
                    (p.hi - x[i]) / step
                } else {
                    continue;
                };
                if limit < alpha {
                    alpha = limit;
                    blocking = i;
                }
            }
            let alpha = alpha.max(0.0);
            for (pos, &i) in free.iter().enumerate() {
                x[i] += alpha * (z[pos] - x[i]);
            }
            let snap = 1e-14 * (p.hi - p.lo);
            for &i in &free {
                if i == blocking {
                    let to_lower = z[free.iter().position(|&f| f == i).unwrap()] < p.lo;
                    state[i] = if to_lower { Bound::Lower } else { Bound::Upper };
                } else if x[i] <= p.lo + snap {
                    state[i] = Bound::Lower;
                } else if x[i] >= p.hi - snap {
                    state[i] = Bound::Upper;
                }
                match state[i] {
                    Bound::Lower => x[i] = p.lo,
                    Bound::Upper => x[i] = p.hi,
                    Bound::Free => {}
                }
            }
            history.push(p.objective(&x));
        }

        // Outer loop: free the bound variable that most violates optimality.
        let w = -p.gradient(&x);
        let candidate = (0..n)
            .filter(|i| !excluded.contains(i))
            .filter_map(|i| {
                let violation = match state[i] {
                    Bound::Lower => w[i],
                    Bound::Upper => -w[i],
                    Bound::Free => return None,
                };
                (violation > tol).then_some((i, violation))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match candidate {
            None => {
                return Solved {
                    x,
                    iterations,
                    converged: true,
                    history,
                }
            }
            Some((t, _)) => {
                added = Some((t, state[t]));
                state[t] = Bound::Free;
            }
        }
    }
}

fn projected_gradient(p: &BoxProblem, max_iterations: usize, tolerance: f64) -> Solved {
    let n = p.a.ncols();
    let mut x = DVector::from_element(n, 0.5 * (p.lo + p.hi));
    let mut f = p.objective(&x);
    let mut g = p.gradient(&x);
    let mut history = vec![f];
    let mut step = 1.0 / p.a.norm_squared().max(f64::MIN_POSITIVE);

    for it in 1..=max_iterations {
        let mut trial = &x - &g * step;
        p.clamp(&mut trial);
        let d = trial - &x;
        if d.amax() == 0.0 {
            return Solved { x, iterations: it, converged: true, history };
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let (xn, fnew) = loop {
            let mut xn = &x + &d * t;
            p.clamp(&mut xn);
            let fnew = p.objective(&xn);
            if fnew <= f + 1e-4 * t * slope || t < 1e-20 {
                break (xn, fnew);
            }
            t *= 0.5;
        };
        if fnew > f {
            // line search stalled at roundoff
            return Solved { x, iterations: it, converged: true, history };
        }
        let gn = p.gradient(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 { (s.norm_squared() / sy).clamp(1e-30, 1e30) } else { 1e30 };
        let change = (f - fnew) / f.max(f64::MIN_POSITIVE);
        x = xn;
        g = gn;
        f = fnew;
        history.push(f);
        if change <= tolerance {
            return Solved { x, iterations: it, converged: true, history };
        }
    }
    Solved {
        x,
        iterations: max_iterations,
        converged: false,
        history,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorWeighting {
    /// `Σ_k area_k x_k²`.
    #[default]
    Area,
    /// Plain sum over triangles.
    Uniform,
}

/// `δ = ‖ρ_est − ρ_true‖ / ‖ρ_true‖`.
pub fn relative_error(
    estimate: &DensityField,
    truth: &DensityField,
    areas: &[f64],
    weighting: ErrorWeighting,
) -> Result<f64> {
    if estimate.len() != truth.len() || areas.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {}, truth {}, areas {}",
            estimate.len(),
            truth.len(),
            areas.len()
        )));
    }
    let weight = |k: usize| match weighting {
        ErrorWeighting::Area => areas[k],
        ErrorWeighting::Uniform => 1.0,
    };
    let (e, t) = (estimate.values(), truth.values());
    let num: f64 = (0..t.len()).map(|k| weight(k) * (e[k] - t[k]).powi(2)).sum();
    let den: f64 = (0..t.len()).map(|k| weight(k) * t[k].powi(2)).sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument("truth has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// `k, centroid_x, centroid_y, rho_est[, rho_true]`.
pub fn format_density_csv(mesh: &TriMesh, estimate: &DensityField, truth: Option<&DensityField>) -> String {
    let mut out = String::from("k,centroid_x,centroid_y,rho_est");
    if truth.is_some() {
        out.push_str(",rho_true");
    }
    out.push('\n');
    for k in 0..mesh.triangle_count() {
        let c = mesh.centroid(k);
        let _ = write!(out, "{k},{:.10},{:.10},{:.16e}", c[0], c[1], estimate.values()[k]);
        if let Some(t) = truth {
            let _ = write!(out, ",{:.16e}", t.values()[k]);
        }
        out.push('\n');
    }
    out
}
