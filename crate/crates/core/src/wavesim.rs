//! Time-domain simulation of `M U'' + K U = G(t)` with zero initial data,
//! driven by Ricker-impulse boundary controls.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{assemble_mass, assemble_stiffness, hat_load, SparseSymMatrix};
use crate::mesh::{DensityField, TriMesh};

/// Relative tolerance when checking that time ratios are integers.
const RATIO_TOLERANCE: f64 = 1e-9;

/// `r(t) = (1 − 2π²ν²(t−t0)²) exp(−π²ν²(t−t0)²)`, hard-windowed to `(0, t0 + 2/ν]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RickerWavelet {
    pub frequency: f64,
    pub delay: f64,
}

impl RickerWavelet {
    pub fn new(frequency: f64, delay: f64) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!("wavelet frequency must be positive, got {frequency}")));
        }
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::InvalidArgument(format!("wavelet delay must be nonnegative, got {delay}")));
        }
        Ok(RickerWavelet { frequency, delay })
    }

    /// Delay `1.5/ν`.
    pub fn with_default_delay(frequency: f64) -> Result<Self> {
        Self::new(frequency, 1.5 / frequency)
    }

    /// Last instant of the support.
    pub fn support_end(&self) -> f64 {
        self.delay + 2.0 / self.frequency
    }

    pub fn eval(&self, t: f64) -> f64 {
        // The window is open at 0 so that shifted samples stay exact zeros
        // before their start.
        if t <= 0.0 || t > self.support_end() {
            return 0.0;
        }
        let x = (PI * self.frequency * (t - self.delay)).powi(2);
        (1.0 - 2.0 * x) * (-x).exp()
    }
}

pub fn ricker(t: f64, wavelet: &RickerWavelet) -> f64 {
    wavelet.eval(t)
}

/// Uniform solver grid on `[0, 2T]` with `T = step · steps_to_final`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub step: f64,
    pub steps_to_final: usize,
}

impl TimeGrid {
    pub fn new(step: f64, steps_to_final: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || steps_to_final == 0 {
            return Err(Error::TimeGrid(format!(
                "need a positive step and at least one step to T (step {step}, steps {steps_to_final})"
            )));
        }
        Ok(TimeGrid { step, steps_to_final })
    }

    /// Grid from `T`, the control offset `Δt` and the solver step `δt`.
    /// Both `T/Δt` and `Δt/δt` must be integers.
    pub fn from_times(final_time: f64, offset: f64, step: f64) -> Result<(Self, usize)> {
        let n_shifts = integer_ratio(final_time, offset, "T/Δt")?;
        let substeps = integer_ratio(offset, step, "Δt/δt")?;
        Ok((TimeGrid::new(step, n_shifts * substeps)?, n_shifts))
    }

    pub fn final_time(&self) -> f64 {
        self.step * self.steps_to_final as f64
    }

    /// Samples on `[0, 2T]`, both ends included.
    pub fn n_samples(&self) -> usize {
        2 * self.steps_to_final + 1
    }

    pub fn time(&self, n: usize) -> f64 {
        self.step * n as f64
    }
}

pub fn integer_ratio(numerator: f64, denominator: f64, what: &str) -> Result<usize> {
    if !(numerator > 0.0 && denominator > 0.0 && numerator.is_finite() && denominator.is_finite()) {
        return Err(Error::TimeGrid(format!("{what}: both times must be positive")));
    }
    let ratio = numerator / denominator;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > RATIO_TOLERANCE * ratio {
        return Err(Error::TimeGrid(format!("{what} = {ratio} is not a positive integer")));
    }
    Ok(rounded as usize)
}

/// The controls `f_i(x, t) = r(t − s_j) q_α(x)`, shift `s_j = j·Δt`
/// for `j = 0..n_shifts`, flat index `i = j·n_profiles + α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBasis {
    wavelet: RickerWavelet,
    grid: TimeGrid,
    n_shifts: usize,
    shift_steps: usize,
    /// Load of each boundary hat, restricted to the ring (ring order).
    profile_loads: Vec<Vec<f64>>,
}

impl ControlBasis {
    pub fn new(mesh: &TriMesh, wavelet: RickerWavelet, grid: TimeGrid, n_shifts: usize) -> Result<Self> {
        if n_shifts == 0 || grid.steps_to_final % n_shifts != 0 {
            return Err(Error::TimeGrid(format!(
                "{} solver steps to T are not divisible into {n_shifts} shifts",
                grid.steps_to_final
            )));
        }
        let ring = mesh.boundary_ring();
        let profile_loads = (0..ring.len())
            .map(|alpha| {
                let g = hat_load(mesh, alpha);
                ring.iter().map(|&b| g[b]).collect()
            })
            .collect();
        Ok(ControlBasis {
            wavelet,
            grid,
            n_shifts,
            shift_steps: grid.steps_to_final / n_shifts,
            profile_loads,
        })
    }

    pub fn wavelet(&self) -> &RickerWavelet {
        &self.wavelet
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_profiles(&self) -> usize {
        self.profile_loads.len()
    }

    pub fn n_shifts(&self) -> usize {
        self.n_shifts
    }

    pub fn shift_steps(&self) -> usize {
        self.shift_steps
    }

    pub fn offset(&self) -> f64 {
        self.grid.step * self.shift_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_profiles() * self.n_shifts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `i ↦ (j, α)`.
    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.n_profiles(), i % self.n_profiles())
    }

    pub fn index(&self, shift: usize, profile: usize) -> usize {
        shift * self.n_profiles() + profile
    }

    /// Ring-restricted load vector of boundary hat `α` (unit amplitude).
    pub fn profile_load(&self, alpha: usize) -> &[f64] {
        &self.profile_loads[alpha]
    }

    /// Time amplitude of control `i` at solver sample `n`.
    pub fn amplitude(&self, i: usize, n: usize) -> f64 {
        let start = self.split(i).0 * self.shift_steps;
        if n < start {
            0.0
        } else {
            self.wavelet.eval(self.grid.time(n - start))
        }
    }

    /// Amplitude samples of control `i` over `[0, 2T]`.
    pub fn signal(&self, i: usize) -> Vec<f64> {
        (0..self.grid.n_samples()).map(|n| self.amplitude(i, n)).collect()
    }
}

/// Terminal full-field state `(U(T), U_t(T))`, kept only in oracle mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalState {
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Boundary values of one control's wave on the solver grid over `[0, 2T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub control: usize,
    pub step: f64,
    n_boundary: usize,
    samples: Vec<f64>,
    pub terminal: Option<TerminalState>,
}

impl BoundaryTrace {
    /// `samples` is row-major, one row of `n_boundary` values per time sample.
    pub fn new(control: usize, step: f64, n_boundary: usize, samples: Vec<f64>) -> Result<Self> {
        if n_boundary == 0 || samples.len() % n_boundary != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} samples do not form rows of {n_boundary}",
                samples.len()
            )));
        }
        Ok(BoundaryTrace {
            control,
            step,
            n_boundary,
            samples,
            terminal: None,
        })
    }

    pub fn n_boundary(&self) -> usize {
        self.n_boundary
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.n_boundary
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.samples[n * self.n_boundary..(n + 1) * self.n_boundary]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Time series of `q · u(t)` for a ring-restricted weight vector `q`.
    pub fn project(&self, q: &[f64]) -> Vec<f64> {
        let support: Vec<(usize, f64)> = q
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(b, w)| (b, *w))
            .collect();
        (0..self.n_samples())
            .map(|n| {
                let row = self.row(n);
                support.iter().map(|&(b, w)| w * row[b]).sum()
            })
            .collect()
    }

    /// This trace delayed by `shift` samples, zero-padded in front and cut to
    /// length, relabeled as `control`. Exact for zero initial data.
    pub fn delayed(&self, control: usize, shift: usize) -> BoundaryTrace {
        let nb = self.n_boundary;
        let mut samples = vec![0.0; self.samples.len()];
        let shift = shift.min(self.n_samples());
        let keep = self.samples.len() - shift * nb;
        samples[shift * nb..].copy_from_slice(&self.samples[..keep]);
        BoundaryTrace {
            control,
            step: self.step,
            n_boundary: nb,
            samples,
            terminal: None,
        }
    }
}

/// What [`WaveSolver::simulate`] keeps besides boundary values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Boundary,
    /// Full `(U, U_t)` at the listed step indices.
    Snapshots(Vec<usize>),
    Full,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub boundary: Vec<f64>,
    pub snapshots: BTreeMap<usize, TerminalState>,
    /// `½ U_tᵀ M U_t + ½ Uᵀ K U` at every step.
    pub energy: Vec<f64>,
}

/// Newmark average-acceleration integrator with one factorization of
/// `M + δt²/4 K`, shared by every simulation run on it.
pub struct WaveSolver {
    mass: SparseSymMatrix,
    stiffness: SparseSymMatrix,
    step: f64,
    factor: Cholesky<f64, Dyn>,
    mass_factor: Cholesky<f64, Dyn>,
    ring: Vec<usize>,
}

impl WaveSolver {
    pub fn new(mesh: &TriMesh, mass: SparseSymMatrix, stiffness: SparseSymMatrix, step: f64) -> Result<Self> {
        let n = mesh.node_count();
        if mass.dim() != n || stiffness.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrices of size {} and {} for {n} nodes",
                mass.dim(),
                stiffness.dim()
            )));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::TimeGrid(format!("solver step must be positive, got {step}")));
        }
        let m = mass.to_dense();
        let system = &m + stiffness.to_dense() * (step * step / 4.0);
        let factor = Cholesky::new(system)
            .ok_or_else(|| Error::NotPositiveDefinite("M + δt²/4 K".into()))?;
        let mass_factor = Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite("M".into()))?;
        Ok(WaveSolver {
            mass,
            stiffness,
            step,
            factor,
            mass_factor,
            ring: mesh.boundary_ring().to_vec(),
        })
    }

    pub fn for_density(mesh: &TriMesh, density: &DensityField, step: f64) -> Result<Self> {
        Self::new(mesh, assemble_mass(mesh, density)?, assemble_stiffness(mesh), step)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn mass(&self) -> &SparseSymMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseSymMatrix {
        &self.stiffness
    }

    /// Integrates `n_steps` steps from rest. `load(n, g)` writes the nodal
    /// load at sample `n` into a zeroed buffer.
    pub fn simulate(&self, load: &dyn Fn(usize, &mut [f64]), n_steps: usize, record: &Record) -> Simulation {
        let n = self.mass.dim();
        let nb = self.ring.len();
        let h = self.step;
        let c = h * h / 4.0;

        let mut u = DVector::<f64>::zeros(n);
        let mut v = DVector::<f64>::zeros(n);
        let mut g = vec![0.0; n];
        load(0, &mut g);
        let mut a = if g.iter().any(|x| *x != 0.0) {
            self.mass_factor.solve(&DVector::from_column_slice(&g))
        } else {
            DVector::zeros(n)
        };

        let mut boundary = Vec::with_capacity((n_steps + 1) * nb);
        let mut snapshots = BTreeMap::new();
        let mut energy = Vec::with_capacity(n_steps + 1);
        let mut ku = vec![0.0; n];
        let mut rhs = DVector::<f64>::zeros(n);

        let mut keep = |step: usize, u: &DVector<f64>, v: &DVector<f64>| {
            let wanted = match record {
                Record::Boundary => false,
                Record::Snapshots(steps) => steps.contains(&step),
                Record::Full => true,
            };
            if wanted {
                snapshots.insert(
                    step,
                    TerminalState {
                        displacement: u.as_slice().to_vec(),
                        velocity: v.as_slice().to_vec(),
                    },
                );
            }
        };

        boundary.extend(self.ring.iter().map(|&b| u[b]));
        energy.push(0.0);
        keep(0, &u, &v);

        for step in 1..=n_steps {
            let pred = &u + &v * h + &a * c;
            g.iter_mut().for_each(|x| *x = 0.0);
            load(step, &mut g);
            self.stiffness.mul_vec_into(pred.as_slice(), &mut ku);
            for i in 0..n {
                rhs[i] = g[i] - ku[i];
            }
            self.factor.solve_mut(&mut rhs);
            let a_new = rhs.clone();
            v += (&a + &a_new) * (h / 2.0);
            u = pred + &a_new * c;
            a = a_new;

            boundary.extend(self.ring.iter().map(|&b| u[b]));
            energy.push(self.energy(u.as_slice(), v.as_slice()));
            keep(step, &u, &v);
        }

        Simulation {
            boundary,
            snapshots,
            energy,
        }
    }

    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        0.5 * self.mass.bilinear(v, v) + 0.5 * self.stiffness.bilinear(u, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// Simulate one control per profile and time-shift it.
    #[default]
    Shift,
    /// Simulate every control separately.
    Direct,
}

/// Boundary traces of every control in `basis`, in flat index order. With
/// `oracle` set each trace also carries its terminal state at `T`.
///
/// The caller is responsible for checking `T` against the optical radius.
pub fn generate_all_traces(
    solver: &WaveSolver,
    basis: &ControlBasis,
    mode: TraceMode,
    oracle: bool,
) -> Result<Vec<BoundaryTrace>> {
    let grid = basis.grid();
    if (solver.step() - grid.step).abs() > RATIO_TOLERANCE * grid.step {
        return Err(Error::TimeGrid(format!(
            "solver step {} differs from the basis grid step {}",
            solver.step(),
            grid.step
        )));
    }
    if basis.n_profiles() != solver.ring.len() {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} profiles, mesh ring has {} nodes",
            basis.n_profiles(),
            solver.ring.len()
        )));
    }
    let n_steps = 2 * grid.steps_to_final;
    let nb = basis.n_profiles();
    let final_step = grid.steps_to_final;

    let run = |i: usize| -> Result<(Vec<f64>, BTreeMap<usize, TerminalState>)> {
        let (_, alpha) = basis.split(i);
        let ring_load = basis.profile_load(alpha);
        let ring = &solver.ring;
        let load = |n: usize, g: &mut [f64]| {
            let a = basis.amplitude(i, n);
            if a != 0.0 {
                for (&node, &w) in ring.iter().zip(ring_load) {
                    g[node] = a * w;
                }
            }
        };
        let record = if !oracle {
            Record::Boundary
        } else if mode == TraceMode::Shift {
            // Terminal state of shift j is the base state at T − j·Δt.
            Record::Snapshots(
                (0..basis.n_shifts())
                    .map(|j| final_step - j * basis.shift_steps())
                    .collect(),
            )
        } else {
            Record::Snapshots(vec![final_step])
        };
        let sim = solver.simulate(&load, n_steps, &record);
        Ok((sim.boundary, sim.snapshots))
    };

    match mode {
        TraceMode::Shift => {
            let bases: Vec<_> = (0..nb)
                .into_par_iter()
                .map(|alpha| run(basis.index(0, alpha)))
                .collect::<Result<_>>()?;
            let mut traces = Vec::with_capacity(basis.len());
            for i in 0..basis.len() {
                let (shift, alpha) = basis.split(i);
                let (samples, snaps) = &bases[alpha];
                let base = BoundaryTrace::new(basis.index(0, alpha), grid.step, nb, samples.clone())?;
                let offset = shift * basis.shift_steps();
                let mut trace = base.delayed(i, offset);
                if oracle {
                    trace.terminal = snaps.get(&(final_step - offset)).cloned();
                }
                traces.push(trace);
            }
            Ok(traces)
        }
        TraceMode::Direct => (0..basis.len())
            .into_par_iter()
            .map(|i| {
                let (samples, mut snaps) = run(i)?;
                let mut trace = BoundaryTrace::new(i, grid.step, nb, samples)?;
                trace.terminal = snaps.remove(&final_step);
                Ok(trace)
            })
            .collect(),
    }
}

/// Dense matrix with the terminal displacements `U^{f_i}(T)` as columns.
/// Oracle use only.
pub fn terminal_matrix(traces: &[BoundaryTrace]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = traces
        .first()
        .and_then(|t| t.terminal.as_ref())
        .ok_or(Error::MissingTrace(0))?;
    let n = first.displacement.len();
    let mut u = DMatrix::zeros(n, traces.len());
    let mut v = DMatrix::zeros(n, traces.len());
    for (col, trace) in traces.iter().enumerate() {
        let state = trace.terminal.as_ref().ok_or(Error::MissingTrace(trace.control))?;
        u.set_column(col, &DVector::from_column_slice(&state.displacement));
        v.set_column(col, &DVector::from_column_slice(&state.velocity));
    }
    Ok((u, v))
}
