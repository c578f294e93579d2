//! Inverse-problem data from boundary measurements: the connecting form `C`,
//! the potential form `P`, the kinetic form and the terminal boundary values `B`.
//!
//! Every quantity here is computed from control signals, boundary load
//! profiles and boundary traces. Terminal snapshots carried by oracle-mode
//! traces are read only by [`oracle_errors`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::SparseSymMatrix;
use crate::mesh::Lines;
use crate::wavesim::{terminal_matrix, BoundaryTrace, ControlBasis};

/// Time quadrature used for the boundary integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Midpoint averages and summation by parts matched to the Newmark
    /// scheme; reproduces the interior inner products to roundoff.
    #[default]
    Compatible,
    /// Trapezoid rule with centered differences; second order in the step.
    Trapezoid,
}

impl Quadrature {
    pub fn name(self) -> &'static str {
        match self {
            Quadrature::Compatible => "compatible",
            Quadrature::Trapezoid => "trapezoid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "compatible" => Some(Quadrature::Compatible),
            "trapezoid" => Some(Quadrature::Trapezoid),
            _ => None,
        }
    }
}

/// Cumulative trapezoid integral, `I(0) = 0`.
pub fn time_primitive(samples: &[f64], step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    for (n, v) in samples.iter().enumerate() {
        if n > 0 {
            acc += 0.5 * step * (samples[n - 1] + v);
        }
        out.push(acc);
    }
    out
}

fn check_symmetric_grid(len: usize, steps_to_final: usize) -> Result<()> {
    if len != 2 * steps_to_final + 1 {
        return Err(Error::TimeGrid(format!(
            "{len} samples are not symmetric about T = sample {steps_to_final}"
        )));
    }
    Ok(())
}

/// `(u(t) + u(2T − t))/2` on `[0, T]`.
pub fn plus_part(samples: &[f64], steps_to_final: usize) -> Result<Vec<f64>> {
    check_symmetric_grid(samples.len(), steps_to_final)?;
    let last = 2 * steps_to_final;
    Ok((0..=steps_to_final)
        .map(|n| 0.5 * (samples[n] + samples[last - n]))
        .collect())
}

/// `(u(t) − u(2T − t))/2` on `[0, T]`.
pub fn minus_part(samples: &[f64], steps_to_final: usize) -> Result<Vec<f64>> {
    check_symmetric_grid(samples.len(), steps_to_final)?;
    let last = 2 * steps_to_final;
    Ok((0..=steps_to_final)
        .map(|n| 0.5 * (samples[n] - samples[last - n]))
        .collect())
}

/// Centered differences, one-sided second order at both ends.
pub fn time_derivative(samples: &[f64], step: f64) -> Vec<f64> {
    let n = samples.len();
    assert!(n >= 3, "need at least three samples to differentiate");
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        d[k] = (samples[k + 1] - samples[k - 1]) / (2.0 * step);
    }
    d[0] = (-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * step);
    d[n - 1] = (3.0 * samples[n - 1] - 4.0 * samples[n - 2] + samples[n - 3]) / (2.0 * step);
    d
}

fn trapezoid_weights(n_intervals: usize, step: f64) -> Vec<f64> {
    let mut w = vec![step; n_intervals + 1];
    w[0] = 0.5 * step;
    w[n_intervals] = 0.5 * step;
    w
}

fn midpoints(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn increments(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

/// Everything the boundary quadratures read: per control its time signal,
/// its load profile and its boundary trace.
///
/// The load of control `i` is `G_i(t) = signal_i(t) · profile_loads[profile_i]`
/// on the boundary ring.
pub struct FormInputs<'a> {
    step: f64,
    steps_to_final: usize,
    signals: Vec<Vec<f64>>,
    profiles: Vec<usize>,
    profile_loads: Vec<Vec<f64>>,
    traces: &'a [BoundaryTrace],
    /// `projections[α][j]` is the series `q_α · u_j(t)` over `[0, 2T]`.
    projections: Vec<Vec<Vec<f64>>>,
}

impl<'a> FormInputs<'a> {
    pub fn from_basis(basis: &ControlBasis, traces: &'a [BoundaryTrace]) -> Result<Self> {
        let signals = (0..basis.len()).map(|i| basis.signal(i)).collect();
        let profiles = (0..basis.len()).map(|i| basis.split(i).1).collect();
        let loads = (0..basis.n_profiles())
            .map(|a| basis.profile_load(a).to_vec())
            .collect();
        Self::new(basis.grid().step, basis.grid().steps_to_final, signals, profiles, loads, traces)
    }

    pub fn new(
        step: f64,
        steps_to_final: usize,
        signals: Vec<Vec<f64>>,
        profiles: Vec<usize>,
        profile_loads: Vec<Vec<f64>>,
        traces: &'a [BoundaryTrace],
    ) -> Result<Self> {
        let n = signals.len();
        let n_samples = 2 * steps_to_final + 1;
        if steps_to_final < 2 {
            return Err(Error::TimeGrid("need at least two solver steps to T".into()));
        }
        if profiles.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} signals but {} profile indices",
                profiles.len()
            )));
        }
        let n_boundary = profile_loads.first().map_or(0, Vec::len);
        for (i, s) in signals.iter().enumerate() {
            check_symmetric_grid(s.len(), steps_to_final)
                .map_err(|e| Error::TimeGrid(format!("signal {i}: {e}")))?;
        }
        if let Some(&p) = profiles.iter().find(|&&p| p >= profile_loads.len()) {
            return Err(Error::DimensionMismatch(format!("profile {p} has no load vector")));
        }
        for i in 0..n {
            let trace = traces.get(i).ok_or(Error::MissingTrace(i))?;
            if trace.control != i {
                return Err(Error::MissingTrace(i));
            }
            if trace.n_samples() != n_samples || trace.n_boundary() != n_boundary {
                return Err(Error::DimensionMismatch(format!(
                    "trace {i} has {}×{} samples, expected {n_samples}×{n_boundary}",
                    trace.n_samples(),
                    trace.n_boundary()
                )));
            }
        }
        if traces.len() > n {
            return Err(Error::DimensionMismatch(format!(
                "{} traces for {n} controls",
                traces.len()
            )));
        }
        let projections = profile_loads
            .par_iter()
            .map(|q| traces.iter().map(|t| t.project(q)).collect())
            .collect();
        Ok(FormInputs {
            step,
            steps_to_final,
            signals,
            profiles,
            profile_loads,
            traces,
            projections,
        })
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Row `i` of one form, from per-row precomputation.
    fn row(&self, i: usize, quadrature: Quadrature) -> FormRow {
        let nt = self.steps_to_final;
        let h = self.step;
        let g = &self.signals[i][..=nt];
        let ig = time_primitive(g, h);
        let a = self.profiles[i];

        // Series of q_b · u_i(t) on [0, T], for every profile b.
        let own: Vec<&[f64]> = self
            .projections
            .iter()
            .map(|per_control| &per_control[i][..=nt])
            .collect();

        let mut row = FormRow::zeros(self.len());
        match quadrature {
            Quadrature::Compatible => {
                let ig_mid = midpoints(&ig);
                let dg = increments(g);
                let own_int_mid: Vec<Vec<f64>> = own.iter().map(|s| midpoints(&time_primitive(s, h))).collect();
                let own_inc: Vec<Vec<f64>> = own.iter().map(|s| increments(s)).collect();
                for j in 0..self.len() {
                    let b = self.profiles[j];
                    let s = &self.projections[a][j];
                    let sp = plus_part(s, nt).expect("checked grid");
                    let sm = minus_part(s, nt).expect("checked grid");
                    let gp = plus_part(&self.signals[j], nt).expect("checked grid");
                    let gm = minus_part(&self.signals[j], nt).expect("checked grid");
                    let (sp_mid, sm_mid) = (midpoints(&sp), midpoints(&sm));
                    let (gp_mid, gm_mid) = (midpoints(&gp), midpoints(&gm));

                    row.connecting[j] = h * (dot(&ig_mid, &sp_mid) - dot(&gp_mid, &own_int_mid[b]));
                    row.potential[j] = g[nt] * s[nt] - g[0] * sp[0] - dot(&dg, &sp_mid) + dot(&gp_mid, &own_inc[b]);
                    row.kinetic[j] = -(g[0] * sm[0] + dot(&dg, &sm_mid) - dot(&gm_mid, &own_inc[b]));
                }
            }
            Quadrature::Trapezoid => {
                let w = trapezoid_weights(nt, h);
                let own_int: Vec<Vec<f64>> = own.iter().map(|s| time_primitive(s, h)).collect();
                let own_der: Vec<Vec<f64>> = own.iter().map(|s| time_derivative(s, h)).collect();
                for j in 0..self.len() {
                    let b = self.profiles[j];
                    let s = &self.projections[a][j];
                    let sp = plus_part(s, nt).expect("checked grid");
                    let sm = minus_part(s, nt).expect("checked grid");
                    let gp = plus_part(&self.signals[j], nt).expect("checked grid");
                    let gm = minus_part(&self.signals[j], nt).expect("checked grid");

                    row.connecting[j] = wdot(&w, &ig, &sp) - wdot(&w, &gp, &own_int[b]);
                    row.potential[j] = wdot(&w, g, &time_derivative(&sp, h)) + wdot(&w, &gp, &own_der[b]);
                    row.kinetic[j] = wdot(&w, g, &time_derivative(&sm, h)) + wdot(&w, &gm, &own_der[b]);
                }
            }
        }
        row
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::MissingTrace(i));
        }
        Ok(())
    }

    /// Terminal boundary values `U^{f_i}(T)` on the ring.
    pub fn terminal_boundary(&self, i: usize) -> &[f64] {
        self.traces[i].row(self.steps_to_final)
    }

    pub fn profile_load(&self, alpha: usize) -> &[f64] {
        &self.profile_loads[alpha]
    }
}

struct FormRow {
    connecting: Vec<f64>,
    potential: Vec<f64>,
    kinetic: Vec<f64>,
}

impl FormRow {
    fn zeros(n: usize) -> Self {
        FormRow {
            connecting: vec![0.0; n],
            potential: vec![0.0; n],
            kinetic: vec![0.0; n],
        }
    }
}

/// `C_ij`: boundary expression for `(U^{f_i}(T), M U^{f_j}(T))`.
pub fn connecting_form(inputs: &FormInputs, i: usize, j: usize, quadrature: Quadrature) -> Result<f64> {
    inputs.check_index(i)?;
    inputs.check_index(j)?;
    Ok(inputs.row(i, quadrature).connecting[j])
}

/// `P_ij`: boundary expression for `(U^{f_i}(T), K U^{f_j}(T))`.
pub fn potential_form(inputs: &FormInputs, i: usize, j: usize, quadrature: Quadrature) -> Result<f64> {
    inputs.check_index(i)?;
    inputs.check_index(j)?;
    Ok(inputs.row(i, quadrature).potential[j])
}

/// Boundary expression for `(U_t^{f_i}(T), M U_t^{f_j}(T))`. Diagnostic only.
pub fn kinetic_form(inputs: &FormInputs, i: usize, j: usize, quadrature: Quadrature) -> Result<f64> {
    inputs.check_index(i)?;
    inputs.check_index(j)?;
    Ok(inputs.row(i, quadrature).kinetic[j])
}

/// `‖X − Xᵀ‖_F / ‖X‖_F` before symmetrization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Asymmetry {
    pub connecting: f64,
    pub potential: f64,
    pub kinetic: f64,
}

/// The complete data set handed to the inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct FormData {
    pub n_profiles: usize,
    pub n_shifts: usize,
    pub final_time: f64,
    pub step: f64,
    pub quadrature: Quadrature,
    pub connecting: DMatrix<f64>,
    pub potential: DMatrix<f64>,
    pub kinetic: DMatrix<f64>,
    /// Column `i` holds `U^{f_i}(T)` at the ring nodes.
    pub terminal: DMatrix<f64>,
    pub asymmetry: Asymmetry,
}

impl FormData {
    pub fn n_controls(&self) -> usize {
        self.connecting.nrows()
    }
}

fn relative_asymmetry(x: &DMatrix<f64>) -> f64 {
    let norm = x.norm();
    if norm == 0.0 {
        0.0
    } else {
        (x - x.transpose()).norm() / norm
    }
}

fn symmetrized(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

pub fn build_form_data(basis: &ControlBasis, traces: &[BoundaryTrace], quadrature: Quadrature) -> Result<FormData> {
    if traces.len() < basis.len() {
        let present: Vec<usize> = traces.iter().map(|t| t.control).collect();
        let missing = (0..basis.len()).find(|i| !present.contains(i)).unwrap_or(traces.len());
        return Err(Error::MissingTrace(missing));
    }
    let inputs = FormInputs::from_basis(basis, traces)?;
    let mut data = build_from_inputs(&inputs, quadrature)?;
    data.n_profiles = basis.n_profiles();
    data.n_shifts = basis.n_shifts();
    Ok(data)
}

/// As [`build_form_data`] for arbitrary signals and profiles.
pub fn build_from_inputs(inputs: &FormInputs, quadrature: Quadrature) -> Result<FormData> {
    let n = inputs.len();
    let rows: Vec<FormRow> = (0..n).into_par_iter().map(|i| inputs.row(i, quadrature)).collect();
    let mut c = DMatrix::zeros(n, n);
    let mut p = DMatrix::zeros(n, n);
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n {
            c[(i, j)] = row.connecting[j];
            p[(i, j)] = row.potential[j];
            k[(i, j)] = row.kinetic[j];
        }
    }
    let n_boundary = inputs.profile_loads.first().map_or(0, Vec::len);
    let mut terminal = DMatrix::zeros(n_boundary, n);
    for i in 0..n {
        for (r, v) in inputs.terminal_boundary(i).iter().enumerate() {
            terminal[(r, i)] = *v;
        }
    }
    let asymmetry = Asymmetry {
        connecting: relative_asymmetry(&c),
        potential: relative_asymmetry(&p),
        kinetic: relative_asymmetry(&k),
    };
    Ok(FormData {
        n_profiles: n_boundary,
        n_shifts: if n_boundary == 0 { 0 } else { n / n_boundary },
        final_time: inputs.step * inputs.steps_to_final as f64,
        step: inputs.step,
        quadrature,
        connecting: symmetrized(&c),
        potential: symmetrized(&p),
        kinetic: symmetrized(&k),
        terminal,
        asymmetry,
    })
}

fn write_coordinate(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = writeln!(out, "{i} {j} {:.16e}", m[(i, j)]);
        }
    }
}

/// Text dump: header line, sizes and times, then `C`, `P` and the kinetic
/// form as `i j value` entries and `B` as ring rows.
pub fn format_form_data(data: &FormData) -> String {
    let mut out = String::from("bcforms 1\n");
    let _ = writeln!(out, "profiles {}", data.n_profiles);
    let _ = writeln!(out, "shifts {}", data.n_shifts);
    let _ = writeln!(out, "final_time {:.16e}", data.final_time);
    let _ = writeln!(out, "step {:.16e}", data.step);
    let _ = writeln!(out, "quadrature {}", data.quadrature.name());
    let a = data.asymmetry;
    let _ = writeln!(out, "asymmetry {:.6e} {:.6e} {:.6e}", a.connecting, a.potential, a.kinetic);
    write_coordinate(&mut out, "C", &data.connecting);
    write_coordinate(&mut out, "P", &data.potential);
    write_coordinate(&mut out, "kinetic", &data.kinetic);
    let b = &data.terminal;
    let _ = writeln!(out, "B {} {}", b.nrows(), b.ncols());
    for r in 0..b.nrows() {
        let row: Vec<String> = (0..b.ncols()).map(|c| format!("{:.16e}", b[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

fn keyed<T: std::str::FromStr>(lines: &mut Lines, key: &str) -> Result<T> {
    let (ln, l) = lines.next_line()?;
    let mut it = l.split_whitespace();
    match (it.next(), it.next().map(str::parse::<T>), it.next()) {
        (Some(k), Some(Ok(v)), None) if k == key => Ok(v),
        _ => Err(lines.error(ln, format!("expected '{key} <value>', found '{l}'"))),
    }
}

fn read_shape(lines: &mut Lines, name: &str) -> Result<(usize, usize)> {
    let (ln, l) = lines.next_line()?;
    let parts: Vec<&str> = l.split_whitespace().collect();
    match parts.as_slice() {
        [k, r, c] if *k == name => match (r.parse(), c.parse()) {
            (Ok(r), Ok(c)) => Ok((r, c)),
            _ => Err(lines.error(ln, format!("bad shape in '{l}'"))),
        },
        _ => Err(lines.error(ln, format!("expected '{name} <rows> <cols>', found '{l}'"))),
    }
}

fn read_coordinate(lines: &mut Lines, name: &str) -> Result<DMatrix<f64>> {
    let (rows, cols) = read_shape(lines, name)?;
    let mut m = DMatrix::zeros(rows, cols);
    for _ in 0..rows * cols {
        let (ln, l) = lines.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [i, j, v] => match (i.parse::<usize>(), j.parse::<usize>(), v.parse::<f64>()) {
                (Ok(i), Ok(j), Ok(v)) if i < rows && j < cols => Some((i, j, v)),
                _ => None,
            },
            _ => None,
        };
        let (i, j, v) = parsed.ok_or_else(|| lines.error(ln, format!("bad {name} entry '{l}'")))?;
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn parse_form_data(text: &str, path: &Path) -> Result<FormData> {
    let mut lines = Lines::new(text, path);
    lines.expect_header("bcforms")?;
    let n_profiles = keyed(&mut lines, "profiles")?;
    let n_shifts = keyed(&mut lines, "shifts")?;
    let final_time = keyed(&mut lines, "final_time")?;
    let step = keyed(&mut lines, "step")?;
    let (ln, l) = lines.next_line()?;
    let quadrature = match l.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["quadrature", name] => Quadrature::from_name(name),
        _ => None,
    }
    .ok_or_else(|| lines.error(ln, format!("expected 'quadrature <name>', found '{l}'")))?;
    let (ln, l) = lines.next_line()?;
    let values: Vec<f64> = match l.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["asymmetry", rest @ ..] => rest.iter().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().ok(),
        _ => None,
    }
    .filter(|v: &Vec<f64>| v.len() == 3)
    .ok_or_else(|| lines.error(ln, format!("expected 'asymmetry <c> <p> <k>', found '{l}'")))?;
    let asymmetry = Asymmetry {
        connecting: values[0],
        potential: values[1],
        kinetic: values[2],
    };
    let connecting = read_coordinate(&mut lines, "C")?;
    let potential = read_coordinate(&mut lines, "P")?;
    let kinetic = read_coordinate(&mut lines, "kinetic")?;
    let (rows, cols) = read_shape(&mut lines, "B")?;
    let mut terminal = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (ln, l) = lines.next_line()?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.error(ln, "bad B row".into()))?;
        if vals.len() != cols {
            return Err(lines.error(ln, format!("B row has {} values, expected {cols}", vals.len())));
        }
        for (c, v) in vals.into_iter().enumerate() {
            terminal[(r, c)] = v;
        }
    }
    lines.expect_end()?;

    let n = n_profiles * n_shifts;
    if connecting.shape() != (n, n) || potential.shape() != (n, n) || kinetic.shape() != (n, n) || terminal.shape() != (n_profiles, n)
    {
        return Err(Error::DimensionMismatch(format!(
            "form data for {n_profiles} profiles × {n_shifts} shifts has inconsistent matrix sizes"
        )));
    }
    Ok(FormData {
        n_profiles,
        n_shifts,
        final_time,
        step,
        quadrature,
        connecting,
        potential,
        kinetic,
        terminal,
        asymmetry,
    })
}

/// Relative Frobenius distance of each form matrix from its interior Gram
/// counterpart. Oracle use only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleErrors {
    pub connecting: f64,
    pub potential: f64,
    pub kinetic: f64,
}

/// Compares `data` with `UᵀMU`, `UᵀKU` and `VᵀMV` built from the terminal
/// states carried by `traces`.
pub fn oracle_errors(
    data: &FormData,
    traces: &[BoundaryTrace],
    mass: &SparseSymMatrix,
    stiffness: &SparseSymMatrix,
) -> Result<OracleErrors> {
    let (u, v) = terminal_matrix(traces)?;
    if u.ncols() != data.n_controls() || u.nrows() != mass.dim() {
        return Err(Error::DimensionMismatch(format!(
            "terminal states are {}x{}, forms have {} controls on {} nodes",
            u.nrows(),
            u.ncols(),
            data.n_controls(),
            mass.dim()
        )));
    }
    let (m, k) = (mass.to_dense(), stiffness.to_dense());
    let rel = |a: &DMatrix<f64>, b: DMatrix<f64>| {
        let nb = b.norm();
        if nb > 0.0 {
            (a - &b).norm() / nb
        } else {
            a.norm()
        }
    };
    Ok(OracleErrors {
        connecting: rel(&data.connecting, u.transpose() * &m * &u),
        potential: rel(&data.potential, u.transpose() * &k * &u),
        kinetic: rel(&data.kinetic, v.transpose() * &m * &v),
    })
}
