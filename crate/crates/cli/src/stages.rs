//! Pipeline stages. Each reads its predecessors' dumps from the output
//! directory and writes its own; only `simulate` (and `score`, for the
//! comparison) touch the ground-truth density outside oracle mode.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bctomo_core::control::{format_control_report, format_controls, parse_controls, solve_all_controls, ControlSettings};
use bctomo_core::fem::{assemble_mass, assemble_stiffness};
use bctomo_core::forms::{build_form_data, format_form_data, oracle_errors, parse_form_data, Quadrature};
use bctomo_core::harmonics::{build_boundary_sources, build_harmonic_basis, HarmonicBasis, HarmonicSolver};
use bctomo_core::mesh::{
    estimate_optical_radius, format_density, format_mesh, generate_disk_mesh, parse_density, parse_mesh, DensityField,
    TriMesh,
};
use bctomo_core::reconstruct::{
    assemble_density_system, format_density_csv, relative_error, solve_density, ErrorWeighting, SolveSettings,
};
use bctomo_core::wavesim::{
    generate_all_traces, BoundaryTrace, ControlBasis, RickerWavelet, TerminalState, TimeGrid, TraceMode, WaveSolver,
};
use serde_json::{json, Map, Value};

use crate::artifact::Artifact;
use crate::config::{ExperimentConfig, SampleConfig, TraceModeChoice};
use crate::error::{CliError, CliResult};
use crate::workspace::Workspace;

pub const MESH: &str = "mesh.txt";
pub const DENSITY: &str = "density.txt";
pub const TRACES: &str = "traces.csv";
pub const ORACLE_STATES: &str = "oracle_states.csv";
pub const FORMS: &str = "forms.txt";
pub const HARMONICS: &str = "harmonics.csv";
pub const CONTROLS: &str = "controls.txt";
pub const CONTROL_REPORT: &str = "control_report.csv";
pub const RECONSTRUCTION: &str = "reconstruction.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    MeshGen,
    SampleGen,
    Simulate,
    Forms,
    Harmonics,
    Control,
    Reconstruct,
    Score,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::MeshGen,
        Stage::SampleGen,
        Stage::Simulate,
        Stage::Forms,
        Stage::Harmonics,
        Stage::Control,
        Stage::Reconstruct,
        Stage::Score,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MeshGen => "mesh-gen",
            Stage::SampleGen => "sample-gen",
            Stage::Simulate => "simulate",
            Stage::Forms => "forms",
            Stage::Harmonics => "harmonics",
            Stage::Control => "control",
            Stage::Reconstruct => "reconstruct",
            Stage::Score => "score",
        }
    }

    /// Stages that must work from boundary data alone.
    pub fn is_inversion(self) -> bool {
        matches!(self, Stage::Forms | Stage::Harmonics | Stage::Control | Stage::Reconstruct)
    }
}

pub fn report_file(stage: Stage) -> String {
    format!("reports/{}.json", stage.name())
}

pub struct Context {
    pub config: ExperimentConfig,
    pub config_dir: PathBuf,
    pub output_dir: PathBuf,
    pub oracle: bool,
}

impl Context {
    pub fn new(config: ExperimentConfig, config_dir: &Path, oracle_flag: bool) -> Self {
        let output_dir = config_dir.join(&config.output_dir);
        let oracle = oracle_flag || config.oracle_mode;
        Context {
            config,
            config_dir: config_dir.to_path_buf(),
            output_dir,
            oracle,
        }
    }

    pub fn load(config_path: &Path, oracle_flag: bool) -> CliResult<Self> {
        let config = ExperimentConfig::load(config_path)?;
        let dir = config_path.parent().unwrap_or(Path::new("."));
        Ok(Context::new(config, dir, oracle_flag))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub report: Value,
    /// Configured ceilings that were not met.
    pub breaches: Vec<String>,
}

impl StageOutcome {
    fn clean(report: Value) -> Self {
        StageOutcome { report, breaches: Vec::new() }
    }
}

pub fn run_stage(ctx: &Context, stage: Stage) -> CliResult<StageOutcome> {
    let inner = || -> CliResult<StageOutcome> {
        let ws = Workspace::open(&ctx.output_dir, stage.name())?;
        let outcome = match stage {
            Stage::MeshGen => mesh_gen(ctx, &ws),
            Stage::SampleGen => sample_gen(ctx, &ws),
            Stage::Simulate => simulate(ctx, &ws),
            Stage::Forms => forms(ctx, &ws),
            Stage::Harmonics => harmonics(&ws),
            Stage::Control => control(ctx, &ws),
            Stage::Reconstruct => reconstruct(ctx, &ws),
            Stage::Score => score(ctx, &ws),
        }?;
        let text = serde_json::to_string_pretty(&outcome.report)? + "\n";
        ws.write(&report_file(stage), &text)?;
        Ok(outcome)
    };
    inner().map_err(|e| CliError::Stage {
        stage: stage.name(),
        source: Box::new(e),
    })
}

fn load_mesh(ws: &Workspace) -> CliResult<(TriMesh, Artifact)> {
    let art = ws.read_artifact(MESH, "mesh", "mesh-gen")?;
    let (mesh, _) = parse_mesh(&art.render(), Path::new(MESH), false)?;
    Ok((mesh, art))
}

/// Ground truth; read by `simulate`, `score` and oracle diagnostics only.
fn load_truth(ws: &Workspace, mesh_art: &Artifact, bounds: (f64, f64)) -> CliResult<(DensityField, String)> {
    let art = ws.read_artifact(DENSITY, "density", "sample-gen")?;
    ws.check_input(&art, DENSITY, "mesh", &mesh_art.hash, "sample-gen")?;
    Ok((parse_density(&art.render(), Path::new(DENSITY), Some(bounds))?, art.hash))
}

fn mesh_gen(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let m = &ctx.config.mesh;
    let mesh = generate_disk_mesh(m.n_rings, m.n_boundary)?;
    let art = Artifact::new("mesh", format_mesh(&mesh))
        .with_meta("n_rings", m.n_rings)
        .with_meta("n_boundary", m.n_boundary);
    ws.write_artifact(MESH, &art)?;
    Ok(StageOutcome::clean(json!({
        "nodes": mesh.node_count(),
        "triangles": mesh.triangle_count(),
        "boundary_nodes": mesh.boundary_count(),
        "area": mesh.total_area(),
        "hash": art.hash,
    })))
}

fn sample_gen(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let (mesh, mesh_art) = load_mesh(ws)?;
    let bounds = ctx.config.bounds();
    let (density, name) = match ctx.config.sample.generator(ctx.config.seed)? {
        Some(sample) => (sample.rasterize(&mesh, bounds)?, sample.name().to_string()),
        None => {
            let SampleConfig::File { path } = &ctx.config.sample else { unreachable!() };
            let full = ctx.config_dir.join(path);
            let text = ws.read_external(&full)?;
            let density = parse_density(&text, &full, Some(bounds))?;
            if density.len() != mesh.triangle_count() {
                return Err(CliError::Config(format!(
                    "{} has {} values, the mesh has {} triangles",
                    full.display(),
                    density.len(),
                    mesh.triangle_count()
                )));
            }
            (density, "file".to_string())
        }
    };
    let art = Artifact::new("density", format_density(&density))
        .with_input("mesh", &mesh_art.hash)
        .with_meta("sample", &name);
    ws.write_artifact(DENSITY, &art)?;
    let v = density.values();
    Ok(StageOutcome::clean(json!({
        "sample": name,
        "min": v.iter().copied().fold(f64::INFINITY, f64::min),
        "max": v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "area_mean": v.iter().zip(mesh.areas()).map(|(r, a)| r * a).sum::<f64>() / mesh.total_area(),
    })))
}

fn wavelet(config: &ExperimentConfig) -> CliResult<RickerWavelet> {
    let w = &config.wavelet;
    Ok(match w.delay {
        Some(d) => RickerWavelet::new(w.frequency, d)?,
        None => RickerWavelet::with_default_delay(w.frequency)?,
    })
}

fn format_traces(traces: &[&BoundaryTrace]) -> String {
    let nb = traces.first().map_or(0, |t| t.n_boundary());
    let mut out = String::from("control,n");
    for b in 0..nb {
        let _ = write!(out, ",u{b}");
    }
    out.push('\n');
    for t in traces {
        for n in 0..t.n_samples() {
            let _ = write!(out, "{},{n}", t.control);
            for v in t.row(n) {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
    }
    out
}

fn parse_numbers(line: &str, file: &str, lineno: usize) -> CliResult<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| CliError::artifact(file, format!("line {lineno}: bad number '{f}'")))
        })
        .collect()
}

fn parse_traces(body: &str, n_boundary: usize, n_samples: usize, step: f64) -> CliResult<Vec<BoundaryTrace>> {
    let mut lines = body.lines().enumerate().skip(1);
    let mut traces = Vec::new();
    loop {
        let mut samples = Vec::with_capacity(n_samples * n_boundary);
        let mut control = None;
        for n in 0..n_samples {
            let Some((idx, line)) = lines.next() else {
                if n == 0 {
                    return Ok(traces);
                }
                return Err(CliError::artifact(TRACES, "truncated trace"));
            };
            let fields = parse_numbers(line, TRACES, idx + 1)?;
            if fields.len() != n_boundary + 2 || fields[1] != n as f64 {
                return Err(CliError::artifact(TRACES, format!("line {}: malformed row", idx + 1)));
            }
            let c = fields[0] as usize;
            if *control.get_or_insert(c) != c {
                return Err(CliError::artifact(TRACES, format!("line {}: control changes mid-trace", idx + 1)));
            }
            samples.extend_from_slice(&fields[2..]);
        }
        traces.push(BoundaryTrace::new(control.unwrap_or(0), step, n_boundary, samples)?);
    }
}

fn format_states(traces: &[BoundaryTrace]) -> String {
    let mut out = String::from("control,field,values\n");
    for t in traces {
        if let Some(state) = &t.terminal {
            for (field, values) in [("u", &state.displacement), ("v", &state.velocity)] {
                let _ = write!(out, "{},{field}", t.control);
                for v in values.iter() {
                    let _ = write!(out, ",{v:e}");
                }
                out.push('\n');
            }
        }
    }
    out
}

fn attach_states(body: &str, traces: &mut [BoundaryTrace]) -> CliResult<()> {
    let mut lines = body.lines().enumerate().skip(1);
    while let Some((idx, u_line)) = lines.next() {
        let (_, v_line) = lines
            .next()
            .ok_or_else(|| CliError::artifact(ORACLE_STATES, "displacement without velocity"))?;
        let split = |line: &str, field: &str| -> CliResult<(usize, Vec<f64>)> {
            let mut parts = line.splitn(3, ',');
            let control = parts.next().and_then(|c| c.parse().ok());
            let tag = parts.next();
            match (control, tag, parts.next()) {
                (Some(c), Some(t), Some(rest)) if t == field => Ok((c, parse_numbers(rest, ORACLE_STATES, idx + 1)?)),
                _ => Err(CliError::artifact(ORACLE_STATES, format!("line {}: malformed row", idx + 1))),
            }
        };
        let (cu, displacement) = split(u_line, "u")?;
        let (cv, velocity) = split(v_line, "v")?;
        let trace = traces
            .get_mut(cu)
            .filter(|_| cu == cv)
            .ok_or_else(|| CliError::artifact(ORACLE_STATES, format!("line {}: unknown control {cu}", idx + 1)))?;
        trace.terminal = Some(TerminalState { displacement, velocity });
    }
    Ok(())
}

fn simulate(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let config = &ctx.config;
    let (mesh, mesh_art) = load_mesh(ws)?;
    let bounds = config.bounds();
    let (truth, density_hash) = load_truth(ws, &mesh_art, bounds)?;
    let ceiling = DensityField::constant(mesh.triangle_count(), bounds.1, bounds)?;
    let t_star_box = estimate_optical_radius(&mesh, &ceiling)?;
    let times = config.times.resolve(|| Ok(t_star_box))?;
    let t_star_true = estimate_optical_radius(&mesh, &truth)?;
    let mut warnings = Vec::new();
    if times.final_time <= t_star_true {
        warnings.push(format!(
            "T = {:.6} does not exceed the estimated optical radius {t_star_true:.6}; waves may not fill the disk",
            times.final_time
        ));
    }

    let grid = TimeGrid::new(times.step, times.n_shifts * times.substeps)?;
    let wavelet = wavelet(config)?;
    let basis = ControlBasis::new(&mesh, wavelet, grid, times.n_shifts)?;
    let solver = WaveSolver::for_density(&mesh, &truth, times.step)?;
    let mode: TraceMode = config.forms.trace_mode.into();
    let traces = generate_all_traces(&solver, &basis, mode, ctx.oracle)?;
    // Shift traces are exact delays of the base traces, so only those are stored.
    let stored: Vec<&BoundaryTrace> = match config.forms.trace_mode {
        TraceModeChoice::Shift => (0..basis.n_profiles()).map(|a| &traces[basis.index(0, a)]).collect(),
        TraceModeChoice::Direct => traces.iter().collect(),
    };
    let mode_name = match config.forms.trace_mode {
        TraceModeChoice::Shift => "shift",
        TraceModeChoice::Direct => "direct",
    };
    let mut art = Artifact::new("traces", format_traces(&stored))
        .with_input("mesh", &mesh_art.hash)
        .with_input("density", &density_hash)
        .with_meta("mode", mode_name)
        .with_meta("step", format!("{:e}", times.step))
        .with_meta("n_shifts", times.n_shifts)
        .with_meta("substeps", times.substeps)
        .with_meta("frequency", format!("{:e}", wavelet.frequency))
        .with_meta("delay", format!("{:e}", wavelet.delay))
        .with_meta("n_boundary", basis.n_profiles())
        .with_meta("stored", stored.len());
    if ctx.oracle {
        art = art.with_meta("oracle_mode", "true");
    }
    ws.write_artifact(TRACES, &art)?;
    if ctx.oracle {
        let states = Artifact::new("oracle-states", format_states(&traces))
            .with_input("traces", &art.hash)
            .with_meta("oracle_mode", "true");
        ws.write_artifact(ORACLE_STATES, &states)?;
    } else {
        ws.remove(ORACLE_STATES)?;
    }

    let mut report = json!({
        "final_time": times.final_time,
        "offset": times.offset,
        "step": times.step,
        "n_shifts": times.n_shifts,
        "substeps": times.substeps,
        "mode": mode_name,
        "controls": basis.len(),
        "simulated": if mode == TraceMode::Shift { basis.n_profiles() } else { basis.len() },
        "optical_radius_box_max": t_star_box,
        "optical_radius_true": t_star_true,
        "trace_max_abs": traces.iter().map(BoundaryTrace::max_abs).fold(0.0, f64::max),
        "warnings": warnings,
    });
    if ctx.oracle {
        report["oracle_mode"] = json!(true);
    }
    Ok(StageOutcome::clean(report))
}

fn forms(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let (mesh, mesh_art) = load_mesh(ws)?;
    let tr = ws.read_artifact(TRACES, "traces", "simulate")?;
    ws.check_input(&tr, TRACES, "mesh", &mesh_art.hash, "simulate")?;
    let step: f64 = tr.meta_value("step", TRACES)?;
    let n_shifts: usize = tr.meta_value("n_shifts", TRACES)?;
    let substeps: usize = tr.meta_value("substeps", TRACES)?;
    let n_boundary: usize = tr.meta_value("n_boundary", TRACES)?;
    let wavelet = RickerWavelet::new(tr.meta_value("frequency", TRACES)?, tr.meta_value("delay", TRACES)?)?;
    let grid = TimeGrid::new(step, n_shifts * substeps)?;
    let basis = ControlBasis::new(&mesh, wavelet, grid, n_shifts)?;
    if n_boundary != basis.n_profiles() {
        return Err(CliError::artifact(TRACES, "boundary size disagrees with the mesh"));
    }

    let stored = parse_traces(&tr.body, n_boundary, grid.n_samples(), step)?;
    let mut traces: Vec<BoundaryTrace> = match tr.meta("mode") {
        Some("shift") => {
            if stored.len() != basis.n_profiles() {
                return Err(CliError::artifact(TRACES, "expected one base trace per boundary profile"));
            }
            (0..basis.len())
                .map(|i| {
                    let (j, alpha) = basis.split(i);
                    stored[alpha].delayed(i, j * basis.shift_steps())
                })
                .collect()
        }
        Some("direct") => stored,
        other => return Err(CliError::artifact(TRACES, format!("unknown trace mode {other:?}"))),
    };
    for (i, t) in traces.iter().enumerate() {
        if t.control != i {
            return Err(CliError::artifact(TRACES, format!("trace {i} is labeled control {}", t.control)));
        }
    }

    let quadrature: Quadrature = ctx.config.forms.quadrature.into();
    let data = build_form_data(&basis, &traces, quadrature)?;
    let mut art = Artifact::new("forms", format_form_data(&data))
        .with_input("mesh", &mesh_art.hash)
        .with_input("traces", &tr.hash);
    let mut report = json!({
        "quadrature": quadrature.name(),
        "controls": data.n_controls(),
        "asymmetry": {
            "connecting": data.asymmetry.connecting,
            "potential": data.asymmetry.potential,
            "kinetic": data.asymmetry.kinetic,
        },
    });

    if ctx.oracle {
        // Diagnostic path: interior states and the true density.
        let states = ws.read_artifact(ORACLE_STATES, "oracle-states", "simulate --oracle")?;
        ws.check_input(&states, ORACLE_STATES, "traces", &tr.hash, "simulate --oracle")?;
        attach_states(&states.body, &mut traces)?;
        let (truth, _) = load_truth(ws, &mesh_art, ctx.config.bounds())?;
        let errors = oracle_errors(&data, &traces, &assemble_mass(&mesh, &truth)?, &assemble_stiffness(&mesh))?;
        report["oracle_mode"] = json!(true);
        report["oracle"] = json!({
            "connecting_error": errors.connecting,
            "potential_error": errors.potential,
            "kinetic_error": errors.kinetic,
        });
        art = art.with_meta("oracle_mode", "true");
    }
    ws.write_artifact(FORMS, &art)?;
    Ok(StageOutcome::clean(report))
}

fn parse_harmonics(body: &str, mesh: &TriMesh) -> CliResult<HarmonicBasis> {
    let mut lines = body.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| CliError::artifact(HARMONICS, "empty file"))?;
    let n_targets = head.split(',').count().saturating_sub(1);
    if n_targets != mesh.boundary_count() {
        return Err(CliError::artifact(
            HARMONICS,
            format!("{n_targets} targets for {} boundary nodes", mesh.boundary_count()),
        ));
    }
    let mut functions = vec![Vec::with_capacity(mesh.node_count()); n_targets];
    for (idx, line) in lines {
        let fields = parse_numbers(line, HARMONICS, idx + 1)?;
        if fields.len() != n_targets + 1 || fields[0] as usize != functions[0].len() {
            return Err(CliError::artifact(HARMONICS, format!("line {}: malformed row", idx + 1)));
        }
        for (f, v) in functions.iter_mut().zip(&fields[1..]) {
            f.push(*v);
        }
    }
    if functions[0].len() != mesh.node_count() {
        return Err(CliError::artifact(HARMONICS, "node count disagrees with the mesh"));
    }
    Ok(HarmonicBasis {
        sources: build_boundary_sources(mesh),
        functions,
        boundary_ring: mesh.boundary_ring().to_vec(),
    })
}

fn harmonics(ws: &Workspace) -> CliResult<StageOutcome> {
    let (mesh, mesh_art) = load_mesh(ws)?;
    let stiffness = assemble_stiffness(&mesh);
    let basis = build_harmonic_basis(&mesh, &stiffness)?;
    let solver = HarmonicSolver::new(&stiffness)?;
    let residual = basis
        .sources
        .iter()
        .zip(&basis.functions)
        .map(|(l, phi)| solver.residual(phi, l))
        .fold(0.0, f64::max);
    let art = Artifact::new("harmonics", basis.to_csv()).with_input("mesh", &mesh_art.hash);
    ws.write_artifact(HARMONICS, &art)?;
    let sv = basis.to_matrix().singular_values();
    Ok(StageOutcome::clean(json!({
        "targets": basis.len(),
        "max_residual": residual,
        "singular_values": [sv.max(), sv.min()],
    })))
}

/// Forms and harmonics, checked to come from the same mesh.
fn load_inversion_inputs(ws: &Workspace) -> CliResult<(TriMesh, Artifact, Artifact, Artifact, HarmonicBasis)> {
    let (mesh, mesh_art) = load_mesh(ws)?;
    let forms = ws.read_artifact(FORMS, "forms", "forms")?;
    ws.check_input(&forms, FORMS, "mesh", &mesh_art.hash, "forms")?;
    let harm = ws.read_artifact(HARMONICS, "harmonics", "harmonics")?;
    ws.check_input(&harm, HARMONICS, "mesh", &mesh_art.hash, "harmonics")?;
    let basis = parse_harmonics(&harm.body, &mesh)?;
    Ok((mesh, mesh_art, forms, harm, basis))
}

fn control(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let (_, _, forms, harm, basis) = load_inversion_inputs(ws)?;
    let data = parse_form_data(&forms.body, Path::new(FORMS))?;
    let c = &ctx.config.control;
    let settings = ControlSettings {
        cutoff: c.cutoff,
        block_weight: c.block_weight,
        residual_ceiling: c.residual_ceiling,
    };
    let outcome = solve_all_controls(&data, &basis, &settings)?;
    let art = Artifact::new("controls", format_controls(&outcome))
        .with_input("forms", &forms.hash)
        .with_input("harmonics", &harm.hash);
    ws.write_artifact(CONTROLS, &art)?;
    ws.write(CONTROL_REPORT, &format_control_report(&outcome))?;

    let breaches: Vec<String> = outcome
        .breaches
        .iter()
        .map(|t| {
            format!(
                "target {t}: control residual {:.3e} above ceiling {:.3e}",
                outcome.solutions[*t].residual,
                c.residual_ceiling.unwrap_or(f64::INFINITY)
            )
        })
        .collect();
    Ok(StageOutcome {
        report: json!({
            "targets": outcome.solutions.len(),
            "max_residual": outcome.max_residual(),
            "max_phi_diagnostic": outcome.solutions.iter().map(|s| s.phi).fold(0.0, f64::max),
            "min_rank": outcome.solutions.iter().map(|s| s.rank).min(),
            "residual_ceiling": c.residual_ceiling,
            "breaches": breaches,
        }),
        breaches,
    })
}

fn reconstruct(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let (mesh, mesh_art, forms, harm, basis) = load_inversion_inputs(ws)?;
    let controls_art = ws.read_artifact(CONTROLS, "controls", "control")?;
    ws.check_input(&controls_art, CONTROLS, "forms", &forms.hash, "control")?;
    ws.check_input(&controls_art, CONTROLS, "harmonics", &harm.hash, "control")?;
    let data = parse_form_data(&forms.body, Path::new(FORMS))?;
    let controls = parse_controls(&controls_art.body, Path::new(CONTROLS))?;

    let r = &ctx.config.reconstruction;
    let bounds = ctx.config.bounds();
    let system = assemble_density_system(&mesh, &basis, &data, &controls, bounds)?;
    let lambda = if r.lambda > 0.0 { r.lambda * system.lambda_unit() } else { 0.0 };
    let settings = SolveSettings {
        solver: r.solver.into(),
        lambda,
        max_iterations: r.max_iterations,
        ..Default::default()
    };
    let result = solve_density(&system, &settings)?;
    let art = Artifact::new("reconstruction", format_density_csv(&mesh, &result.estimate, None))
        .with_input("mesh", &mesh_art.hash)
        .with_input("forms", &forms.hash)
        .with_input("controls", &controls_art.hash)
        .with_meta("box", format!("{:e},{:e}", bounds.0, bounds.1));
    ws.write_artifact(RECONSTRUCTION, &art)?;

    let mut warnings = Vec::new();
    if !result.converged {
        warnings.push(format!("density solver stopped after {} iterations", result.iterations));
    }
    Ok(StageOutcome::clean(json!({
        "solver": format!("{:?}", settings.solver),
        "rows": system.matrix.nrows(),
        "unknowns": system.matrix.ncols(),
        "lambda": lambda,
        "residual": result.residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "singular_values": [result.singular_values.0, result.singular_values.1],
        "warnings": warnings,
    })))
}

fn parse_estimate(art: &Artifact, n_triangles: usize) -> CliResult<Vec<f64>> {
    let values: Vec<f64> = art
        .body
        .lines()
        .enumerate()
        .skip(1)
        .map(|(idx, line)| {
            let fields = parse_numbers(line, RECONSTRUCTION, idx + 1)?;
            fields
                .get(3)
                .copied()
                .ok_or_else(|| CliError::artifact(RECONSTRUCTION, format!("line {}: missing rho_est", idx + 1)))
        })
        .collect::<CliResult<_>>()?;
    if values.len() != n_triangles {
        return Err(CliError::artifact(RECONSTRUCTION, "triangle count disagrees with the mesh"));
    }
    Ok(values)
}

fn score(ctx: &Context, ws: &Workspace) -> CliResult<StageOutcome> {
    let (mesh, mesh_art) = load_mesh(ws)?;
    let recon = ws.read_artifact(RECONSTRUCTION, "reconstruction", "reconstruct")?;
    ws.check_input(&recon, RECONSTRUCTION, "mesh", &mesh_art.hash, "reconstruct")?;
    let bounds = ctx.config.bounds();
    let estimate = DensityField::new(parse_estimate(&recon, mesh.triangle_count())?, bounds)?;

    let mut stages = Map::new();
    let mut warnings: Vec<Value> = Vec::new();
    for stage in Stage::ALL.iter().filter(|s| **s != Stage::Score) {
        let file = report_file(*stage);
        if ws.exists(&file) {
            let report: Value = serde_json::from_str(&ws.read(&file, stage.name())?)?;
            if let Some(w) = report.get("warnings").and_then(Value::as_array) {
                warnings.extend(w.iter().cloned());
            }
            stages.insert(stage.name().to_string(), report);
        }
    }

    let mut breaches = Vec::new();
    let mut summary = json!({
        "oracle_mode": ctx.oracle,
        "stages": stages,
    });
    let control = &ctx.config.control;
    if let Some(max) = summary["stages"]["control"]["max_residual"].as_f64() {
        let met = control.residual_ceiling.is_none_or(|c| max <= c);
        if !met {
            breaches.push(format!("max control residual {max:.3e} above {:.3e}", control.residual_ceiling.unwrap()));
        }
        summary["control_residual"] = json!({ "max": max, "ceiling": control.residual_ceiling, "met": met });
    }
    if let Some(r) = summary["stages"]["reconstruct"]["residual"].as_f64() {
        summary["reconstruction_residual"] = json!(r);
    }

    // The truth is optional here; without it δ is omitted.
    if ws.exists(DENSITY) {
        let (truth, _) = load_truth(ws, &mesh_art, bounds)?;
        let weighting: ErrorWeighting = ctx.config.reconstruction.weighting.into();
        let delta = relative_error(&estimate, &truth, &mesh.areas(), weighting)?;
        let ceiling = ctx.config.reconstruction.delta_ceiling;
        let met = ceiling.is_none_or(|c| delta <= c);
        if !met {
            breaches.push(format!("δ = {delta:.4} above {:.4}", ceiling.unwrap()));
        }
        summary["delta"] = json!({
            "value": delta,
            "weighting": format!("{weighting:?}").to_lowercase(),
            "ceiling": ceiling,
            "met": met,
        });
        ws.write(COMPARISON, &format_density_csv(&mesh, &estimate, Some(&truth)))?;
    } else {
        warnings.push(json!("no ground-truth density; δ omitted"));
    }
    summary["warnings"] = Value::Array(warnings);
    summary["breaches"] = json!(breaches);
    summary["ceilings_met"] = json!(breaches.is_empty());
    ws.write(SUMMARY, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(StageOutcome { report: summary, breaches })
}
