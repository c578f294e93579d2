use std::path::{Path, PathBuf};

use bctomo_core::forms::Quadrature;
use bctomo_core::reconstruct::{DensitySolver, ErrorWeighting};
use bctomo_core::samples::{Disc, Sample};
use bctomo_core::wavesim::{integer_ratio, TraceMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are taken from the config file's directory.
    pub output_dir: PathBuf,
    /// Only the random sample generators use it.
    pub seed: u64,
    pub mesh: MeshConfig,
    pub sample: SampleConfig,
    pub wavelet: WaveletConfig,
    pub times: TimesConfig,
    pub forms: FormsConfig,
    pub control: ControlConfig,
    pub reconstruction: ReconstructionConfig,
    pub oracle_mode: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("bctomo_out"),
            seed: 0,
            mesh: MeshConfig::default(),
            sample: SampleConfig::default(),
            wavelet: WaveletConfig::default(),
            times: TimesConfig::default(),
            forms: FormsConfig::default(),
            control: ControlConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            oracle_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub n_rings: usize,
    pub n_boundary: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { n_rings: 6, n_boundary: 24 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    pub center: [f64; 2],
    pub radius: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDiscs {
    pub count: usize,
    pub radius: f64,
    pub value: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleConfig {
    Constant {
        value: f64,
    },
    /// Explicit discs, seeded random discs, or the two-disc default.
    Inclusions {
        #[serde(default = "one")]
        background: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        discs: Option<Vec<DiscConfig>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        random: Option<RandomDiscs>,
    },
    Annulus {
        #[serde(default = "one")]
        background: f64,
        #[serde(default = "two")]
        value: f64,
        #[serde(default = "annulus_inner")]
        inner: f64,
        #[serde(default = "annulus_outer")]
        outer: f64,
    },
    Waveguide {
        #[serde(default = "one")]
        background: f64,
        #[serde(default = "two")]
        value: f64,
        #[serde(default = "waveguide_width")]
        width: f64,
        #[serde(default)]
        angle: f64,
        #[serde(default)]
        offset: f64,
    },
    Folds {
        #[serde(default = "folds_mean")]
        mean: f64,
        #[serde(default = "folds_amplitude")]
        amplitude: f64,
        #[serde(default = "folds_wavenumber")]
        wavenumber: f64,
        #[serde(default = "folds_bend")]
        bend: f64,
    },
    /// A density file in the mesh module's format.
    File { path: PathBuf },
}

fn annulus_inner() -> f64 {
    0.3
}
fn annulus_outer() -> f64 {
    0.6
}
fn waveguide_width() -> f64 {
    0.3
}
fn folds_mean() -> f64 {
    1.5
}
fn folds_amplitude() -> f64 {
    0.4
}
fn folds_wavenumber() -> f64 {
    5.0
}
fn folds_bend() -> f64 {
    0.2
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig::Inclusions {
            background: 1.0,
            discs: None,
            random: None,
        }
    }
}

impl SampleConfig {
    /// The generator, or `None` for a density file.
    pub fn generator(&self, seed: u64) -> CliResult<Option<Sample>> {
        let sample = match self {
            SampleConfig::Constant { value } => Sample::Constant { value: *value },
            SampleConfig::Inclusions { background, discs, random } => match (discs, random) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config("inclusions take either 'discs' or 'random', not both".into()))
                }
                (Some(d), None) => Sample::Inclusions {
                    background: *background,
                    discs: d
                        .iter()
                        .map(|d| Disc { center: d.center, radius: d.radius, value: d.value })
                        .collect(),
                },
                (None, Some(r)) => Sample::random_inclusions(r.count, r.radius, r.value, *background, seed)
                    .map_err(|e| CliError::Config(e.to_string()))?,
                (None, None) => match Sample::default_inclusions() {
                    Sample::Inclusions { discs, .. } => Sample::Inclusions { background: *background, discs },
                    _ => unreachable!(),
                },
            },
            SampleConfig::Annulus { background, value, inner, outer } => {
                if !(0.0 <= *inner && inner < outer) {
                    return Err(CliError::Config(format!("annulus needs 0 <= inner < outer, got {inner}, {outer}")));
                }
                Sample::Annulus { background: *background, value: *value, inner: *inner, outer: *outer }
            }
            SampleConfig::Waveguide { background, value, width, angle, offset } => {
                if !(*width > 0.0) {
                    return Err(CliError::Config(format!("waveguide width must be positive, got {width}")));
                }
                Sample::Waveguide {
                    background: *background,
                    value: *value,
                    width: *width,
                    angle: *angle,
                    offset: *offset,
                }
            }
            SampleConfig::Folds { mean, amplitude, wavenumber, bend } => Sample::Folds {
                mean: *mean,
                amplitude: *amplitude,
                wavenumber: *wavenumber,
                bend: *bend,
            },
            SampleConfig::File { .. } => return Ok(None),
        };
        Ok(Some(sample))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletConfig {
    pub frequency: f64,
    /// Defaults to `1.5 / frequency`.
    pub delay: Option<f64>,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig { frequency: 3.0, delay: None }
    }
}

/// `T`, `Δt` and `δt` may each be given; the rest follow from `n_shifts`,
/// `substeps` and, for `T`, the optical radius of the box maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimesConfig {
    pub final_time: Option<f64>,
    pub offset: Option<f64>,
    pub step: Option<f64>,
    pub n_shifts: usize,
    pub substeps: usize,
    /// Default `T` is this factor times the estimated optical radius.
    pub margin: f64,
}

impl Default for TimesConfig {
    fn default() -> Self {
        TimesConfig {
            final_time: None,
            offset: None,
            step: None,
            n_shifts: 8,
            substeps: 20,
            margin: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTimes {
    pub final_time: f64,
    pub offset: f64,
    pub step: f64,
    pub n_shifts: usize,
    pub substeps: usize,
}

impl TimesConfig {
    /// `T` if it does not depend on the mesh.
    fn explicit_final_time(&self) -> Option<f64> {
        self.final_time.or(self.offset.map(|dt| dt * self.n_shifts as f64))
    }

    pub fn resolve(&self, optical_radius: impl FnOnce() -> CliResult<f64>) -> CliResult<ResolvedTimes> {
        let final_time = match self.explicit_final_time() {
            Some(t) => t,
            None => self.margin * optical_radius()?,
        };
        let offset = self.offset.unwrap_or(final_time / self.n_shifts as f64);
        let n_shifts = integer_ratio(final_time, offset, "T/Δt").map_err(|e| CliError::Config(e.to_string()))?;
        let step = self.step.unwrap_or(offset / self.substeps as f64);
        let substeps = integer_ratio(offset, step, "Δt/δt").map_err(|e| CliError::Config(e.to_string()))?;
        Ok(ResolvedTimes {
            final_time: step * (n_shifts * substeps) as f64,
            offset: step * substeps as f64,
            step,
            n_shifts,
            substeps,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureChoice {
    #[default]
    Compatible,
    Trapezoid,
}

impl From<QuadratureChoice> for Quadrature {
    fn from(q: QuadratureChoice) -> Self {
        match q {
            QuadratureChoice::Compatible => Quadrature::Compatible,
            QuadratureChoice::Trapezoid => Quadrature::Trapezoid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceModeChoice {
    #[default]
    Shift,
    Direct,
}

impl From<TraceModeChoice> for TraceMode {
    fn from(m: TraceModeChoice) -> Self {
        match m {
            TraceModeChoice::Shift => TraceMode::Shift,
            TraceModeChoice::Direct => TraceMode::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormsConfig {
    pub quadrature: QuadratureChoice,
    pub trace_mode: TraceModeChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub cutoff: f64,
    pub block_weight: f64,
    pub residual_ceiling: Option<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            cutoff: bctomo_core::control::DEFAULT_CUTOFF,
            block_weight: 1.0,
            residual_ceiling: Some(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    ActiveSet,
    ProjectedGradient,
}

impl From<SolverChoice> for DensitySolver {
    fn from(s: SolverChoice) -> Self {
        match s {
            SolverChoice::ActiveSet => DensitySolver::ActiveSet,
            SolverChoice::ProjectedGradient => DensitySolver::ProjectedGradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingChoice {
    #[default]
    Area,
    Uniform,
}

impl From<WeightingChoice> for ErrorWeighting {
    fn from(w: WeightingChoice) -> Self {
        match w {
            WeightingChoice::Area => ErrorWeighting::Area,
            WeightingChoice::Uniform => ErrorWeighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Smoothing weight in units of `‖A‖² / ‖D‖²`.
    pub lambda: f64,
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
    pub weighting: WeightingChoice,
    pub solver: SolverChoice,
    pub max_iterations: usize,
    pub delta_ceiling: Option<f64>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            lambda: 0.0,
            bounds: [0.5, 3.0],
            weighting: WeightingChoice::Area,
            solver: SolverChoice::ActiveSet,
            max_iterations: 100_000,
            delta_ceiling: None,
        }
    }
}

fn check(ok: bool, message: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(message()))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.reconstruction.bounds[0], self.reconstruction.bounds[1])
    }

    pub fn validate(&self) -> CliResult<()> {
        let m = &self.mesh;
        check(m.n_rings >= 1 && m.n_boundary >= 3, || {
            format!("mesh needs n_rings >= 1 and n_boundary >= 3, got {} and {}", m.n_rings, m.n_boundary)
        })?;
        let w = &self.wavelet;
        check(w.frequency > 0.0 && w.frequency.is_finite(), || {
            format!("wavelet frequency must be positive, got {}", w.frequency)
        })?;
        if let Some(d) = w.delay {
            check(d >= 0.0 && d.is_finite(), || format!("wavelet delay must be nonnegative, got {d}"))?;
        }

        let t = &self.times;
        check(t.n_shifts >= 1 && t.substeps >= 1, || "n_shifts and substeps must be positive".into())?;
        check(t.margin > 1.0, || format!("time margin must exceed 1, got {}", t.margin))?;
        for (name, v) in [("final_time", t.final_time), ("offset", t.offset), ("step", t.step)] {
            if let Some(v) = v {
                check(v > 0.0 && v.is_finite(), || format!("{name} must be positive, got {v}"))?;
            }
        }
        if t.explicit_final_time().is_some() {
            t.resolve(|| unreachable!())?;
        } else if let (Some(dt), Some(step)) = (t.offset, t.step) {
            integer_ratio(dt, step, "Δt/δt").map_err(|e| CliError::Config(e.to_string()))?;
        }

        let c = &self.control;
        check((0.0..1.0).contains(&c.cutoff), || format!("cutoff must lie in [0, 1), got {}", c.cutoff))?;
        check(c.block_weight > 0.0 && c.block_weight.is_finite(), || {
            format!("block weight must be positive, got {}", c.block_weight)
        })?;

        let r = &self.reconstruction;
        let (lo, hi) = self.bounds();
        check(lo > 0.0 && lo < hi && hi.is_finite(), || format!("box must satisfy 0 < min < max, got [{lo}, {hi}]"))?;
        check(r.lambda >= 0.0 && r.lambda.is_finite(), || format!("lambda must be nonnegative, got {}", r.lambda))?;
        check(r.max_iterations >= 1, || "max_iterations must be positive".into())?;
        self.sample.generator(self.seed)?;
        Ok(())
    }
}
