//! Synthetic ground-truth densities, sampled at triangle centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{DensityField, Point, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Point,
    pub radius: f64,
    pub value: f64,
}

impl Disc {
    fn contains(&self, p: Point) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) < self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Constant { value: f64 },
    /// Discs over a uniform background; later discs win where they overlap.
    Inclusions { background: f64, discs: Vec<Disc> },
    /// `value` on `inner ≤ |x| < outer`.
    Annulus { background: f64, value: f64, inner: f64, outer: f64 },
    /// Straight slow channel of the given width through the disk.
    Waveguide { background: f64, value: f64, width: f64, angle: f64, offset: f64 },
    /// Smooth layering `mean + amplitude·sin(k (y − bend·sin(π x)))`.
    Folds { mean: f64, amplitude: f64, wavenumber: f64, bend: f64 },
}

impl Sample {
    pub fn name(&self) -> &'static str {
        match self {
            Sample::Constant { .. } => "constant",
            Sample::Inclusions { .. } => "inclusions",
            Sample::Annulus { .. } => "annulus",
            Sample::Waveguide { .. } => "waveguide",
            Sample::Folds { .. } => "folds",
        }
    }

    /// Two `ρ = 2` discs of radius 0.25 in a unit background.
    pub fn default_inclusions() -> Sample {
        Sample::Inclusions {
            background: 1.0,
            discs: vec![
                Disc { center: [0.4, 0.0], radius: 0.25, value: 2.0 },
                Disc { center: [-0.3, -0.3], radius: 0.25, value: 2.0 },
            ],
        }
    }

    /// `count` non-overlapping discs placed uniformly inside the unit disk.
    pub fn random_inclusions(count: usize, radius: f64, value: f64, background: f64, seed: u64) -> Result<Sample> {
        if !(radius > 0.0 && radius < 0.5) {
            return Err(Error::InvalidArgument(format!("inclusion radius must lie in (0, 0.5), got {radius}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reach = 1.0 - radius - 0.05;
        let mut discs: Vec<Disc> = Vec::with_capacity(count);
        let mut attempts = 0;
        while discs.len() < count {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidArgument(format!(
                    "could not place {count} discs of radius {radius} without overlap"
                )));
            }
            let c = [rng.random_range(-reach..reach), rng.random_range(-reach..reach)];
            if c[0].hypot(c[1]) > reach {
                continue;
            }
            let clear = discs
                .iter()
                .all(|d| (c[0] - d.center[0]).hypot(c[1] - d.center[1]) > 2.0 * radius + 0.05);
            if clear {
                discs.push(Disc { center: c, radius, value });
            }
        }
        Ok(Sample::Inclusions { background, discs })
    }

    pub fn value_at(&self, p: Point) -> f64 {
        match self {
            Sample::Constant { value } => *value,
            Sample::Inclusions { background, discs } => discs
                .iter()
                .rev()
                .find(|d| d.contains(p))
                .map_or(*background, |d| d.value),
            Sample::Annulus { background, value, inner, outer } => {
                let r = p[0].hypot(p[1]);
                if r >= *inner && r < *outer {
                    *value
                } else {
                    *background
                }
            }
            Sample::Waveguide { background, value, width, angle, offset } => {
                // distance from the channel's center line along its normal
                let d = -p[0] * angle.sin() + p[1] * angle.cos() - offset;
                if d.abs() < 0.5 * width {
                    *value
                } else {
                    *background
                }
            }
            Sample::Folds { mean, amplitude, wavenumber, bend } => {
                let phase = wavenumber * (p[1] - bend * (std::f64::consts::PI * p[0]).sin());
                mean + amplitude * phase.sin()
            }
        }
    }

    /// Piecewise-constant field from centroid values; fails if it leaves the box.
    pub fn rasterize(&self, mesh: &TriMesh, bounds: (f64, f64)) -> Result<DensityField> {
        let values = (0..mesh.triangle_count())
            .map(|k| self.value_at(mesh.centroid(k)))
            .collect();
        DensityField::new(values, bounds)
    }
}
