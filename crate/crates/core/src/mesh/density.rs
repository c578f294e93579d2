use crate::error::{Error, Result};

/// Piecewise-constant density, one value per triangle, with its a-priori box.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
    bounds: (f64, f64),
}

impl DensityField {
    pub fn new(values: Vec<f64>, bounds: (f64, f64)) -> Result<Self> {
        let (lo, hi) = bounds;
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Density(format!(
                "bounds must satisfy 0 < min <= max, got [{lo}, {hi}]"
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= lo && **v <= hi))
        {
            return Err(Error::Density(format!(
                "value {v} of triangle {k} outside [{lo}, {hi}]"
            )));
        }
        Ok(DensityField { values, bounds })
    }

    /// Field whose box is the tight range of its own values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Err(Error::Density("empty density".into()));
        }
        Self::new(values, (lo, hi))
    }

    pub fn constant(n_triangles: usize, value: f64, bounds: (f64, f64)) -> Result<Self> {
        Self::new(vec![value; n_triangles], bounds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `c · ρ` with the box scaled alongside.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.values.iter().map(|v| v * c).collect(),
            (self.bounds.0 * c, self.bounds.1 * c),
        )
    }

    pub fn with_bounds(self, bounds: (f64, f64)) -> Result<Self> {
        Self::new(self.values, bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_box() {
        assert!(DensityField::new(vec![1.0, 3.5], (0.5, 3.0)).is_err());
        assert!(DensityField::new(vec![1.0], (0.0, 3.0)).is_err());
        assert!(DensityField::new(vec![1.0], (2.0, 1.0)).is_err());
        assert!(DensityField::new(vec![f64::NAN], (0.5, 3.0)).is_err());
    }

    #[test]
    fn tight_bounds() {
        let d = DensityField::from_values(vec![1.0, 2.0, 1.5]).unwrap();
        assert_eq!(d.bounds(), (1.0, 2.0));
    }
}
