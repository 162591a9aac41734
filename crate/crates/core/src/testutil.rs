//! Helpers shared by unit tests.

use rand::Rng;

use crate::ring::{RingField, RingGrid};

/// A random trigonometric polynomial with an analytic derivative.
#[derive(Debug, Clone)]
pub struct FourierSeries {
    pub offset: f64,
    pub coeffs: Vec<(f64, f64)>,
}

impl FourierSeries {
    pub fn random(rng: &mut impl Rng, modes: usize) -> Self {
        Self {
            offset: rng.random_range(-1.0..1.0),
            coeffs: (0..modes)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.offset
            + self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, (a, b))| {
                    let k = (n + 1) as f64;
                    a * (k * x).cos() + b * (k * x).sin()
                })
                .sum::<f64>()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, (a, b))| {
                let k = (n + 1) as f64;
                k * (b * (k * x).cos() - a * (k * x).sin())
            })
            .sum()
    }

    pub fn sample(&self, grid: RingGrid) -> RingField {
        RingField::from_fn(grid, |x| self.value(x))
    }

    pub fn sample_derivative(&self, grid: RingGrid) -> RingField {
        RingField::from_fn(grid, |x| self.derivative(x))
    }

    /// A strictly positive field: `level + amplitude·series/max|series|`.
    pub fn positive(&self, grid: RingGrid, level: f64, amplitude: f64) -> RingField {
        let raw = self.sample(grid);
        let scale = raw.max_abs().max(1e-12);
        raw.map(|v| level + amplitude * v / scale)
    }
}
