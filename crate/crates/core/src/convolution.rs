//! Circular convolution of kernels with ring fields.
//!
//! The discrete convolution is
//! `(f ∗ ρ)_j = Σ_k f(wrap(x_j - x_k))·ρ_k·h`, a circulant product. The fast
//! path diagonalizes it with an FFT; [`circular_convolution_direct`] is the
//! O(m²) sum kept as a reference.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::kernel::Kernel;
use crate::ring::{RingField, RingGrid};

/// A kernel prepared for repeated convolution on one grid.
#[derive(Clone)]
pub struct Convolver {
    grid: RingGrid,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl Convolver {
    pub fn new(kernel: &Kernel, grid: RingGrid) -> Result<Self> {
        if let Kernel::Tabulated { grid: kg, .. } = kernel {
            kg.check_same(&grid)?;
        }
        let m = grid.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let h = grid.cell_width();
        // fold the quadrature weight and the 1/m of the inverse transform in
        let scale = h / m as f64;
        let mut spectrum: Vec<Complex<f64>> = kernel
            .offsets(grid)
            .into_iter()
            .map(|v| Complex::new(v * scale, 0.0))
            .collect();
        forward.process(&mut spectrum);
        Ok(Self {
            grid,
            spectrum,
            forward,
            inverse,
        })
    }

    pub fn grid(&self) -> RingGrid {
        self.grid
    }

    /// `k ∗ field`.
    pub fn apply(&self, field: &RingField) -> Result<RingField> {
        self.grid.check_same(&field.grid())?;
        let mut buf: Vec<Complex<f64>> = field
            .values()
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        RingField::new(self.grid, buf.into_iter().map(|c| c.re).collect())
    }

    /// `k ∗ field_x`, with the central-difference derivative of the field.
    /// Both operators are circulant, so this equals the central difference
    /// of `k ∗ field` up to rounding.
    pub fn apply_derivative(&self, field: &RingField) -> Result<RingField> {
        self.grid.check_same(&field.grid())?;
        self.apply(&field.derivative())
    }
}

/// `k ∗ field` through the FFT path.
pub fn circular_convolution(kernel: &Kernel, field: &RingField) -> Result<RingField> {
    Convolver::new(kernel, field.grid())?.apply(field)
}

/// `(k ∗ field)_x`, evaluated as `k ∗ field_x`.
pub fn convolution_derivative(kernel: &Kernel, field: &RingField) -> Result<RingField> {
    Convolver::new(kernel, field.grid())?.apply_derivative(field)
}

/// Direct O(m²) evaluation of the convolution sum.
pub fn circular_convolution_direct(kernel: &Kernel, field: &RingField) -> Result<RingField> {
    if let Kernel::Tabulated { grid, .. } = kernel {
        grid.check_same(&field.grid())?;
    }
    let grid = field.grid();
    let m = grid.len();
    let h = grid.cell_width();
    let offsets = kernel.offsets(grid);
    let v = field.values();
    let out = (0..m)
        .map(|j| {
            (0..m)
                .map(|k| offsets[(j + m - k) % m] * v[k])
                .sum::<f64>()
                * h
        })
        .collect();
    RingField::new(grid, out)
}
