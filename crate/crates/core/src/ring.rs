//! Geometry of the unit circle `S = [-π, π)` and sampled periodic fields.
//!
//! Angles are kept on the half-open interval `[-π, π)`: the seam point `π`
//! is identified with `-π`. A [`RingGrid`] places `m` uniformly spaced nodes
//! at `x_k = -π + k·h` with `h = 2π/m`, and a [`RingField`] stores one sample
//! per node. Integrals use the rectangle rule `h·Σ f_k`, which for periodic
//! data coincides with the trapezoidal rule and is exact for constants.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Maps any finite angle onto `[-π, π)`.
///
/// Angles already on the interval are returned bit-for-bit unchanged, so
/// wrapping is idempotent.
pub fn wrap_angle(x: f64) -> Result<RingPosition> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cannot wrap non-finite angle {x}"
        )));
    }
    Ok(RingPosition(wrap_unchecked(x)))
}

#[inline]
pub(crate) fn wrap_unchecked(x: f64) -> f64 {
    if (-PI..PI).contains(&x) {
        return x;
    }
    let r = (x + PI).rem_euclid(TWO_PI) - PI;
    // rem_euclid may round up to exactly 2π for tiny negative inputs
    if r >= PI {
        -PI
    } else if r < -PI {
        -PI
    } else {
        r
    }
}

/// Signed angular distance `x_i - x_j` wrapped onto `[-π, π)`.
///
/// Antipodal pairs map to `-π` on both orderings; that is the only
/// departure from exact antisymmetry.
#[inline]
pub fn wrapped_distance(xi: RingPosition, xj: RingPosition) -> f64 {
    wrap_unchecked(xi.0 - xj.0)
}

/// An angle on the ring, always in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RingPosition(f64);

impl RingPosition {
    pub fn new(theta: f64) -> Result<Self> {
        wrap_angle(theta)
    }

    #[inline]
    pub fn theta(self) -> f64 {
        self.0
    }

    /// Moves the position by `delta` radians, wrapping around the seam.
    #[inline]
    pub fn advance(self, delta: f64) -> Self {
        RingPosition(wrap_unchecked(self.0 + delta))
    }
}

impl TryFrom<f64> for RingPosition {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        wrap_angle(value)
    }
}

impl From<RingPosition> for f64 {
    fn from(p: RingPosition) -> f64 {
        p.0
    }
}

impl fmt::Display for RingPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Uniform periodic discretization of the ring with `m` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingGrid {
    cells: usize,
}

impl RingGrid {
    /// Smallest grid on which central differences are meaningful.
    pub const MIN_CELLS: usize = 4;

    pub fn new(cells: usize) -> Result<Self> {
        if cells < Self::MIN_CELLS {
            return Err(Error::param(
                "cells",
                cells as f64,
                "a ring grid needs at least 4 cells",
            ));
        }
        Ok(Self { cells })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        TWO_PI / self.cells as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        -PI + k as f64 * self.cell_width()
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.cells).map(move |k| self.node(k))
    }

    /// Index of the node closest to `x` (periodically).
    pub fn nearest_node(&self, x: f64) -> usize {
        let s = (wrap_unchecked(x) + PI) / self.cell_width();
        (s.round() as usize) % self.cells
    }

    pub(crate) fn check_same(&self, other: &RingGrid) -> Result<()> {
        if self.cells != other.cells {
            return Err(Error::GridMismatch {
                left: self.cells,
                right: other.cells,
            });
        }
        Ok(())
    }
}

/// Which `L^p` norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

impl TryFrom<f64> for Norm {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Norm::L1)
        } else if p == 2.0 {
            Ok(Norm::L2)
        } else if p == f64::INFINITY {
            Ok(Norm::Inf)
        } else {
            Err(Error::param("p", p, "supported norms are p = 1, 2 or infinity"))
        }
    }
}

/// Quadrature `L^p` norm of a field for `p ∈ {1, 2, ∞}`.
pub fn lp_norm(field: &RingField, p: f64) -> Result<f64> {
    Ok(field.norm(Norm::try_from(p)?))
}

/// A scalar function on the ring sampled at the nodes of a [`RingGrid`].
///
/// Arithmetic operators panic when the operands live on different grids, in
/// the same way slice arithmetic panics on length mismatch. Fallible entry
/// points elsewhere in the crate check grids up front and report
/// [`Error::GridMismatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct RingField {
    grid: RingGrid,
    values: Vec<f64>,
}

impl RingField {
    pub fn new(grid: RingGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                left: grid.len(),
                right: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: RingGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: RingGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: RingGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.nodes().map(f).collect(),
        }
    }

    #[inline]
    pub fn grid(&self) -> RingGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ensure_same_grid(&self, other: &RingField) -> Result<()> {
        self.grid.check_same(&other.grid)
    }

    /// Rectangle-rule integral over the whole ring.
    pub fn integral(&self) -> f64 {
        self.grid.cell_width() * self.values.iter().sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm(&self, p: Norm) -> f64 {
        let h = self.grid.cell_width();
        match p {
            Norm::L1 => h * self.values.iter().map(|v| v.abs()).sum::<f64>(),
            Norm::L2 => (h * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt(),
            Norm::Inf => self.max_abs(),
        }
    }

    #[inline]
    pub fn l2(&self) -> f64 {
        self.norm(Norm::L2)
    }

    /// Second-order central difference `(f_{k+1} - f_{k-1}) / 2h` with
    /// periodic wrap.
    pub fn derivative(&self) -> RingField {
        let m = self.len();
        let inv = 0.5 / self.grid.cell_width();
        let v = &self.values;
        let values = (0..m)
            .map(|k| (v[(k + 1) % m] - v[(k + m - 1) % m]) * inv)
            .collect();
        RingField {
            grid: self.grid,
            values,
        }
    }

    /// Three-point Laplacian `(f_{k+1} - 2 f_k + f_{k-1}) / h²`.
    pub fn second_difference(&self) -> RingField {
        let m = self.len();
        let h = self.grid.cell_width();
        let inv = 1.0 / (h * h);
        let v = &self.values;
        let values = (0..m)
            .map(|k| (v[(k + 1) % m] - 2.0 * v[k] + v[(k + m - 1) % m]) * inv)
            .collect();
        RingField {
            grid: self.grid,
            values,
        }
    }

    /// Periodic linear interpolation at an arbitrary angle.
    pub fn interpolate(&self, x: f64) -> f64 {
        let m = self.len();
        let s = (wrap_unchecked(x) + std::f64::consts::PI) / self.grid.cell_width();
        // positions that are nodes up to rounding return the sample itself
        let nearest = s.round();
        if (s - nearest).abs() < 1e-9 {
            return self.values[(nearest as usize) % m];
        }
        let k = s.floor();
        let frac = s - k;
        let k0 = (k as usize) % m;
        let k1 = (k0 + 1) % m;
        self.values[k0] * (1.0 - frac) + self.values[k1] * frac
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RingField {
        RingField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &RingField, f: impl Fn(f64, f64) -> f64) -> RingField {
        assert_eq!(self.grid, other.grid, "ring fields live on different grids");
        RingField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Pointwise product.
    pub fn mul_pointwise(&self, other: &RingField) -> RingField {
        self.zip_map(other, |a, b| a * b)
    }

    /// The same field shifted by a constant so that its mean is zero.
    pub fn zero_mean(&self) -> RingField {
        let mean = self.mean();
        self.map(|v| v - mean)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &RingField) {
        assert_eq!(self.grid, other.grid, "ring fields live on different grids");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

impl Add for &RingField {
    type Output = RingField;
    fn add(self, rhs: &RingField) -> RingField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &RingField {
    type Output = RingField;
    fn sub(self, rhs: &RingField) -> RingField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Add for RingField {
    type Output = RingField;
    fn add(mut self, rhs: RingField) -> RingField {
        self += &rhs;
        self
    }
}

impl Sub for RingField {
    type Output = RingField;
    fn sub(mut self, rhs: RingField) -> RingField {
        self -= &rhs;
        self
    }
}

impl AddAssign<&RingField> for RingField {
    fn add_assign(&mut self, rhs: &RingField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&RingField> for RingField {
    fn sub_assign(&mut self, rhs: &RingField) {
        self.axpy(-1.0, rhs);
    }
}

impl Mul<f64> for &RingField {
    type Output = RingField;
    fn mul(self, c: f64) -> RingField {
        self.map(|v| v * c)
    }
}

impl Mul<f64> for RingField {
    type Output = RingField;
    fn mul(mut self, c: f64) -> RingField {
        self.values.iter_mut().for_each(|v| *v *= c);
        self
    }
}

impl Neg for &RingField {
    type Output = RingField;
    fn neg(self) -> RingField {
        self.map(|v| -v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap().theta(), 0.0);
        assert!((wrap_angle(1.5 * PI).unwrap().theta() + 0.5 * PI).abs() < 1e-15);
        assert!((wrap_angle(-5.0 * PI).unwrap().theta() + PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI).unwrap().theta(), -PI);
        assert_eq!(wrap_angle(-PI).unwrap().theta(), -PI);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(matches!(wrap_angle(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn tiny_negative_does_not_wrap_to_pi() {
        let p = wrap_angle(-PI - 1e-17).unwrap();
        assert!(p.theta() < PI);
    }

    #[test]
    fn distance_examples() {
        let d = |a: f64, b: f64| {
            wrapped_distance(RingPosition::new(a).unwrap(), RingPosition::new(b).unwrap())
        };
        assert!((d(0.1, -0.1) - 0.2).abs() < 1e-15);
        assert!((d(3.0, -3.0) - (6.0 - TWO_PI)).abs() < 1e-12);
        assert_eq!(d(1.234, 1.234), 0.0);
    }

    #[test]
    fn grid_requires_cells() {
        assert!(RingGrid::new(3).is_err());
        let g = RingGrid::new(8).unwrap();
        assert_eq!(g.node(0), -PI);
        assert_eq!(g.nearest_node(0.0), 4);
        assert_eq!(g.nearest_node(PI - 1e-9), 0);
    }

    #[test]
    fn constant_integral_is_exact() {
        let g = RingGrid::new(37).unwrap();
        let f = RingField::constant(g, 2.5);
        assert!((f.integral() - 2.5 * TWO_PI).abs() < 1e-12);
        assert!((f.l2() - 2.5 * TWO_PI.sqrt()).abs() < 1e-12);
        assert!(RingField::zeros(g).norm(Norm::L1) == 0.0);
    }

    #[test]
    fn unsupported_norm() {
        let g = RingGrid::new(8).unwrap();
        assert!(lp_norm(&RingField::zeros(g), 3.0).is_err());
        assert_eq!(lp_norm(&RingField::zeros(g), f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn central_difference_is_second_order() {
        let err = |m: usize| {
            let g = RingGrid::new(m).unwrap();
            let f = RingField::from_fn(g, |x| (2.0 * x).sin());
            let exact = RingField::from_fn(g, |x| 2.0 * (2.0 * x).cos());
            (&f.derivative() - &exact).max_abs()
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn interpolation_hits_nodes() {
        let g = RingGrid::new(16).unwrap();
        let f = RingField::from_fn(g, |x| x.cos() + 0.3 * x.sin());
        for k in 0..16 {
            assert!((f.interpolate(g.node(k)) - f.values()[k]).abs() < 1e-14);
        }
        // seam: x = π is node 0
        assert!((f.interpolate(PI) - f.values()[0]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_lands_in_half_open_interval(x in -1e4f64..1e4) {
            let w = wrap_angle(x).unwrap().theta();
            prop_assert!((-PI..PI).contains(&w));
            let back = (x - w) / TWO_PI;
            prop_assert!((back - back.round()).abs() < 1e-9);
            prop_assert_eq!(wrap_angle(w).unwrap().theta(), w);
            let shifted = wrap_angle(x + TWO_PI).unwrap().theta();
            let diff = wrap_unchecked(shifted - w).abs();
            prop_assert!(diff < 1e-9);
        }
    }
}
