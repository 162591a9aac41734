//! Pairwise interaction kernels `f : S → R`.
//!
//! A kernel gives the velocity that an agent at signed wrapped distance `z`
//! induces on another. Two conventions are fixed here:
//!
//! * `f(0) = 0`: an agent exerts no velocity on itself, and the sign
//!   ambiguity of the Morse form at the origin is resolved symmetrically.
//! * At the seam `z = ±π` an odd kernel that does not vanish at `π` has a
//!   jump as a periodic function. Evaluation there returns the mean of the
//!   two one-sided limits, which is `0` for odd kernels. Arguments within
//!   [`SEAM_TOLERANCE`] of the seam snap to it, so antipodal agents cancel
//!   exactly even when their difference is computed with rounding.
//!
//! Together these make the sampled kernel exactly odd on any grid, and the
//! rectangle-rule convolution equals the trapezoidal rule on each smooth
//! piece.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::ring::{wrap_unchecked, RingField, RingGrid};

/// Distance from `±π` below which an argument counts as the seam.
pub const SEAM_TOLERANCE: f64 = 1e-12;

/// The Morse-type velocity kernel
/// `sign(z)·(-G·exp(-|z|/L) + exp(-|z|))`, with `sign(0) = 0`.
///
/// `strength` is `G` and `length` is `L`; with `G, L < 1` the short-range
/// term is repulsive.
pub fn morse_kernel(z: f64, strength: f64, length: f64) -> Result<f64> {
    validate_morse(strength, length)?;
    Ok(morse_raw(z, strength, length))
}

fn validate_morse(strength: f64, length: f64) -> Result<()> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::param("length", length, "must be positive and finite"));
    }
    if !strength.is_finite() {
        return Err(Error::param("strength", strength, "must be finite"));
    }
    Ok(())
}

#[inline]
fn morse_raw(z: f64, strength: f64, length: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let a = z.abs();
    let magnitude = -strength * (-a / length).exp() + (-a).exp();
    magnitude.copysign(z)
}

/// A periodic interaction kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Zero,
    Morse {
        strength: f64,
        length: f64,
    },
    /// `inner` restricted to `|z| ≤ radius`, zero outside.
    Windowed {
        inner: Box<Kernel>,
        radius: f64,
    },
    /// `a - b`, used for kernel mismatches such as `f̂ - f`.
    Difference(Box<Kernel>, Box<Kernel>),
    /// Caller-supplied samples on the nodes of `grid`, linearly
    /// interpolated. Odd symmetry is the caller's responsibility.
    Tabulated {
        grid: RingGrid,
        values: Vec<f64>,
    },
}

impl Kernel {
    pub fn morse(strength: f64, length: f64) -> Result<Self> {
        validate_morse(strength, length)?;
        Ok(Kernel::Morse { strength, length })
    }

    pub fn tabulated(field: RingField) -> Self {
        Kernel::Tabulated {
            grid: field.grid(),
            values: field.into_values(),
        }
    }

    pub fn difference(a: &Kernel, b: &Kernel) -> Self {
        Kernel::Difference(Box::new(a.clone()), Box::new(b.clone()))
    }

    /// True when odd symmetry holds by construction.
    pub fn is_odd(&self) -> bool {
        match self {
            Kernel::Zero | Kernel::Morse { .. } => true,
            Kernel::Windowed { inner, .. } => inner.is_odd(),
            Kernel::Difference(a, b) => a.is_odd() && b.is_odd(),
            Kernel::Tabulated { .. } => false,
        }
    }

    /// Evaluates the kernel at any angle, applying the seam convention.
    pub fn eval(&self, z: f64) -> f64 {
        let z = wrap_unchecked(z);
        if z + PI <= SEAM_TOLERANCE || PI - z <= SEAM_TOLERANCE {
            0.5 * (self.raw(PI) + self.raw(-PI))
        } else {
            self.raw(z)
        }
    }

    fn raw(&self, z: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Morse { strength, length } => morse_raw(z, *strength, *length),
            Kernel::Windowed { inner, radius } => {
                if z.abs() <= *radius {
                    inner.raw(z)
                } else {
                    0.0
                }
            }
            Kernel::Difference(a, b) => a.raw(z) - b.raw(z),
            Kernel::Tabulated { grid, values } => {
                // reuse field interpolation without cloning the samples
                let m = values.len();
                let s = (z + PI) / grid.cell_width();
                let k = s.floor();
                let frac = s - k;
                let k0 = (k as usize) % m;
                let k1 = (k0 + 1) % m;
                values[k0] * (1.0 - frac) + values[k1] * frac
            }
        }
    }

    /// Samples `f(x_k)` at the grid nodes, viewing the kernel as a function
    /// on `S`. This is the representation used for kernel norms.
    pub fn sample(&self, grid: RingGrid) -> RingField {
        RingField::from_fn(grid, |z| self.eval(z))
    }

    /// Kernel values at the lattice offsets `wrap(d·h)`, `d = 0..m`, the
    /// layout consumed by circular convolution.
    ///
    /// Offsets past the half-turn are formed as `-(m - d)·h` rather than by
    /// wrapping `d·h`, so odd kernels come out bitwise antisymmetric.
    pub fn offsets(&self, grid: RingGrid) -> Vec<f64> {
        let m = grid.len();
        let h = grid.cell_width();
        (0..m)
            .map(|d| {
                if 2 * d <= m {
                    self.eval(d as f64 * h)
                } else {
                    self.eval(-((m - d) as f64) * h)
                }
            })
            .collect()
    }
}

/// Restricts `f` to the sensing window `[-Δ, Δ]`.
pub fn window_kernel(f: &Kernel, delta: f64) -> Result<Kernel> {
    if !(delta > 0.0 && delta <= PI) {
        return Err(Error::param("delta", delta, "sensing radius must lie in (0, π]"));
    }
    Ok(Kernel::Windowed {
        inner: Box::new(f.clone()),
        radius: delta,
    })
}
