//! Numerical checks of the Lyapunov inequalities satisfied by
//! `η = ‖e‖₂²` along closed-loop runs.
//!
//! The time derivative of `η` is estimated from the sampled trajectory by
//! central differences on the (nonuniform) step times, three-point
//! one-sided at the ends. A sample violates an inequality when `lhs > rhs + tol`, with
//! `tol = 10⁻³·max|rhs| + 10⁻⁸`.

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::kernel::{window_kernel, Kernel};
use crate::macro_sim::DisturbanceField;
use crate::ring::RingGrid;

pub const RELATIVE_TOLERANCE: f64 = 1e-3;
pub const ABSOLUTE_TOLERANCE: f64 = 1e-8;

/// Norm bounds entering the inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `M ≥ ‖ρ^d‖₂` over the horizon.
    pub m: f64,
    /// `L ≥ ‖ρ^d_x‖₂` over the horizon.
    pub l: f64,
    /// `D1 ≥ ‖d‖_∞`.
    pub d1: f64,
    /// `D2 ≥ ‖d_x‖_∞`.
    pub d2: f64,
    /// `‖g‖₂` with `g = f̂ - f`.
    pub g_norm: f64,
    pub gx_norm: f64,
    /// `‖g̃‖₂` with `g̃ = f̃ - f`.
    pub gtilde_norm: f64,
    pub gtildex_norm: f64,
}

impl BoundConstants {
    /// Measures the constants of a run: `M` and `L` as running maxima of
    /// the sampled reference norms, `D1`/`D2` from the disturbance, and the
    /// kernel-difference norms on the run's grid.
    pub fn measure(
        rho_d_l2: &[f64],
        rho_d_x_l2: &[f64],
        disturbance: &DisturbanceField,
        plant: &Kernel,
        config: &ControllerConfig,
        grid: RingGrid,
    ) -> Result<Self> {
        let windowed = window_kernel(plant, config.sensing_radius())?;
        let (g_norm, gx_norm) = kernel_norms(&Kernel::difference(&windowed, plant), grid);
        let (gtilde_norm, gtildex_norm) =
            kernel_norms(&Kernel::difference(config.controller_kernel(), plant), grid);
        Ok(Self {
            m: rho_d_l2.iter().copied().fold(0.0, f64::max),
            l: rho_d_x_l2.iter().copied().fold(0.0, f64::max),
            d1: disturbance.sup_norm(),
            d2: disturbance.gradient_sup_norm(),
            g_norm,
            gx_norm,
            gtilde_norm,
            gtildex_norm,
        })
    }

    /// `a = 2K_p - D2` and `c = 2L·D1 + 2M·D2`.
    pub fn disturbance_coefficients(&self, kp: f64) -> (f64, f64) {
        (
            2.0 * kp - self.d2,
            2.0 * self.l * self.d1 + 2.0 * self.m * self.d2,
        )
    }
}

/// `(‖k‖₂, ‖k_x‖₂)` of a kernel sampled on the grid, with the central
/// difference for `k_x`. Jumps of the periodic kernel show up as large but
/// finite derivative norms.
pub fn kernel_norms(kernel: &Kernel, grid: RingGrid) -> (f64, f64) {
    let s = kernel.sample(grid);
    (s.l2(), s.derivative().l2())
}

/// Which inequality a run is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    LimitedSensing,
    Disturbance,
    KernelPerturbation,
}

impl BoundKind {
    /// The inequality covering a configuration, if any. Integral action and
    /// combined perturbations fall outside every theorem. The nominal case
    /// is the limited-sensing inequality with `g ≡ 0`.
    pub fn applicable(
        plant: &Kernel,
        config: &ControllerConfig,
        disturbance: &DisturbanceField,
    ) -> Option<Self> {
        if config.ki() > 0.0 {
            return None;
        }
        let full_sensing = config.sensing_radius() >= std::f64::consts::PI;
        let matched = config.controller_kernel() == plant;
        match (disturbance.is_zero(), matched, full_sensing) {
            (true, true, _) => Some(BoundKind::LimitedSensing),
            (true, false, true) => Some(BoundKind::KernelPerturbation),
            (false, true, true) => Some(BoundKind::Disturbance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub t: f64,
    /// Estimated `dη/dt`.
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `rhs - lhs`.
    pub margin: f64,
}

/// `η(t) ≤ v(t)` with `v` the comparison solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domination {
    pub violations: usize,
    pub max_excess: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// False when a precondition of the theorem fails; nothing is checked
    /// then and `records` is empty.
    pub hypothesis_met: bool,
    pub tolerance: f64,
    pub records: Vec<BoundRecord>,
    pub violations: usize,
    pub domination: Option<Domination>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.domination.is_none_or(|d| d.violations == 0)
    }
}

/// `dy/dt` on strictly increasing sample times: second-order central
/// differences inside, second-order one-sided (three-point) differences at
/// the ends.
pub fn time_derivative(t: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if t.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} times for {} values",
            t.len(),
            y.len()
        )));
    }
    let n = t.len();
    if n < 3 {
        return Err(Error::TrajectoryTooShort { len: n });
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "sample times must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    out.push(
        -(2.0 * h1 + h2) / (h1 * (h1 + h2)) * y[0] + (h1 + h2) / (h1 * h2) * y[1]
            - h1 / (h2 * (h1 + h2)) * y[2],
    );
    for i in 1..n - 1 {
        let hm = t[i] - t[i - 1];
        let hp = t[i + 1] - t[i];
        out.push(
            (hm * hm * (y[i + 1] - y[i]) + hp * hp * (y[i] - y[i - 1])) / (hm * hp * (hm + hp)),
        );
    }
    let (h1, h2) = (t[n - 1] - t[n - 2], t[n - 2] - t[n - 3]);
    out.push(
        (2.0 * h1 + h2) / (h1 * (h1 + h2)) * y[n - 1] - (h1 + h2) / (h1 * h2) * y[n - 2]
            + h1 / (h2 * (h1 + h2)) * y[n - 3],
    );
    Ok(out)
}

fn compare(
    kind: BoundKind,
    t: &[f64],
    err_l2: &[f64],
    rhs_of: impl Fn(f64) -> f64,
) -> Result<BoundReport> {
    let eta: Vec<f64> = err_l2.iter().map(|e| e * e).collect();
    let lhs = time_derivative(t, &eta)?;
    let rhs: Vec<f64> = err_l2.iter().map(|&e| rhs_of(e)).collect();
    let tolerance =
        RELATIVE_TOLERANCE * rhs.iter().fold(0.0, |a: f64, r| a.max(r.abs())) + ABSOLUTE_TOLERANCE;
    let records: Vec<BoundRecord> = t
        .iter()
        .zip(lhs.iter().zip(&rhs))
        .map(|(&t, (&l, &r))| BoundRecord {
            t,
            lhs: l,
            rhs: r,
            satisfied: l <= r + tolerance,
            margin: r - l,
        })
        .collect();
    let violations = records.iter().filter(|r| !r.satisfied).count();
    Ok(BoundReport {
        kind,
        hypothesis_met: true,
        tolerance,
        records,
        violations,
        domination: None,
    })
}

/// `dη/dt ≤ (-2K_p + 2M‖g_x‖₂ + 2L‖g‖₂ + ‖g_x‖₂‖e‖₂)·‖e‖₂²`.
pub fn check_limited_sensing_inequality(
    t: &[f64],
    err_l2: &[f64],
    c: &BoundConstants,
    kp: f64,
) -> Result<BoundReport> {
    compare(BoundKind::LimitedSensing, t, err_l2, |e| {
        (-2.0 * kp + 2.0 * c.m * c.gx_norm + 2.0 * c.l * c.g_norm + c.gx_norm * e) * e * e
    })
}

/// `dη/dt ≤ (-2K_p + 3M‖g̃_x‖₂ + 2L‖g̃‖₂ + ‖g̃_x‖₂‖e‖₂)·‖e‖₂²`.
pub fn check_kernel_perturbation_inequality(
    t: &[f64],
    err_l2: &[f64],
    c: &BoundConstants,
    kp: f64,
) -> Result<BoundReport> {
    compare(BoundKind::KernelPerturbation, t, err_l2, |e| {
        (-2.0 * kp + 3.0 * c.m * c.gtildex_norm + 2.0 * c.l * c.gtilde_norm + c.gtildex_norm * e)
            * e
            * e
    })
}

/// `dη/dt ≤ -a·η + c·√η`, plus domination of `η` by the comparison
/// solution started at `η(0)`. Requires `2K_p > D2`.
pub fn check_disturbance_inequality(
    t: &[f64],
    err_l2: &[f64],
    c: &BoundConstants,
    kp: f64,
) -> Result<BoundReport> {
    let (a, cc) = c.disturbance_coefficients(kp);
    if !(a > 0.0) {
        if t.len() < 3 {
            return Err(Error::TrajectoryTooShort { len: t.len() });
        }
        return Ok(BoundReport {
            kind: BoundKind::Disturbance,
            hypothesis_met: false,
            tolerance: 0.0,
            records: Vec::new(),
            violations: 0,
            domination: None,
        });
    }
    let mut report = compare(BoundKind::Disturbance, t, err_l2, |e| -a * e * e + cc * e)?;
    let eta0 = err_l2[0] * err_l2[0];
    let t0 = t[0];
    let shifted: Vec<f64> = t.iter().map(|s| s - t0).collect();
    let envelope = comparison_envelope(a, cc, eta0, &shifted)?;
    let tolerance = RELATIVE_TOLERANCE * envelope.iter().fold(0.0, |m: f64, v| m.max(*v))
        + ABSOLUTE_TOLERANCE;
    let excess: Vec<f64> = err_l2
        .iter()
        .zip(&envelope)
        .map(|(e, v)| e * e - v)
        .collect();
    report.domination = Some(Domination {
        violations: excess.iter().filter(|&&x| x > tolerance).count(),
        max_excess: excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        tolerance,
    });
    Ok(report)
}

/// Runs the check that matches `kind`.
pub fn check(
    kind: BoundKind,
    t: &[f64],
    err_l2: &[f64],
    c: &BoundConstants,
    kp: f64,
) -> Result<BoundReport> {
    match kind {
        BoundKind::LimitedSensing => check_limited_sensing_inequality(t, err_l2, c, kp),
        BoundKind::Disturbance => check_disturbance_inequality(t, err_l2, c, kp),
        BoundKind::KernelPerturbation => check_kernel_perturbation_inequality(t, err_l2, c, kp),
    }
}

/// Equilibrium `c²/a²` of the comparison system, the asymptotic bound on
/// `‖e‖₂²` under a disturbance.
pub fn steady_state_bound(c: &BoundConstants, kp: f64) -> Result<f64> {
    let (a, cc) = c.disturbance_coefficients(kp);
    if !(a > 0.0) {
        return Err(Error::UnsupportedRegime(format!(
            "hypothesis 2·K_p > D2 not met (K_p = {kp}, D2 = {})",
            c.d2
        )));
    }
    Ok((cc / a).powi(2))
}

/// Solves `v_t = -a·v + c·√v`, `v(0) = v0`, at `samples + 1` evenly spaced
/// times over `[0, horizon]`.
pub fn comparison_ode_solve(
    a: f64,
    c: f64,
    v0: f64,
    horizon: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(horizon >= 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(
            "horizon must be non-negative and at least one sample requested".into(),
        ));
    }
    let times: Vec<f64> = (0..=samples)
        .map(|k| horizon * k as f64 / samples as f64)
        .collect();
    let v = comparison_envelope(a, c, v0, &times)?;
    Ok(times.into_iter().zip(v).collect())
}

/// Comparison solution at the given nondecreasing times (from `t = 0`).
///
/// Integrated with classical RK4 in `w = √v`, where the equation becomes
/// `w_t = (c - a·w)/2`. This is smooth at `v = 0`, where `√v` is not
/// Lipschitz, and picks the maximal solution there.
pub fn comparison_envelope(a: f64, c: f64, v0: f64, times: &[f64]) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::UnsupportedRegime(format!(
            "comparison system needs a > 0, got {a}"
        )));
    }
    if !(c >= 0.0) || !(v0 >= 0.0) {
        return Err(Error::InvalidArgument(
            "comparison system needs c ≥ 0 and v(0) ≥ 0".into(),
        ));
    }
    let rate = |w: f64| 0.5 * (c - a * w);
    let max_step = 0.01 / a;
    let mut w = v0.sqrt();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        if target < now {
            return Err(Error::InvalidInput("times must be nondecreasing".into()));
        }
        let span = target - now;
        let steps = (span / max_step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        if h > 0.0 {
            for _ in 0..steps {
                let k1 = rate(w);
                let k2 = rate(w + 0.5 * h * k1);
                let k3 = rate(w + 0.5 * h * k2);
                let k4 = rate(w + h * k3);
                w += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        now = target;
        out.push(w * w);
    }
    Ok(out)
}

/// Smallest `K_p` for which the limited-sensing result guarantees decay
/// from an initial error of norm `gamma`.
pub fn limited_sensing_gain_threshold(c: &BoundConstants, gamma: f64) -> f64 {
    (c.m + 0.5 * gamma) * c.gx_norm + c.l * c.g_norm
}

/// Smallest `K_p` for which the perturbed-kernel result guarantees decay
/// from an initial error of norm `gamma`.
pub fn kernel_perturbation_gain_threshold(c: &BoundConstants, gamma: f64) -> f64 {
    0.5 * c.gtildex_norm * gamma + 1.5 * c.m * c.gtildex_norm + c.l * c.gtilde_norm
}

/// True when no sample exceeds its predecessor by more than
/// `rel·previous + abs`.
pub fn is_non_increasing(values: &[f64], rel: f64, abs: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel) + abs)
}
