//! Feedback synthesis: the mass source `q`, the velocity field `U` that
//! realizes it, and per-agent sampling of `U`.
//!
//! The source is
//!
//! ```text
//! q = K_p·e - [e·V^d]_x - [ρ·V̂^e]_x + K_i·∫e dτ
//! ```
//!
//! with `V^d = f̃ ∗ ρ^d` and `V̂^e = window(f̃, Δ) ∗ e`. With `f̃ = f`,
//! `Δ = π` and `K_i = 0` it cancels the interaction terms of the error
//! dynamics exactly, leaving `e_t = -K_p·e`.
//!
//! `U` solves `[ρ·U]_x = -q` on the ring. A periodic solution exists only
//! when `∫q = 0`; among the one-parameter family the constant is fixed so
//! that `∫ρ·U = 0`.

use std::f64::consts::PI;

use crate::convolution::Convolver;
use crate::error::{Error, Result};
use crate::kernel::{window_kernel, Kernel};
use crate::ring::{RingField, RingGrid, TWO_PI};

/// Relative tolerance on `|∫q|` accepted by [`compute_u`].
pub const PERIODICITY_TOLERANCE: f64 = 1e-8;

/// Gains, sensing radius and synthesis kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    kp: f64,
    ki: f64,
    sensing_radius: f64,
    controller_kernel: Kernel,
    rho_floor: f64,
}

impl ControllerConfig {
    pub fn new(
        kp: f64,
        ki: f64,
        sensing_radius: f64,
        controller_kernel: Kernel,
        rho_floor: f64,
    ) -> Result<Self> {
        if !(kp > 0.0) || !kp.is_finite() {
            return Err(Error::param("kp", kp, "must be positive and finite"));
        }
        if !(ki >= 0.0) || !ki.is_finite() {
            return Err(Error::param("ki", ki, "must be non-negative and finite"));
        }
        if !(sensing_radius > 0.0 && sensing_radius <= PI) {
            return Err(Error::param(
                "sensing_radius",
                sensing_radius,
                "must lie in (0, π]",
            ));
        }
        if !(rho_floor > 0.0) || !rho_floor.is_finite() {
            return Err(Error::param(
                "rho_floor",
                rho_floor,
                "must be positive and finite",
            ));
        }
        Ok(Self {
            kp,
            ki,
            sensing_radius,
            controller_kernel,
            rho_floor,
        })
    }

    /// Full sensing, no integral action, synthesis with the plant kernel,
    /// and the density floor `10⁻³·N/2π`.
    pub fn nominal(plant: &Kernel, kp: f64, n_agents: f64) -> Result<Self> {
        Self::new(kp, 0.0, PI, plant.clone(), default_rho_floor(n_agents))
    }

    pub fn with_ki(self, ki: f64) -> Result<Self> {
        Self::new(
            self.kp,
            ki,
            self.sensing_radius,
            self.controller_kernel,
            self.rho_floor,
        )
    }

    pub fn with_sensing_radius(self, radius: f64) -> Result<Self> {
        Self::new(
            self.kp,
            self.ki,
            radius,
            self.controller_kernel,
            self.rho_floor,
        )
    }

    pub fn with_controller_kernel(self, kernel: Kernel) -> Result<Self> {
        Self::new(self.kp, self.ki, self.sensing_radius, kernel, self.rho_floor)
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn sensing_radius(&self) -> f64 {
        self.sensing_radius
    }

    pub fn controller_kernel(&self) -> &Kernel {
        &self.controller_kernel
    }

    pub fn rho_floor(&self) -> f64 {
        self.rho_floor
    }
}

pub fn default_rho_floor(n_agents: f64) -> f64 {
    1e-3 * n_agents / TWO_PI
}

/// Running integral `∫₀^t e dτ` with a symmetric anti-windup clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralState {
    accumulated: RingField,
    clamp: f64,
}

impl IntegralState {
    pub fn zeros(grid: RingGrid, clamp: f64) -> Result<Self> {
        if !(clamp > 0.0) {
            return Err(Error::param("clamp", clamp, "must be positive"));
        }
        Ok(Self {
            accumulated: RingField::zeros(grid),
            clamp,
        })
    }

    /// Zero accumulator clamped at `±10·N/2π`.
    pub fn for_mass(grid: RingGrid, n_agents: f64) -> Result<Self> {
        Self::zeros(grid, 10.0 * n_agents / TWO_PI)
    }

    pub fn field(&self) -> &RingField {
        &self.accumulated
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }
}

/// `I ← clamp(I + e·dt)`.
pub fn update_integral(integral: &IntegralState, e: &RingField, dt: f64) -> Result<IntegralState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", dt, "must be positive and finite"));
    }
    integral.accumulated.ensure_same_grid(e)?;
    let c = integral.clamp;
    let accumulated = integral
        .accumulated
        .zip_map(e, |i, e| (i + e * dt).clamp(-c, c));
    Ok(IntegralState {
        accumulated,
        clamp: c,
    })
}

/// A controller configuration prepared for one grid.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    synthesis: Convolver,
    sensing: Convolver,
}

impl Controller {
    pub fn new(config: ControllerConfig, grid: RingGrid) -> Result<Self> {
        let synthesis = Convolver::new(&config.controller_kernel, grid)?;
        let windowed = window_kernel(&config.controller_kernel, config.sensing_radius)?;
        let sensing = Convolver::new(&windowed, grid)?;
        Ok(Self {
            config,
            synthesis,
            sensing,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn compute_q(
        &self,
        e: &RingField,
        rho: &RingField,
        rho_d: &RingField,
        integral: &IntegralState,
    ) -> Result<RingField> {
        e.ensure_same_grid(rho)?;
        e.ensure_same_grid(rho_d)?;
        e.ensure_same_grid(&integral.accumulated)?;
        let v_d = self.synthesis.apply(rho_d)?;
        let v_e = self.sensing.apply(e)?;
        let mut q = e * self.config.kp;
        q -= &e.mul_pointwise(&v_d).derivative();
        q -= &rho.mul_pointwise(&v_e).derivative();
        if self.config.ki > 0.0 {
            q.axpy(self.config.ki, &integral.accumulated);
        }
        Ok(q)
    }

    pub fn compute_u(&self, q: &RingField, rho: &RingField) -> Result<RingField> {
        compute_u(q, rho, &self.config)
    }
}

/// `q` for the given configuration; see the module docs.
pub fn compute_q(
    e: &RingField,
    rho: &RingField,
    rho_d: &RingField,
    config: &ControllerConfig,
    integral: &IntegralState,
) -> Result<RingField> {
    Controller::new(config.clone(), e.grid())?.compute_q(e, rho, rho_d, integral)
}

/// Velocity field `U` with `[ρ·U]_x = -q` and `∫ρ·U = 0`.
///
/// The antiderivative `P(x) = ∫_{-π}^x q` is accumulated with the
/// trapezoidal rule, so the central difference of `ρ·U` reproduces `q`
/// up to `O(h²)`. Densities below the configured floor are raised to it.
pub fn compute_u(q: &RingField, rho: &RingField, config: &ControllerConfig) -> Result<RingField> {
    q.ensure_same_grid(rho)?;
    let residual = q.integral();
    let h = q.grid().cell_width();
    let scale = q.values().iter().map(|v| v.abs()).sum::<f64>() * h
        + config.kp * rho.values().iter().map(|v| v.abs()).sum::<f64>() * h;
    let tolerance = PERIODICITY_TOLERANCE * scale;
    if !(residual.abs() <= tolerance) {
        return Err(Error::NoPeriodicSolution {
            residual: residual.abs(),
            tolerance,
        });
    }
    // remove the admissible round-off so the antiderivative closes exactly
    let q = q.zero_mean();
    let qv = q.values();
    let m = qv.len();
    let mut p = Vec::with_capacity(m);
    let mut acc = 0.0;
    p.push(acc);
    for k in 1..m {
        acc += 0.5 * h * (qv[k - 1] + qv[k]);
        p.push(acc);
    }
    let c = -p.iter().sum::<f64>() / m as f64;
    let floor = config.rho_floor;
    let u = p
        .iter()
        .zip(rho.values())
        .map(|(&pk, &r)| -(c + pk) / r.max(floor))
        .collect();
    RingField::new(q.grid(), u)
}

/// `u_i = U(x_i)` by periodic linear interpolation.
pub fn sample_control(u: &RingField, positions: &[f64]) -> Vec<f64> {
    positions.iter().map(|&x| u.interpolate(x)).collect()
}

/// Which closed-form error dynamics to evaluate, with the data it needs.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorDynamicsMode {
    /// Plant kernel equals the synthesis kernel; only the sensing window
    /// differs: `e_t = -K_p·e + [ρ·(g ∗ e)]_x`, `g = f̂ - f`.
    LimitedSensing,
    /// Full sensing and matched kernels with an additive velocity
    /// disturbance sampled at the current time: `e_t = -K_p·e + [ρ·d]_x`.
    Disturbance(RingField),
    /// Synthesis kernel `f̃` differs from the plant kernel `f`:
    /// `e_t = -K_p·e + [e·Ũ^d]_x + [ρ·Ũ^e]_x` with `Ũ^d = g̃ ∗ ρ^d`,
    /// `Ũ^e = g̃ ∗ e` and `g̃ = f̃ - f`.
    KernelPerturbation { plant: Kernel },
}

/// Evaluates the closed-form error dynamics of a mode. `rho` must equal
/// `rho_d - e`; writing the forms with `ρ` folds the `ρ^d` and `e` terms
/// together. Integral action is not part of these forms.
pub fn error_rhs_closed_form(
    e: &RingField,
    rho_d: &RingField,
    rho: &RingField,
    config: &ControllerConfig,
    mode: &ErrorDynamicsMode,
) -> Result<RingField> {
    e.ensure_same_grid(rho_d)?;
    e.ensure_same_grid(rho)?;
    if config.ki > 0.0 {
        return Err(Error::UnsupportedRegime(
            "closed-form error dynamics exclude integral action".into(),
        ));
    }
    let grid = e.grid();
    let f_tilde = &config.controller_kernel;
    let mut rhs = e * -config.kp;
    match mode {
        ErrorDynamicsMode::LimitedSensing => {
            let windowed = window_kernel(f_tilde, config.sensing_radius)?;
            let g = Kernel::difference(&windowed, f_tilde);
            let v = Convolver::new(&g, grid)?.apply(e)?;
            rhs += &rho.mul_pointwise(&v).derivative();
        }
        ErrorDynamicsMode::Disturbance(d) => {
            d.ensure_same_grid(e)?;
            rhs += &rho.mul_pointwise(d).derivative();
        }
        ErrorDynamicsMode::KernelPerturbation { plant } => {
            let g = Convolver::new(&Kernel::difference(f_tilde, plant), grid)?;
            let u_d = g.apply(rho_d)?;
            let u_e = g.apply(e)?;
            rhs += &e.mul_pointwise(&u_d).derivative();
            rhs += &rho.mul_pointwise(&u_e).derivative();
        }
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::von_mises_field;
    use crate::ring::RingPosition;
    use crate::testutil::FourierSeries;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: f64 = 100.0;

    fn morse() -> Kernel {
        Kernel::morse(0.5, 0.5).unwrap()
    }

    fn grid() -> RingGrid {
        RingGrid::new(256).unwrap()
    }

    fn nominal(kp: f64) -> ControllerConfig {
        ControllerConfig::nominal(&morse(), kp, N).unwrap()
    }

    fn target(g: RingGrid) -> RingField {
        von_mises_field(RingPosition::default(), 4.0, N, g).unwrap()
    }

    /// Random positive density of mass `N`.
    fn random_density(seed: u64, g: RingGrid) -> RingField {
        let s = FourierSeries::random(&mut ChaCha8Rng::seed_from_u64(seed), 5);
        let f = s.positive(g, N / TWO_PI, 8.0);
        let scale = N / f.integral();
        f * scale
    }

    #[test]
    fn config_validation() {
        let f = morse();
        assert!(ControllerConfig::new(0.0, 0.0, PI, f.clone(), 1e-3).is_err());
        assert!(ControllerConfig::new(1.0, -1.0, PI, f.clone(), 1e-3).is_err());
        assert!(ControllerConfig::new(1.0, 0.0, 0.0, f.clone(), 1e-3).is_err());
        assert!(ControllerConfig::new(1.0, 0.0, 4.0, f.clone(), 1e-3).is_err());
        assert!(ControllerConfig::new(1.0, 0.0, PI, f, 0.0).is_err());
    }

    #[test]
    fn zero_error_gives_zero_source() {
        let g = grid();
        let i = IntegralState::for_mass(g, N).unwrap();
        let rd = target(g);
        let q = compute_q(&RingField::zeros(g), &rd, &rd, &nominal(10.0), &i).unwrap();
        assert_eq!(q.max_abs(), 0.0);
        let u = RingField::constant(g, N / TWO_PI);
        let e = &u - &u;
        let q = compute_q(&e, &u, &u, &nominal(10.0), &i).unwrap();
        assert_eq!(q.max_abs(), 0.0);
    }

    /// Oracle: rectangle-rule quadrature of q for random mass-matched pairs.
    #[test]
    fn source_has_zero_integral() {
        let g = grid();
        let i = IntegralState::for_mass(g, N).unwrap();
        for seed in 0..8 {
            let rho = random_density(seed, g);
            let rho_d = random_density(seed + 100, g);
            let e = &rho_d - &rho;
            for cfg in [
                nominal(10.0),
                nominal(100.0).with_sensing_radius(0.1 * PI).unwrap(),
            ] {
                let q = compute_q(&e, &rho, &rho_d, &cfg, &i).unwrap();
                assert!(q.integral().abs() < 1e-8 * N * cfg.kp());
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_velocity() {
        let g = grid();
        let u = compute_u(&RingField::zeros(g), &target(g), &nominal(10.0)).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    /// Oracle: the central difference of ρ·U against -q, which must agree
    /// to O(h²) on smooth inputs.
    #[test]
    fn velocity_realizes_source() {
        let g = grid();
        let h = g.cell_width();
        for seed in 0..5 {
            let rho = random_density(seed, g);
            let q = FourierSeries::random(&mut ChaCha8Rng::seed_from_u64(seed + 50), 4)
                .sample(g)
                .zero_mean();
            let u = compute_u(&q, &rho, &nominal(10.0)).unwrap();
            let flux = rho.mul_pointwise(&u);
            let residual = &flux.derivative() + &q;
            assert!(
                residual.max_abs() < 20.0 * h * h * q.max_abs().max(1.0),
                "{}",
                residual.max_abs()
            );
            assert!(flux.integral().abs() < 1e-10 * flux.max_abs().max(1.0));
        }
    }

    /// Oracle: uniform ρ = N/2π and q = K_p·sin x give
    /// ρU = cos x (times K_p) after fixing the zero-mean constant, so
    /// U = 2π·K_p·cos(x)/N.
    #[test]
    fn velocity_closed_form_antiderivative() {
        let g = grid();
        let kp = 10.0;
        let rho = RingField::constant(g, N / TWO_PI);
        let q = RingField::from_fn(g, |x| kp * x.sin());
        let u = compute_u(&q, &rho, &nominal(kp)).unwrap();
        let h = g.cell_width();
        for (k, x) in g.nodes().enumerate() {
            let exact = TWO_PI * kp * x.cos() / N;
            assert!((u.values()[k] - exact).abs() < 2.0 * h * h * kp);
        }
    }

    #[test]
    fn nonzero_mean_source_is_rejected() {
        let g = grid();
        let q = RingField::constant(g, 1.0);
        let err = compute_u(&q, &target(g), &nominal(10.0)).unwrap_err();
        assert!(matches!(err, Error::NoPeriodicSolution { .. }));
    }

    #[test]
    fn density_floor_bounds_velocity() {
        let g = grid();
        let cfg = nominal(10.0);
        let q = RingField::from_fn(g, |x| x.sin());
        let u = compute_u(&q, &RingField::zeros(g), &cfg).unwrap();
        assert!(u.values().iter().all(|v| v.is_finite()));
        assert!(u.max_abs() <= 2.0 / cfg.rho_floor());
    }

    #[test]
    fn sampling_examples() {
        let g = grid();
        assert!(sample_control(&RingField::zeros(g), &[0.1, -2.0])
            .iter()
            .all(|&v| v == 0.0));
        let u = RingField::from_fn(g, |x| x.sin() + 0.3 * (2.0 * x).cos());
        let nodes: Vec<f64> = (0..10).map(|k| g.node(k * 7)).collect();
        for (k, v) in sample_control(&u, &nodes).into_iter().enumerate() {
            assert_eq!(v, u.values()[k * 7]);
        }
    }

    /// Oracle: analytic field evaluated between nodes.
    #[test]
    fn sampling_error_is_second_order() {
        let analytic = |x: f64| x.sin() + 0.3 * (2.0 * x).cos();
        let err_at = |m: usize| {
            let g = RingGrid::new(m).unwrap();
            let u = RingField::from_fn(g, analytic);
            let xs: Vec<f64> = (0..97).map(|i| -PI + (i as f64 + 0.37) * TWO_PI / 97.0).collect();
            sample_control(&u, &xs)
                .iter()
                .zip(&xs)
                .map(|(v, &x)| (v - analytic(x)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err_at(64) / err_at(128);
        assert!(ratio > 3.0, "{ratio}");
    }

    #[test]
    fn integral_rectangle_rule() {
        let g = grid();
        let i0 = IntegralState::for_mass(g, N).unwrap();
        let i1 = update_integral(&i0, &RingField::zeros(g), 0.1).unwrap();
        assert_eq!(i1, i0);
        let e = RingField::constant(g, 0.7);
        let i2 = update_integral(&update_integral(&i0, &e, 0.01).unwrap(), &e, 0.01).unwrap();
        for v in i2.field().values() {
            assert!((v - 2.0 * 0.01 * 0.7).abs() < 1e-15);
        }
        assert!(update_integral(&i0, &e, 0.0).is_err());
    }

    /// Oracle: ∫₀^1 sin(τ)dτ = 1 - cos 1. The rectangle rule sampled at
    /// step midpoints is second order.
    #[test]
    fn integral_of_modulated_error() {
        let g = RingGrid::new(8).unwrap();
        let exact = 1.0 - 1.0f64.cos();
        let err_at = |steps: usize| {
            let dt = 1.0 / steps as f64;
            let mut i = IntegralState::for_mass(g, N).unwrap();
            for k in 0..steps {
                let t = (k as f64 + 0.5) * dt;
                i = update_integral(&i, &RingField::constant(g, t.sin()), dt).unwrap();
            }
            (i.field().values()[0] - exact).abs()
        };
        let (a, b) = (err_at(50), err_at(100));
        assert!(b < 1e-4 && a / b > 3.5, "{a} {b}");
    }

    #[test]
    fn integral_clamp() {
        let g = grid();
        let i = IntegralState::zeros(g, 1.0).unwrap();
        let i = update_integral(&i, &RingField::constant(g, 50.0), 1.0).unwrap();
        assert!(i.field().values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn closed_form_zero_error() {
        let g = grid();
        let rd = target(g);
        let z = RingField::zeros(g);
        let modes = [
            ErrorDynamicsMode::LimitedSensing,
            ErrorDynamicsMode::Disturbance(z.clone()),
            ErrorDynamicsMode::KernelPerturbation {
                plant: Kernel::morse(0.1, 0.1).unwrap(),
            },
        ];
        for mode in modes {
            let r = error_rhs_closed_form(&z, &rd, &rd, &nominal(10.0), &mode).unwrap();
            assert_eq!(r.max_abs(), 0.0);
        }
    }

    #[test]
    fn full_sensing_reduces_to_proportional_decay() {
        let g = grid();
        let rd = target(g);
        let rho = random_density(3, g);
        let e = &rd - &rho;
        let r = error_rhs_closed_form(
            &e,
            &rd,
            &rho,
            &nominal(10.0),
            &ErrorDynamicsMode::LimitedSensing,
        )
        .unwrap();
        assert!((&r - &(&e * -10.0)).max_abs() < 1e-12);
    }

    /// The two residual velocities of the perturbed-kernel dynamics: the
    /// error term `Ṽ^e - V^e` must coincide with `g̃ ∗ e`.
    #[test]
    fn perturbed_kernel_error_velocity() {
        let g = grid();
        let f = morse();
        let f2 = Kernel::morse(0.9, 0.9).unwrap();
        let e = &target(g) - &random_density(4, g);
        let tilde = Convolver::new(&f2, g).unwrap().apply(&e).unwrap();
        let plain = Convolver::new(&f, g).unwrap().apply(&e).unwrap();
        let direct = Convolver::new(&Kernel::difference(&f2, &f), g)
            .unwrap()
            .apply(&e)
            .unwrap();
        assert!((&(&tilde - &plain) - &direct).max_abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn discrete_flux_identity(seed in 0u64..1_000, kp in 1.0f64..200.0) {
            let g = RingGrid::new(128).unwrap();
            let rho = random_density(seed, g);
            let rho_d = random_density(seed + 7, g);
            let e = &rho_d - &rho;
            let cfg = nominal(kp);
            let q = compute_q(&e, &rho, &rho_d, &cfg, &IntegralState::for_mass(g, N).unwrap()).unwrap();
            prop_assert!(q.integral().abs() < 1e-8 * N * kp);
            let u = compute_u(&q, &rho, &cfg).unwrap();
            // the trapezoid antiderivative reproduces a three-point average of q
            let flux = rho.mul_pointwise(&u).derivative();
            let qv = q.zero_mean();
            let m = qv.len();
            for k in 0..m {
                let avg = 0.25 * (qv.values()[(k + m - 1) % m] + 2.0 * qv.values()[k] + qv.values()[(k + 1) % m]);
                prop_assert!((flux.values()[k] + avg).abs() < 1e-8 * (1.0 + qv.max_abs()));
            }
        }
    }
}
