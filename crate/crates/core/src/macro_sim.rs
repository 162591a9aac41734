//! Macroscopic density dynamics on the ring.
//!
//! The plant density evolves under the mass balance
//! `ρ_t + [ρ(V + U + d)]_x = q` with `V = f ∗ ρ`, and the desired density
//! under the reference dynamics `ρ^d_t + [ρ^d V^d]_x = 0`.
//!
//! Space is discretized with a conservative finite-volume scheme on the
//! grid nodes. The interface flux is Lax–Friedrichs,
//!
//! ```text
//! F_{k+1/2} = ½(ρ_k v_k + ρ_{k+1} v_{k+1}) - ½ α (ρ_{k+1} - ρ_k)
//! ```
//!
//! whose centred part is exactly the central difference used by the
//! controller. When the plant and the reference are advanced together they
//! share one dissipation speed `α`, so the numerical viscosity acts on the
//! tracking error `e = ρ^d - ρ` as a pure diffusion `(αh/2)·e_xx`. Time
//! stepping is the explicit midpoint rule under
//! `dt ≤ cfl·h / max|v|` with `cfl = 0.5` by default.

use std::f64::consts::PI;

use crate::convolution::Convolver;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::ring::{RingField, RingGrid};

pub const DEFAULT_CFL: f64 = 0.5;

/// Clipped negative mass, relative to the total, at which a run aborts.
pub const CLIP_LIMIT_FRACTION: f64 = 1e-4;

/// Plant and desired densities at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub rho: RingField,
    pub rho_d: RingField,
    pub t: f64,
    /// Total negative mass removed by clipping so far.
    pub clipped_mass: f64,
}

impl MacroState {
    pub fn new(rho: RingField, rho_d: RingField) -> Result<Self> {
        rho.ensure_same_grid(&rho_d)?;
        Ok(Self {
            rho,
            rho_d,
            t: 0.0,
            clipped_mass: 0.0,
        })
    }

    pub fn grid(&self) -> RingGrid {
        self.rho.grid()
    }
}

/// `e = ρ^d - ρ`.
pub fn error_field(state: &MacroState) -> RingField {
    &state.rho_d - &state.rho
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DisturbanceRule {
    None,
    /// `amplitude · step(t - switch_time)`, constant in space.
    Step { amplitude: f64, switch_time: f64 },
    /// `amplitude · sin(n·x - ω·t)`.
    Travelling {
        amplitude: f64,
        wavenumber: u32,
        angular_speed: f64,
    },
}

/// Additive velocity disturbance `d(x, t)` with bounds `D1 ≥ ‖d‖_∞` and
/// `D2 ≥ ‖d_x‖_∞` valid over any horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceField {
    rule: DisturbanceRule,
}

impl DisturbanceField {
    pub fn none() -> Self {
        Self {
            rule: DisturbanceRule::None,
        }
    }

    pub fn step(amplitude: f64, switch_time: f64) -> Result<Self> {
        if !amplitude.is_finite() || !switch_time.is_finite() {
            return Err(Error::InvalidArgument(
                "step disturbance parameters must be finite".into(),
            ));
        }
        Ok(Self {
            rule: DisturbanceRule::Step {
                amplitude,
                switch_time,
            },
        })
    }

    pub fn travelling_wave(amplitude: f64, wavenumber: u32, angular_speed: f64) -> Result<Self> {
        if !amplitude.is_finite() || !angular_speed.is_finite() {
            return Err(Error::InvalidArgument(
                "travelling-wave parameters must be finite".into(),
            ));
        }
        Ok(Self {
            rule: DisturbanceRule::Travelling {
                amplitude,
                wavenumber,
                angular_speed,
            },
        })
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        match self.rule {
            DisturbanceRule::None => 0.0,
            DisturbanceRule::Step {
                amplitude,
                switch_time,
            } => {
                if t >= switch_time {
                    amplitude
                } else {
                    0.0
                }
            }
            DisturbanceRule::Travelling {
                amplitude,
                wavenumber,
                angular_speed,
            } => amplitude * (wavenumber as f64 * x - angular_speed * t).sin(),
        }
    }

    /// Samples `d(·, t)` on the grid, checking the seam values agree.
    pub fn field(&self, grid: RingGrid, t: f64) -> RingField {
        let seam_gap = (self.value(-PI, t) - self.value(PI, t)).abs();
        assert!(
            seam_gap <= 1e-12 * (1.0 + self.sup_norm()),
            "disturbance is not periodic: d(-π) - d(π) = {seam_gap}"
        );
        RingField::from_fn(grid, |x| self.value(x, t))
    }

    pub fn is_zero(&self) -> bool {
        match self.rule {
            DisturbanceRule::None => true,
            DisturbanceRule::Step { amplitude, .. }
            | DisturbanceRule::Travelling { amplitude, .. } => amplitude == 0.0,
        }
    }

    /// `D1`, a bound on `‖d‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self.rule {
            DisturbanceRule::None => 0.0,
            DisturbanceRule::Step { amplitude, .. }
            | DisturbanceRule::Travelling { amplitude, .. } => amplitude.abs(),
        }
    }

    /// `D2`, a bound on `‖d_x‖_∞`.
    pub fn gradient_sup_norm(&self) -> f64 {
        match self.rule {
            DisturbanceRule::None | DisturbanceRule::Step { .. } => 0.0,
            DisturbanceRule::Travelling {
                amplitude,
                wavenumber,
                ..
            } => amplitude.abs() * wavenumber as f64,
        }
    }

    /// Instant at which the disturbance jumps, if any; integrators land a
    /// step boundary on it.
    pub fn switch_time(&self) -> Option<f64> {
        match self.rule {
            DisturbanceRule::Step { switch_time, .. } => Some(switch_time),
            _ => None,
        }
    }
}

/// Control applied to the plant over one step (held constant).
#[derive(Debug, Clone, PartialEq)]
pub enum ControlInput {
    None,
    /// Mass source `q` on the right-hand side.
    Source(RingField),
    /// Velocity field `U` added to the transport velocity.
    Velocity(RingField),
}

/// `-(F_{k+1/2} - F_{k-1/2}) / h` with Lax–Friedrichs fluxes of `ρ·v` and
/// dissipation speed `alpha`.
pub fn transport_rate(rho: &RingField, velocity: &RingField, alpha: f64) -> RingField {
    let m = rho.len();
    let h = rho.grid().cell_width();
    let r = rho.values();
    let v = velocity.values();
    let flux: Vec<f64> = (0..m)
        .map(|k| {
            let k1 = (k + 1) % m;
            0.5 * (r[k] * v[k] + r[k1] * v[k1]) - 0.5 * alpha * (r[k1] - r[k])
        })
        .collect();
    let out = (0..m)
        .map(|k| -(flux[k] - flux[(k + m - 1) % m]) / h)
        .collect();
    RingField::new(rho.grid(), out).expect("same grid")
}

/// Clips negative samples to zero, returning the removed mass.
pub(crate) fn clip_negative(rho: &mut RingField) -> f64 {
    let h = rho.grid().cell_width();
    let mut removed = 0.0;
    for v in rho.values_mut() {
        if *v < 0.0 {
            removed -= *v * h;
            *v = 0.0;
        }
    }
    removed
}

/// Plant kernel prepared on a grid, with the explicit midpoint integrator.
#[derive(Debug, Clone)]
pub struct MacroSolver {
    grid: RingGrid,
    plant: Convolver,
    cfl: f64,
}

impl MacroSolver {
    pub fn new(kernel: &Kernel, grid: RingGrid) -> Result<Self> {
        Ok(Self {
            grid,
            plant: Convolver::new(kernel, grid)?,
            cfl: DEFAULT_CFL,
        })
    }

    pub fn with_cfl(mut self, cfl: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::param("cfl", cfl, "must lie in (0, 1]"));
        }
        self.cfl = cfl;
        Ok(self)
    }

    pub fn grid(&self) -> RingGrid {
        self.grid
    }

    pub fn cfl(&self) -> f64 {
        self.cfl
    }

    pub fn plant(&self) -> &Convolver {
        &self.plant
    }

    /// `V = f ∗ ρ`.
    pub fn velocity(&self, rho: &RingField) -> Result<RingField> {
        self.plant.apply(rho)
    }

    /// Largest dt allowed by the CFL condition for a transport speed.
    pub fn cfl_dt(&self, max_speed: f64) -> f64 {
        if max_speed > 0.0 {
            self.cfl * self.grid.cell_width() / max_speed
        } else {
            f64::INFINITY
        }
    }

    fn check_dt(dt: f64, admissible: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", dt, "must be positive and finite"));
        }
        if dt > admissible * (1.0 + 1e-9) {
            return Err(Error::StepRejected {
                requested: dt,
                admissible,
            });
        }
        Ok(())
    }

    fn plant_velocity(
        &self,
        rho: &RingField,
        control: &ControlInput,
        disturbance: &DisturbanceField,
        t: f64,
    ) -> Result<RingField> {
        let mut v = self.plant.apply(rho)?;
        if !disturbance.is_zero() {
            v += &disturbance.field(self.grid, t);
        }
        if let ControlInput::Velocity(u) = control {
            u.ensure_same_grid(rho)?;
            v += u;
        }
        Ok(v)
    }

    /// Time derivatives of `(ρ, ρ^d)` under a fixed control, with the
    /// shared dissipation speed `max(|v|, |V^d|)`.
    pub fn rates(
        &self,
        rho: &RingField,
        rho_d: &RingField,
        control: &ControlInput,
        disturbance: &DisturbanceField,
        t: f64,
    ) -> Result<(RingField, RingField)> {
        let v = self.plant_velocity(rho, control, disturbance, t)?;
        let vd = self.plant.apply(rho_d)?;
        let alpha = v.max_abs().max(vd.max_abs());
        let mut rate = transport_rate(rho, &v, alpha);
        if let ControlInput::Source(q) = control {
            q.ensure_same_grid(rho)?;
            rate += q;
        }
        Ok((rate, transport_rate(rho_d, &vd, alpha)))
    }

    /// Admissible dt for [`MacroSolver::step_controlled`] from the current
    /// state.
    pub fn admissible_dt(
        &self,
        state: &MacroState,
        control: &ControlInput,
        disturbance: &DisturbanceField,
    ) -> Result<f64> {
        let v = self.plant_velocity(&state.rho, control, disturbance, state.t)?;
        let vd = self.plant.apply(&state.rho_d)?;
        Ok(self.cfl_dt(v.max_abs().max(vd.max_abs())))
    }

    /// Advances the plant and the reference together by one midpoint step,
    /// holding the control fixed over the step.
    ///
    /// The mass change of `ρ` equals `dt·∫q` up to round-off (plus any
    /// clipped negative mass, which is tracked on the state).
    pub fn step_controlled(
        &self,
        state: &MacroState,
        control: &ControlInput,
        disturbance: &DisturbanceField,
        dt: f64,
    ) -> Result<MacroState> {
        self.grid.check_same(&state.grid())?;
        let admissible = self.admissible_dt(state, control, disturbance)?;
        Self::check_dt(dt, admissible)?;

        let (r1, rd1) =
            self.rates(&state.rho, &state.rho_d, control, disturbance, state.t)?;
        let mut rho_mid = state.rho.clone();
        rho_mid.axpy(0.5 * dt, &r1);
        let mut rho_d_mid = state.rho_d.clone();
        rho_d_mid.axpy(0.5 * dt, &rd1);

        let (r2, rd2) = self.rates(
            &rho_mid,
            &rho_d_mid,
            control,
            disturbance,
            state.t + 0.5 * dt,
        )?;
        let mut rho = state.rho.clone();
        rho.axpy(dt, &r2);
        let mut rho_d = state.rho_d.clone();
        rho_d.axpy(dt, &rd2);

        let clipped = state.clipped_mass + clip_negative(&mut rho) + clip_negative(&mut rho_d);
        let limit = CLIP_LIMIT_FRACTION * state.rho_d.integral().abs();
        if clipped > limit {
            return Err(Error::ExcessiveClipping { clipped, limit });
        }
        Ok(MacroState {
            rho,
            rho_d,
            t: state.t + dt,
            clipped_mass: clipped,
        })
    }

    /// Advances the reference density alone by one midpoint step.
    pub fn step_reference(&self, rho_d: &RingField, dt: f64) -> Result<RingField> {
        self.grid.check_same(&rho_d.grid())?;
        let vd = self.plant.apply(rho_d)?;
        Self::check_dt(dt, self.cfl_dt(vd.max_abs()))?;
        let rate = |r: &RingField| -> Result<RingField> {
            let v = self.plant.apply(r)?;
            Ok(transport_rate(r, &v, v.max_abs()))
        };
        let mut mid = rho_d.clone();
        mid.axpy(0.5 * dt, &rate(rho_d)?);
        let mut out = rho_d.clone();
        out.axpy(dt, &rate(&mid)?);
        Ok(out)
    }
}

/// `V = f ∗ ρ`.
pub fn velocity_field(kernel: &Kernel, rho: &RingField) -> Result<RingField> {
    Convolver::new(kernel, rho.grid())?.apply(rho)
}

/// One midpoint step of the controlled plant together with the reference.
pub fn step_controlled(
    state: &MacroState,
    kernel: &Kernel,
    control: &ControlInput,
    disturbance: &DisturbanceField,
    dt: f64,
) -> Result<MacroState> {
    MacroSolver::new(kernel, state.grid())?.step_controlled(state, control, disturbance, dt)
}

/// One midpoint step of the reference dynamics.
pub fn step_reference(rho_d: &RingField, kernel: &Kernel, dt: f64) -> Result<RingField> {
    MacroSolver::new(kernel, rho_d.grid())?.step_reference(rho_d, dt)
}
