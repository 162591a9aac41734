//! Closed-loop drivers: the controlled density PDE, and agents steered by
//! the continuum controller through a density estimate.
//!
//! Both drivers record one [`Sample`] per step (plus the initial state) and
//! optional [`Snapshot`]s of the fields.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::{
    sample_control, update_integral, Controller, ControllerConfig, IntegralState,
};
use crate::density::kl_divergence;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::macro_sim::{
    clip_negative, ControlInput, DisturbanceField, MacroSolver, MacroState, CLIP_LIMIT_FRACTION,
};
use crate::micro::{advance_agents, default_bandwidth, estimate_density, AgentEnsemble};
use crate::ring::{RingField, RingGrid};

/// Which model the controller drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopMode {
    /// The density PDE with the control as a mass source.
    Macro,
    /// `N` agents sampling the velocity field computed from their
    /// estimated density.
    Micro,
}

impl FromStr for LoopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(LoopMode::Macro),
            "micro" => Ok(LoopMode::Micro),
            other => Err(Error::InvalidArgument(format!(
                "unknown loop mode `{other}`, expected `macro` or `micro`"
            ))),
        }
    }
}

impl fmt::Display for LoopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopMode::Macro => "macro",
            LoopMode::Micro => "micro",
        })
    }
}

/// Time stepping and recording options.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub horizon: f64,
    pub dt_max: f64,
    /// Courant number for the density transport and, in micro mode, the
    /// fraction of a cell an agent may travel per step.
    pub cfl: f64,
    /// Micro mode recomputes `U` every this many steps.
    pub control_cadence: usize,
    /// Fixed KDE bandwidth; `None` uses [`default_bandwidth`].
    pub bandwidth: Option<f64>,
    /// Bound on `K_p·dt`. Stability needs at most about 0.5; the bound
    /// checks need much less, because the midpoint rule decays `‖e‖₂²`
    /// slower than `exp(-2K_p t)` by a relative `(K_p·dt)²/6`.
    pub reaction_limit: f64,
    /// Anti-windup bound on the integral state; `None` uses `10·N/2π`.
    pub integral_clamp: Option<f64>,
    pub snapshot_times: Vec<f64>,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            horizon: 6.0,
            dt_max: 0.01,
            cfl: 0.5,
            control_cadence: 1,
            bandwidth: None,
            reaction_limit: 0.5,
            integral_clamp: None,
            snapshot_times: Vec::new(),
        }
    }
}

/// Per-step record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub err_l2: f64,
    pub kl: f64,
    pub mass: f64,
    pub rho_d_l2: f64,
    /// `‖ρ^d_x‖₂` with the central difference.
    pub rho_d_x_l2: f64,
}

/// Field values at one instant, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub rho: RingField,
    pub rho_d: RingField,
    pub u: RingField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: LoopMode,
    pub samples: Vec<Sample>,
    pub snapshots: Vec<Snapshot>,
    pub clipped_mass: f64,
    /// Largest `|∫q|` removed before realizing `q` in integral mode.
    pub max_projected_residual: f64,
}

impl RunRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn err_l2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.err_l2).collect()
    }

    pub fn terminal(&self) -> &Sample {
        self.samples.last().expect("a run records its initial sample")
    }
}

/// A plant, controller and disturbance prepared on one grid.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    plant: Kernel,
    controller: Controller,
    disturbance: DisturbanceField,
    solver: MacroSolver,
    n_agents: f64,
    settings: LoopSettings,
}

impl ClosedLoop {
    pub fn new(
        plant: Kernel,
        config: ControllerConfig,
        disturbance: DisturbanceField,
        grid: RingGrid,
        n_agents: usize,
        settings: LoopSettings,
    ) -> Result<Self> {
        if !(settings.horizon >= 0.0) || !settings.horizon.is_finite() {
            return Err(Error::param(
                "horizon",
                settings.horizon,
                "must be finite and non-negative",
            ));
        }
        if !(settings.dt_max > 0.0) {
            return Err(Error::param("dt_max", settings.dt_max, "must be positive"));
        }
        if !(settings.cfl > 0.0 && settings.cfl < 1.0) {
            return Err(Error::param("cfl", settings.cfl, "must lie in (0, 1)"));
        }
        if !(settings.reaction_limit > 0.0 && settings.reaction_limit <= 1.0) {
            return Err(Error::param(
                "reaction_limit",
                settings.reaction_limit,
                "must lie in (0, 1]",
            ));
        }
        if settings.control_cadence == 0 {
            return Err(Error::InvalidArgument(
                "control cadence must be at least one step".into(),
            ));
        }
        if let Some(bw) = settings.bandwidth {
            if !(bw > 0.0) {
                return Err(Error::param("bandwidth", bw, "must be positive"));
            }
        }
        if n_agents == 0 {
            return Err(Error::InvalidArgument("at least one agent is required".into()));
        }
        let solver = MacroSolver::new(&plant, grid)?.with_cfl(settings.cfl)?;
        let mut settings = settings;
        settings.snapshot_times.sort_by(f64::total_cmp);
        Ok(Self {
            controller: Controller::new(config, grid)?,
            plant,
            disturbance,
            solver,
            n_agents: n_agents as f64,
            settings,
        })
    }

    pub fn settings(&self) -> &LoopSettings {
        &self.settings
    }

    fn grid(&self) -> RingGrid {
        self.solver.grid()
    }

    fn kp(&self) -> f64 {
        self.controller.config().kp()
    }

    fn ki(&self) -> f64 {
        self.controller.config().ki()
    }

    /// Step bound shared by both modes: `dt_max`, the reaction limit
    /// `reaction_limit/K_p`, and the end of the current constant-disturbance segment.
    fn dt_cap(&self, t: f64) -> f64 {
        let mut cap = self.settings.dt_max.min(self.settings.reaction_limit / self.kp());
        let mut next_event = self.settings.horizon;
        if let Some(ts) = self.disturbance.switch_time() {
            if ts > t && ts < next_event {
                next_event = ts;
            }
        }
        if t + cap >= next_event {
            cap = next_event - t;
        }
        cap
    }

    fn new_integral(&self) -> Result<IntegralState> {
        match self.settings.integral_clamp {
            Some(c) => IntegralState::zeros(self.grid(), c),
            None => IntegralState::for_mass(self.grid(), self.n_agents),
        }
    }

    /// `q`, projected to zero mean in integral mode. Returns the removed
    /// mean times `2π`.
    fn source(
        &self,
        e: &RingField,
        rho: &RingField,
        rho_d: &RingField,
        integral: &IntegralState,
    ) -> Result<(RingField, f64)> {
        let q = self.controller.compute_q(e, rho, rho_d, integral)?;
        if self.ki() > 0.0 {
            let residual = q.integral().abs();
            Ok((q.zero_mean(), residual))
        } else {
            Ok((q, 0.0))
        }
    }

    fn sample(&self, t: f64, rho: &RingField, rho_d: &RingField) -> Result<Sample> {
        Ok(Sample {
            t,
            err_l2: (rho_d - rho).l2(),
            kl: kl_divergence(rho, rho_d)?,
            mass: rho.integral(),
            rho_d_l2: rho_d.l2(),
            rho_d_x_l2: rho_d.derivative().l2(),
        })
    }

    fn snapshot_due(&self, next: &mut usize, t: f64) -> bool {
        let times = &self.settings.snapshot_times;
        let mut due = false;
        while *next < times.len() && times[*next] <= t + 1e-12 {
            *next += 1;
            due = true;
        }
        due
    }

    /// Runs the controlled density PDE from `rho0` toward the reference
    /// started at `rho_d0`.
    ///
    /// The plant is advanced by the explicit midpoint rule with the control
    /// re-synthesized at each stage, so the closed loop inherits the
    /// integrator's order. The integral state is part of the same stage
    /// update.
    pub fn run_macro(&self, rho0: RingField, rho_d0: RingField) -> Result<RunRecord> {
        rho0.ensure_same_grid(&rho_d0)?;
        self.grid().check_same(&rho0.grid())?;
        let mut next_snapshot = 0;

        let mut rho = rho0;
        let mut rho_d = rho_d0;
        let mut integral = self.new_integral()?;
        let mut t = 0.0;
        let mut clipped = 0.0;
        let mut max_residual: f64 = 0.0;
        let mut samples = vec![self.sample(t, &rho, &rho_d)?];
        let mut snapshots = Vec::new();
        if self.snapshot_due(&mut next_snapshot, t) {
            snapshots.push(self.macro_snapshot(t, &rho, &rho_d, &integral)?);
        }
        let clip_limit = CLIP_LIMIT_FRACTION * self.n_agents;

        while t < self.settings.horizon - 1e-12 {
            let e0 = &rho_d - &rho;
            let (q0, res0) = self.source(&e0, &rho, &rho_d, &integral)?;
            let (r0, rd0) = self.solver.rates(
                &rho,
                &rho_d,
                &ControlInput::Source(q0),
                &self.disturbance,
                t,
            )?;
            let mut v = self.solver.velocity(&rho)?;
            if !self.disturbance.is_zero() {
                v += &self.disturbance.field(self.grid(), t);
            }
            let v_d = self.solver.velocity(&rho_d)?;
            let dt = self
                .dt_cap(t)
                .min(self.solver.cfl_dt(v.max_abs().max(v_d.max_abs())));

            let mut rho_mid = rho.clone();
            rho_mid.axpy(0.5 * dt, &r0);
            let mut rho_d_mid = rho_d.clone();
            rho_d_mid.axpy(0.5 * dt, &rd0);
            let mut integral_mid = integral.clone();
            if self.ki() > 0.0 {
                integral_mid = update_integral(&integral, &e0, 0.5 * dt)?;
            }

            let e_mid = &rho_d_mid - &rho_mid;
            let (q1, res1) = self.source(&e_mid, &rho_mid, &rho_d_mid, &integral_mid)?;
            let (r1, rd1) = self.solver.rates(
                &rho_mid,
                &rho_d_mid,
                &ControlInput::Source(q1),
                &self.disturbance,
                t + 0.5 * dt,
            )?;
            rho.axpy(dt, &r1);
            rho_d.axpy(dt, &rd1);
            if self.ki() > 0.0 {
                integral = update_integral(&integral, &e_mid, dt)?;
            }
            max_residual = max_residual.max(res0).max(res1);
            clipped += clip_negative(&mut rho) + clip_negative(&mut rho_d);
            if clipped > clip_limit {
                return Err(Error::ExcessiveClipping {
                    clipped,
                    limit: clip_limit,
                });
            }
            t += dt;
            samples.push(self.sample(t, &rho, &rho_d)?);
            if self.snapshot_due(&mut next_snapshot, t) {
                snapshots.push(self.macro_snapshot(t, &rho, &rho_d, &integral)?);
            }
        }
        Ok(RunRecord {
            mode: LoopMode::Macro,
            samples,
            snapshots,
            clipped_mass: clipped,
            max_projected_residual: max_residual,
        })
    }

    fn macro_snapshot(
        &self,
        t: f64,
        rho: &RingField,
        rho_d: &RingField,
        integral: &IntegralState,
    ) -> Result<Snapshot> {
        let e = rho_d - rho;
        let (q, _) = self.source(&e, rho, rho_d, integral)?;
        Ok(Snapshot {
            t,
            rho: rho.clone(),
            rho_d: rho_d.clone(),
            u: self.controller.compute_u(&q, rho)?,
        })
    }

    /// Runs `N` agents under the sampled control, with the density
    /// estimated from their positions at every step.
    ///
    /// Each step: estimate `ρ̂`, form `e = ρ^d - ρ̂`, synthesize `q` and
    /// `U` (every `control_cadence` steps), sample `u_i = U(x_i) + d(x_i)`,
    /// advance the agents with the input held, then advance the reference
    /// and the integral over the same dt.
    pub fn run_micro(&self, agents: AgentEnsemble, rho_d0: RingField) -> Result<RunRecord> {
        self.grid().check_same(&rho_d0.grid())?;
        if agents.len() as f64 != self.n_agents {
            return Err(Error::InvalidArgument(format!(
                "ensemble has {} agents, the loop was configured for {}",
                agents.len(),
                self.n_agents
            )));
        }
        let grid = self.grid();
        let h = grid.cell_width();
        let mut next_snapshot = 0;

        let mut agents = agents;
        let mut rho_d = rho_d0;
        let mut integral = self.new_integral()?;
        let mut t = 0.0;
        let mut max_residual: f64 = 0.0;
        let mut samples = Vec::new();
        let mut snapshots = Vec::new();
        let mut u_field = RingField::zeros(grid);
        let mut step = 0usize;

        loop {
            let bw = self
                .settings
                .bandwidth
                .unwrap_or_else(|| default_bandwidth(&agents, h));
            let rho_hat = estimate_density(&agents, grid, bw)?;
            let e = &rho_d - &rho_hat;
            if step % self.settings.control_cadence == 0 {
                let (q, residual) = self.source(&e, &rho_hat, &rho_d, &integral)?;
                max_residual = max_residual.max(residual);
                u_field = self.controller.compute_u(&q, &rho_hat)?;
            }
            samples.push(self.sample(t, &rho_hat, &rho_d)?);
            if self.snapshot_due(&mut next_snapshot, t) {
                snapshots.push(Snapshot {
                    t,
                    rho: rho_hat.clone(),
                    rho_d: rho_d.clone(),
                    u: u_field.clone(),
                });
            }
            if t >= self.settings.horizon - 1e-12 {
                break;
            }

            let angles = agents.angles();
            let mut control = sample_control(&u_field, &angles);
            if !self.disturbance.is_zero() {
                for (u, &x) in control.iter_mut().zip(&angles) {
                    *u += self.disturbance.value(x, t);
                }
            }
            let v_d = self.solver.velocity(&rho_d)?;
            let cap = self.dt_cap(t).min(self.solver.cfl_dt(v_d.max_abs()));
            let (next, dt) =
                advance_agents(&agents, &self.plant, &control, cap, h, self.settings.cfl)?;
            rho_d = self.solver.step_reference(&rho_d, dt)?;
            if self.ki() > 0.0 {
                integral = update_integral(&integral, &e, dt)?;
            }
            agents = next;
            t += dt;
            step += 1;
        }
        Ok(RunRecord {
            mode: LoopMode::Micro,
            samples,
            snapshots,
            clipped_mass: 0.0,
            max_projected_residual: max_residual,
        })
    }
}

/// One sample of the open-loop agent/continuum comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencySample {
    pub t: f64,
    pub kl: f64,
}

/// Evolves agents and the density PDE side by side without control and
/// records `KL(ρ̂, ρ)` at every step, with `ρ̂` the agents' density
/// estimate. The PDE takes the same dt as the agents.
pub fn open_loop_consistency(
    agents: AgentEnsemble,
    rho0: RingField,
    plant: &Kernel,
    settings: &LoopSettings,
) -> Result<Vec<ConsistencySample>> {
    let grid = rho0.grid();
    let h = grid.cell_width();
    let solver = MacroSolver::new(plant, grid)?.with_cfl(settings.cfl)?;
    let none = DisturbanceField::none();
    let mut state = MacroState::new(rho0.clone(), rho0)?;
    let mut agents = agents;
    let zero = vec![0.0; agents.len()];
    let mut out = Vec::new();
    loop {
        let bw = settings
            .bandwidth
            .unwrap_or_else(|| default_bandwidth(&agents, h));
        let rho_hat = estimate_density(&agents, grid, bw)?;
        out.push(ConsistencySample {
            t: state.t,
            kl: kl_divergence(&rho_hat, &state.rho)?,
        });
        if state.t >= settings.horizon - 1e-12 {
            break;
        }
        let cap = solver
            .admissible_dt(&state, &ControlInput::None, &none)?
            .min(settings.dt_max)
            .min(settings.horizon - state.t);
        let (next, dt) = advance_agents(&agents, plant, &zero, cap, h, settings.cfl)?;
        state = solver.step_controlled(&state, &ControlInput::None, &none, dt)?;
        agents = next;
    }
    Ok(out)
}
