//! Experiment descriptions read from TOML.
//!
//! Every field has a default, so a spec file only names what it changes.
//! [`ExperimentSpec::resolve`] fills the defaults that depend on other
//! fields; the resolved spec is what the run manifest records.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::closed_loop::{LoopMode, LoopSettings};
use crate::controller::{default_rho_floor, ControllerConfig};
use crate::density::von_mises_field;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::macro_sim::DisturbanceField;
use crate::ring::{RingField, RingGrid, RingPosition, TWO_PI};

/// One experiment: a closed loop, optionally swept over parameter axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_mode")]
    pub mode: LoopMode,
    /// Root seed. Run seeds are derived from it by [`run_seed`].
    ///
    /// [`run_seed`]: super::run_seed
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_agents")]
    pub n_agents: usize,
    /// Number of grid cells `m`.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Final time `t_f`.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub numerics: NumericsSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
}

fn default_mode() -> LoopMode {
    LoopMode::Micro
}

fn default_reaction_limit(mode: LoopMode) -> f64 {
    match mode {
        LoopMode::Macro => 0.02,
        LoopMode::Micro => LoopSettings::default().reaction_limit,
    }
}

fn default_agents() -> usize {
    100
}

fn default_grid() -> usize {
    256
}

fn default_horizon() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSpec {
    pub dt_max: f64,
    pub cfl: f64,
    /// Micro mode recomputes the control every this many steps.
    pub control_cadence: usize,
    pub bandwidth: Bandwidth,
    /// Bound on `K_p·dt`; defaults to 0.02 in macro mode, where bound
    /// checks need an accurate time integration, and 0.5 in micro mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reaction_limit: Option<f64>,
}

impl Default for NumericsSpec {
    fn default() -> Self {
        let s = LoopSettings::default();
        Self {
            dt_max: s.dt_max,
            cfl: s.cfl,
            control_cadence: s.control_cadence,
            bandwidth: Bandwidth::Rule(BandwidthRule::Silverman),
            reaction_limit: None,
        }
    }
}

/// KDE bandwidth: a fixed value in radians or the data-driven rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Rule(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    Silverman,
}

/// Morse parameters `(G, L)` of the plant kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSpec {
    pub strength: f64,
    pub length: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            strength: 0.5,
            length: 0.5,
        }
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        Kernel::morse(self.strength, self.length)
    }
}

/// The kernel the controller believes in, labelled for sweep tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerKernelSpec {
    pub label: String,
    pub strength: f64,
    pub length: f64,
}

impl ControllerKernelSpec {
    pub fn new(label: &str, strength: f64, length: f64) -> Self {
        Self {
            label: label.to_string(),
            strength,
            length,
        }
    }

    fn build(&self) -> Result<Kernel> {
        Kernel::morse(self.strength, self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub kp: f64,
    pub ki: f64,
    /// Sensing radius `Δ` in units of `π`.
    pub sensing_radius_pi: f64,
    /// Defaults to `1e-3·N/2π`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_floor: Option<f64>,
    /// Anti-windup bound on the integral state; defaults to `10·N/2π`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integral_clamp: Option<f64>,
    /// Defaults to the plant kernel, labelled `nominal`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<ControllerKernelSpec>,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kp: 10.0,
            ki: 0.0,
            sensing_radius_pi: 1.0,
            rho_floor: None,
            integral_clamp: None,
            kernel: None,
        }
    }
}

/// Von Mises target `ρ^d(·, 0)` with mass `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSpec {
    pub mu: f64,
    pub concentration: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            mu: 0.0,
            concentration: 4.0,
        }
    }
}

/// Initial swarm. `uniform` is the flat density in macro mode and evenly
/// spaced agents in micro mode; `von-mises` is the density itself in macro
/// mode and a seeded sample in micro mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Uniform,
    VonMises { mu: f64, concentration: f64 },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Uniform
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    None,
    /// `d = amplitude` from `switch_time` on (default `t_f/2`).
    Step {
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        switch_time: Option<f64>,
    },
    /// `d = amplitude·sin(n·x - ω·t)`.
    TravellingWave {
        amplitude: f64,
        wavenumber: u32,
        angular_speed: f64,
    },
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        DisturbanceSpec::None
    }
}

impl DisturbanceSpec {
    fn with_amplitude(self, value: f64) -> Result<Self> {
        match self {
            DisturbanceSpec::None => Err(Error::Spec(
                "a disturbance_amplitude axis needs a disturbance kind other than `none`".into(),
            )),
            DisturbanceSpec::Step { switch_time, .. } => Ok(DisturbanceSpec::Step {
                amplitude: value,
                switch_time,
            }),
            DisturbanceSpec::TravellingWave {
                wavenumber,
                angular_speed,
                ..
            } => Ok(DisturbanceSpec::TravellingWave {
                amplitude: value,
                wavenumber,
                angular_speed,
            }),
        }
    }

    /// The amplitude, zero without a disturbance.
    pub fn amplitude(&self) -> f64 {
        match *self {
            DisturbanceSpec::None => 0.0,
            DisturbanceSpec::Step { amplitude, .. }
            | DisturbanceSpec::TravellingWave { amplitude, .. } => amplitude,
        }
    }

    pub fn build(&self, horizon: f64) -> Result<DisturbanceField> {
        match *self {
            DisturbanceSpec::None => Ok(DisturbanceField::none()),
            DisturbanceSpec::Step {
                amplitude,
                switch_time,
            } => DisturbanceField::step(amplitude, switch_time.unwrap_or(0.5 * horizon)),
            DisturbanceSpec::TravellingWave {
                amplitude,
                wavenumber,
                angular_speed,
            } => DisturbanceField::travelling_wave(amplitude, wavenumber, angular_speed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Output directory; the CLI fills it from `--out`, `RINGSWARM_OUT`
    /// or its default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Times at which `ρ`, `ρ^d` and `U` are written out.
    pub snapshot_times: Vec<f64>,
}

/// Parameter lists; a sweep runs their Cartesian product. Empty axes keep
/// the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub sensing_radius_pi: Vec<f64>,
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub disturbance_amplitude: Vec<f64>,
    pub controller_kernel: Vec<ControllerKernelSpec>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.lens().iter().all(|&n| n == 0)
    }

    fn lens(&self) -> [usize; 5] {
        [
            self.sensing_radius_pi.len(),
            self.kp.len(),
            self.ki.len(),
            self.disturbance_amplitude.len(),
            self.controller_kernel.len(),
        ]
    }

    /// Number of combinations; empty axes count as a single value.
    pub fn combinations(&self) -> usize {
        self.lens().iter().map(|&n| n.max(1)).product()
    }

    /// Axis indices of the `flat`-th combination in row-major order, with
    /// the last axis varying fastest. Empty axes report index 0.
    pub fn indices(&self, flat: usize) -> [usize; 5] {
        let lens = self.lens();
        let mut out = [0; 5];
        let mut rest = flat;
        for k in (0..5).rev() {
            let n = lens[k].max(1);
            out[k] = rest % n;
            rest /= n;
        }
        out
    }
}

impl ExperimentSpec {
    /// A spec with every default and the given name.
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            mode: default_mode(),
            seed: 0,
            n_agents: default_agents(),
            grid: default_grid(),
            horizon: default_horizon(),
            numerics: NumericsSpec::default(),
            kernel: KernelSpec::default(),
            controller: ControllerSpec::default(),
            target: TargetSpec::default(),
            initial: InitialSpec::default(),
            disturbance: DisturbanceSpec::default(),
            output: OutputSpec::default(),
            sweep: SweepAxes::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    /// Reads and parses a spec file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Spec(e.to_string()))
    }

    /// The single experiment at combination `flat` of the sweep, with the
    /// axes cleared.
    pub fn point(&self, flat: usize) -> Result<Self> {
        if flat >= self.sweep.combinations() {
            return Err(Error::InvalidArgument(format!(
                "combination {flat} out of range ({} total)",
                self.sweep.combinations()
            )));
        }
        let idx = self.sweep.indices(flat);
        let axes = &self.sweep;
        let mut out = self.clone();
        out.sweep = SweepAxes::default();
        if let Some(&v) = axes.sensing_radius_pi.get(idx[0]) {
            out.controller.sensing_radius_pi = v;
        }
        if let Some(&v) = axes.kp.get(idx[1]) {
            out.controller.kp = v;
        }
        if let Some(&v) = axes.ki.get(idx[2]) {
            out.controller.ki = v;
        }
        if let Some(&v) = axes.disturbance_amplitude.get(idx[3]) {
            out.disturbance = out.disturbance.with_amplitude(v)?;
        }
        if let Some(k) = axes.controller_kernel.get(idx[4]) {
            out.controller.kernel = Some(k.clone());
        }
        Ok(out)
    }

    /// Validates the spec and fills the derived defaults: `ρ` floor,
    /// integral clamp, controller kernel and disturbance switch time.
    pub fn resolve(&self) -> Result<Self> {
        let mut out = self.clone();
        let n = out.n_agents as f64;
        let mode = out.mode;
        out.numerics
            .reaction_limit
            .get_or_insert_with(|| default_reaction_limit(mode));
        out.controller.rho_floor.get_or_insert(default_rho_floor(n));
        out.controller
            .integral_clamp
            .get_or_insert(10.0 * n / TWO_PI);
        out.controller.kernel.get_or_insert_with(|| {
            ControllerKernelSpec::new("nominal", out.kernel.strength, out.kernel.length)
        });
        if let DisturbanceSpec::Step { switch_time, .. } = &mut out.disturbance {
            switch_time.get_or_insert(0.5 * out.horizon);
        }
        out.validate()?;
        for flat in 0..out.sweep.combinations() {
            if !out.sweep.is_empty() {
                out.point(flat)?.validate()?;
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if self.name.trim().is_empty() {
            return fail("`name` must not be empty".into());
        }
        if self.n_agents == 0 {
            return fail("`n_agents` must be at least 1".into());
        }
        if self.grid < RingGrid::MIN_CELLS {
            return fail(format!("`grid` must be at least {}", RingGrid::MIN_CELLS));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return fail(format!("`horizon` = {} must be finite and non-negative", self.horizon));
        }
        let c = &self.controller;
        if !(c.sensing_radius_pi > 0.0 && c.sensing_radius_pi <= 1.0) {
            return fail(format!(
                "`sensing_radius_pi` = {} must lie in (0, 1]",
                c.sensing_radius_pi
            ));
        }
        if let Bandwidth::Fixed(bw) = self.numerics.bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return fail(format!("`bandwidth` = {bw} must be positive"));
            }
        }
        if let InitialSpec::VonMises { concentration, .. } = self.initial {
            if !(concentration >= 0.0 && concentration.is_finite()) {
                return fail(format!("initial `concentration` = {concentration} must be non-negative"));
            }
        }
        for &t in &self.output.snapshot_times {
            if !(0.0..=self.horizon).contains(&t) {
                return fail(format!("snapshot time {t} lies outside [0, {}]", self.horizon));
            }
        }
        self.kernel.build()?;
        self.config()?;
        self.disturbance.build(self.horizon)?;
        self.target_field()?;
        self.settings()?;
        Ok(())
    }

    pub fn settings(&self) -> Result<LoopSettings> {
        if self.numerics.control_cadence == 0 {
            return Err(Error::Spec("`control_cadence` must be at least 1".into()));
        }
        Ok(LoopSettings {
            horizon: self.horizon,
            dt_max: self.numerics.dt_max,
            cfl: self.numerics.cfl,
            control_cadence: self.numerics.control_cadence,
            bandwidth: match self.numerics.bandwidth {
                Bandwidth::Fixed(bw) => Some(bw),
                Bandwidth::Rule(BandwidthRule::Silverman) => None,
            },
            reaction_limit: self
                .numerics
                .reaction_limit
                .unwrap_or_else(|| default_reaction_limit(self.mode)),
            integral_clamp: self.controller.integral_clamp,
            snapshot_times: self.output.snapshot_times.clone(),
        })
    }

    pub fn ring_grid(&self) -> Result<RingGrid> {
        RingGrid::new(self.grid)
    }

    /// Controller configuration; unresolved defaults fall back to their
    /// documented values.
    pub fn config(&self) -> Result<ControllerConfig> {
        let c = &self.controller;
        let n = self.n_agents as f64;
        let kernel = match &c.kernel {
            Some(k) => k.build()?,
            None => self.kernel.build()?,
        };
        ControllerConfig::new(
            c.kp,
            c.ki,
            c.sensing_radius_pi * PI,
            kernel,
            c.rho_floor.unwrap_or_else(|| default_rho_floor(n)),
        )
    }

    pub fn controller_label(&self) -> &str {
        self.controller
            .kernel
            .as_ref()
            .map_or("nominal", |k| k.label.as_str())
    }

    pub fn target_field(&self) -> Result<RingField> {
        von_mises_field(
            RingPosition::new(self.target.mu)?,
            self.target.concentration,
            self.n_agents as f64,
            self.ring_grid()?,
        )
    }
}
