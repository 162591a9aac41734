//! Named experiments reproducing the published scenarios.

use super::spec::{ControllerKernelSpec, DisturbanceSpec, ExperimentSpec};
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 5] = [
    "nominal",
    "fig1-limited-sensing-sweep",
    "fig4-step-disturbance",
    "fig5-kernel-perturbation",
    "fig6-integral-action",
];

/// Full sensing, matched kernel, no disturbance, `K_p = 10`.
fn nominal() -> ExperimentSpec {
    let mut s = ExperimentSpec::named("nominal");
    s.output.snapshot_times = vec![0.0, 3.0, 6.0];
    s
}

fn kernel_variants() -> Vec<ControllerKernelSpec> {
    vec![
        ControllerKernelSpec::new("nominal", 0.5, 0.5),
        ControllerKernelSpec::new("f1", 0.1, 0.1),
        ControllerKernelSpec::new("f2", 0.9, 0.9),
    ]
}

/// Terminal KL over `Δ ∈ {0.1π, …, π}` and `K_p ∈ {10, 100, 1000}`.
fn limited_sensing_sweep() -> ExperimentSpec {
    let mut s = ExperimentSpec::named("fig1-limited-sensing-sweep");
    s.sweep.sensing_radius_pi = (1..=10).map(|k| k as f64 / 10.0).collect();
    s.sweep.kp = vec![10.0, 100.0, 1000.0];
    s
}

/// Constant disturbance switched on at `t_f/2`. The amplitudes are not
/// given by the source and were chosen here.
fn step_disturbance() -> ExperimentSpec {
    let mut s = ExperimentSpec::named("fig4-step-disturbance");
    s.disturbance = DisturbanceSpec::Step {
        amplitude: 0.5,
        switch_time: Some(3.0),
    };
    s.sweep.disturbance_amplitude = vec![0.25, 0.5, 1.0];
    s.sweep.kp = vec![10.0, 100.0];
    s
}

/// Controller kernels `f`, `f̃₁` (G = L = 0.1) and `f̃₂` (G = L = 0.9).
fn kernel_perturbation() -> ExperimentSpec {
    let mut s = ExperimentSpec::named("fig5-kernel-perturbation");
    s.sweep.controller_kernel = kernel_variants();
    s.sweep.kp = vec![10.0, 100.0];
    s
}

/// `K_i ∈ {0, 0.1}` under limited sensing and under kernel mismatch.
fn integral_action() -> ExperimentSpec {
    let mut s = ExperimentSpec::named("fig6-integral-action");
    s.sweep.sensing_radius_pi = vec![0.1, 1.0];
    s.sweep.controller_kernel = vec![kernel_variants()[0].clone(), kernel_variants()[2].clone()];
    s.sweep.ki = vec![0.0, 0.1];
    s
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ExperimentSpec> {
    match name {
        "nominal" => Ok(nominal()),
        "fig1-limited-sensing-sweep" => Ok(limited_sensing_sweep()),
        "fig4-step-disturbance" => Ok(step_disturbance()),
        "fig5-kernel-perturbation" => Ok(kernel_perturbation()),
        "fig6-integral-action" => Ok(integral_action()),
        other => Err(Error::Spec(format!(
            "unknown preset `{other}`; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
