//! Cartesian parameter sweeps, one independent run per combination.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{execute, RunOutput};
use super::run_seed;
use super::spec::ExperimentSpec;
use crate::bounds::BoundKind;
use crate::error::{Error, Result};

/// Terminal metrics of one combination. Failed runs keep their axis values
/// and report the error category in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sensing_radius_pi: f64,
    pub kp: f64,
    pub ki: f64,
    pub disturbance_amplitude: f64,
    pub controller_kernel: String,
    pub seed: u64,
    /// `ok` or the error category.
    pub status: String,
    pub kl_terminal: Option<f64>,
    pub err_l2_initial: Option<f64>,
    pub err_l2_terminal: Option<f64>,
    pub mass_terminal: Option<f64>,
    pub clipped_mass: Option<f64>,
    pub bound_kind: Option<BoundKind>,
    pub bound_violations: Option<usize>,
    pub bound_ok: Option<bool>,
}

impl SweepRow {
    fn axis_order(&self, other: &Self) -> Ordering {
        self.sensing_radius_pi
            .total_cmp(&other.sensing_radius_pi)
            .then(self.kp.total_cmp(&other.kp))
            .then(self.ki.total_cmp(&other.ki))
            .then(
                self.disturbance_amplitude
                    .total_cmp(&other.disturbance_amplitude),
            )
            .then_with(|| self.controller_kernel.cmp(&other.controller_kernel))
    }
}

#[derive(Debug)]
pub struct SweepOutput {
    /// The resolved sweep spec.
    pub spec: ExperimentSpec,
    /// Rows sorted by axis values.
    pub rows: Vec<SweepRow>,
    /// The run behind each row, in the same order.
    pub runs: Vec<Result<RunOutput>>,
}

impl SweepOutput {
    pub fn failures(&self) -> impl Iterator<Item = &Error> {
        self.runs.iter().filter_map(|r| r.as_ref().err())
    }
}

fn row_for(point: &ExperimentSpec, seed: u64, run: &Result<RunOutput>) -> SweepRow {
    let mut row = SweepRow {
        sensing_radius_pi: point.controller.sensing_radius_pi,
        kp: point.controller.kp,
        ki: point.controller.ki,
        disturbance_amplitude: point.disturbance.amplitude(),
        controller_kernel: point.controller_label().to_string(),
        seed,
        status: "ok".into(),
        kl_terminal: None,
        err_l2_initial: None,
        err_l2_terminal: None,
        mass_terminal: None,
        clipped_mass: None,
        bound_kind: None,
        bound_violations: None,
        bound_ok: None,
    };
    match run {
        Ok(out) => {
            let last = out.record.terminal();
            row.kl_terminal = Some(last.kl);
            row.err_l2_initial = Some(out.record.samples[0].err_l2);
            row.err_l2_terminal = Some(last.err_l2);
            row.mass_terminal = Some(last.mass);
            row.clipped_mass = Some(out.record.clipped_mass);
            row.bound_kind = out.bounds.kind;
            row.bound_violations = out.report.as_ref().map(|r| r.violations);
            row.bound_ok = out.bounds.passed();
        }
        Err(e) => row.status = e.category().to_string(),
    }
    row
}

/// Runs every combination of the sweep axes in parallel.
///
/// Each combination gets the seed `run_seed(root, flat)` with `flat` its
/// row-major index. A failing combination does not stop the others; its
/// row carries the error category.
pub fn sweep(spec: &ExperimentSpec) -> Result<SweepOutput> {
    if spec.sweep.is_empty() {
        return Err(Error::Spec(format!(
            "`{}` has no sweep axes; run it as a single experiment",
            spec.name
        )));
    }
    let resolved = spec.resolve()?;
    let points = (0..resolved.sweep.combinations())
        .map(|flat| {
            let mut p = resolved.point(flat)?.resolve()?;
            p.name = format!("{}[{flat}]", resolved.name);
            Ok((p, run_seed(resolved.seed, flat)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results: Vec<(SweepRow, Result<RunOutput>)> = points
        .into_par_iter()
        .map(|(point, seed)| {
            let run = execute(point.clone(), seed);
            (row_for(&point, seed, &run), run)
        })
        .collect();
    results.sort_by(|a, b| a.0.axis_order(&b.0));
    let (rows, runs) = results.into_iter().unzip();
    Ok(SweepOutput {
        spec: resolved,
        rows,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::LoopMode;
    use crate::harness::run::run_experiment;

    fn base() -> ExperimentSpec {
        let mut s = ExperimentSpec::named("tiny");
        s.mode = LoopMode::Macro;
        s.grid = 64;
        s.horizon = 0.02;
        s.controller.kp = 100.0;
        s
    }

    #[test]
    fn product_of_axes_gives_one_row_each_sorted() {
        let mut s = base();
        s.sweep.kp = vec![1000.0, 100.0];
        s.sweep.sensing_radius_pi = vec![1.0, 0.4];
        let out = sweep(&s).unwrap();
        assert_eq!(out.rows.len(), 4);
        let keys: Vec<(f64, f64)> = out
            .rows
            .iter()
            .map(|r| (r.sensing_radius_pi, r.kp))
            .collect();
        assert_eq!(
            keys,
            vec![(0.4, 100.0), (0.4, 1000.0), (1.0, 100.0), (1.0, 1000.0)]
        );
        assert!(out.rows.iter().all(|r| r.status == "ok"));
    }

    #[test]
    fn single_point_sweep_matches_the_single_run() {
        let mut s = base();
        s.sweep.kp = vec![100.0];
        let out = sweep(&s).unwrap();
        let single = run_experiment(&base()).unwrap();
        let run = out.runs[0].as_ref().unwrap();
        assert_eq!(run.record, single.record);
        assert_eq!(out.rows[0].kl_terminal, Some(single.record.terminal().kl));
    }

    #[test]
    fn failing_combination_is_reported_in_its_row() {
        let mut s = base();
        s.horizon = 1.0;
        s.grid = 32;
        s.sweep.kp = vec![10.0, 100.0];
        let out = sweep(&s).unwrap();
        assert_eq!(out.rows[0].status, "numerical");
        assert_eq!(out.rows[0].kl_terminal, None);
        assert_eq!(out.rows[1].status, "ok");
        assert_eq!(out.failures().count(), 1);
    }

    #[test]
    fn empty_axes_are_rejected() {
        assert_eq!(sweep(&base()).unwrap_err().category(), "spec");
    }

    #[test]
    fn invalid_axis_values_fail_before_running() {
        let mut s = base();
        s.sweep.sensing_radius_pi = vec![0.5, 1.5];
        assert_eq!(sweep(&s).unwrap_err().category(), "spec");
        let mut s = base();
        s.sweep.disturbance_amplitude = vec![0.5];
        assert_eq!(sweep(&s).unwrap_err().category(), "spec");
    }
}
