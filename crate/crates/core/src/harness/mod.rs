//! Experiment harness: TOML specs, named presets, single runs, sweeps and
//! the files they write.
//!
//! ```no_run
//! use ringswarm::harness::{preset, run_experiment, write_run};
//!
//! let spec = preset("nominal")?;
//! let out = run_experiment(&spec)?;
//! write_run("out/nominal".as_ref(), &out)?;
//! # Ok::<(), ringswarm::Error>(())
//! ```

mod output;
mod presets;
mod run;
mod spec;
mod sweep;

pub use output::{
    read_metrics, read_sweep, write_metrics_csv, write_run, write_sweep, write_sweep_csv,
    MetricsRow, OUT_ENV,
};
pub use presets::{preset, PRESET_NAMES};
pub use run::{check_run_dir, run_experiment, BoundsSummary, RunOutput};
pub use spec::{
    Bandwidth, BandwidthRule, ControllerKernelSpec, ControllerSpec, DisturbanceSpec,
    ExperimentSpec, InitialSpec, KernelSpec, NumericsSpec, OutputSpec, SweepAxes, TargetSpec,
};
pub use sweep::{sweep, SweepOutput, SweepRow};

/// SplitMix64 finalizer: a bijective mixer of 64-bit words.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the combination with row-major index `flat`:
/// `splitmix64(root + flat)` with wrapping addition. A single run is
/// combination 0, so a one-point sweep reproduces it exactly.
pub fn run_seed(root: u64, flat: usize) -> u64 {
    splitmix64(root.wrapping_add(flat as u64))
}
