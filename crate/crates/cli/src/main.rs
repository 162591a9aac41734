//! `ringswarm`: run, sweep and check swarm density-control experiments.
//!
//! Exit status is 0 on success, 1 when a run, sweep or check fails and 2
//! for usage errors. Failures print `error[<category>]: <message>` on
//! stderr.

use std::env;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ringswarm::closed_loop::LoopMode;
use ringswarm::harness::{
    check_run_dir, preset, run_experiment, sweep, write_run, write_sweep, ExperimentSpec,
    RunOutput, SweepOutput, OUT_ENV, PRESET_NAMES,
};
use ringswarm::Error;

#[derive(Parser)]
#[command(name = "ringswarm", version, about = "Density control of swarms on a ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the single experiment described by a TOML spec.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run every combination of a spec's sweep axes.
    Sweep {
        spec: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a named preset (a sweep when it has axes).
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Re-evaluate the bound check of a written run directory.
    CheckBounds { run_dir: PathBuf },
}

#[derive(Args)]
struct RunOpts {
    /// Output directory [default: $RINGSWARM_OUT, then the spec's
    /// `output.dir`, then `ringswarm-out/<name>`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid cells, overriding the spec.
    #[arg(long)]
    grid: Option<usize>,
    /// Loop mode, overriding the spec.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<LoopMode>,
}

fn parse_mode(s: &str) -> Result<LoopMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunOpts {
    fn apply(&self, mut spec: ExperimentSpec) -> ExperimentSpec {
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(grid) = self.grid {
            spec.grid = grid;
        }
        if let Some(mode) = self.mode {
            spec.mode = mode;
        }
        spec.output.dir = Some(self.out_dir(&spec));
        spec
    }

    fn out_dir(&self, spec: &ExperimentSpec) -> PathBuf {
        self.out
            .clone()
            .or_else(|| env::var_os(OUT_ENV).map(PathBuf::from))
            .or_else(|| spec.output.dir.clone())
            .unwrap_or_else(|| Path::new("ringswarm-out").join(&spec.name))
    }
}

fn report_run(dir: &Path, out: &RunOutput) {
    let last = out.record.terminal();
    println!("wrote {}", dir.display());
    println!(
        "t = {}  err_l2 = {:.6e}  kl = {:.6e}  mass = {:.6}  steps = {}",
        last.t,
        last.err_l2,
        last.kl,
        last.mass,
        out.record.samples.len() - 1
    );
    let b = &out.bounds;
    match (b.kind, b.passed()) {
        (None, _) => println!("bounds: no applicable inequality"),
        (Some(k), None) => println!("bounds: {k:?} evaluated, not judged in {} mode", b.mode),
        (Some(k), Some(ok)) => println!(
            "bounds: {k:?} {} ({} violations of {} samples)",
            if ok { "holds" } else { "VIOLATED" },
            b.violations,
            b.samples
        ),
    }
}

fn report_sweep(dir: &Path, out: &SweepOutput) -> Result<(), Failure> {
    println!("wrote {} ({} rows)", dir.display(), out.rows.len());
    println!(
        "{:>8} {:>8} {:>6} {:>6} {:>10} {:>12} {:>12} {:>8}",
        "delta/pi", "kp", "ki", "d", "kernel", "kl_end", "err_end", "bounds"
    );
    for r in &out.rows {
        let kl = r.kl_terminal.map_or(r.status.clone(), |v| format!("{v:.4e}"));
        let err = r.err_l2_terminal.map_or("-".into(), |v| format!("{v:.4e}"));
        let bound = match r.bound_ok {
            Some(true) => "ok",
            Some(false) => "VIOLATED",
            None => "-",
        };
        println!(
            "{:>8} {:>8} {:>6} {:>6} {:>10} {:>12} {:>12} {:>8}",
            r.sensing_radius_pi,
            r.kp,
            r.ki,
            r.disturbance_amplitude,
            r.controller_kernel,
            kl,
            err,
            bound
        );
    }
    let failed = out.failures().count();
    match out.failures().next() {
        None => Ok(()),
        Some(first) => Err(Failure {
            category: first.category(),
            message: format!(
                "{failed} of {} sweep runs failed; first: {first}",
                out.rows.len()
            ),
        }),
    }
}

/// A failure as reported on stderr.
struct Failure {
    category: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

fn execute(spec: ExperimentSpec, force_sweep: bool) -> Result<(), Failure> {
    let dir = spec.output.dir.clone().expect("output dir is resolved");
    if force_sweep || !spec.sweep.is_empty() {
        let out = sweep(&spec)?;
        write_sweep(&dir, &out)?;
        report_sweep(&dir, &out)
    } else {
        let out = run_experiment(&spec)?;
        write_run(&dir, &out)?;
        report_run(&dir, &out);
        Ok(())
    }
}

fn check_bounds(dir: &Path) -> Result<(), Failure> {
    let summary = check_run_dir(dir)?;
    match summary.kind {
        None => println!("no applicable inequality"),
        Some(k) => println!(
            "{k:?}: {} violations of {} samples (tolerance {:.3e}){}",
            summary.violations,
            summary.samples,
            summary.tolerance,
            if summary.judged { "" } else { ", not judged" }
        ),
    }
    if let Some(b) = summary.steady_state_bound {
        println!(
            "steady state: |e|^2 = {:.6e} against c^2/a^2 = {:.6e}",
            summary.terminal_eta, b
        );
    }
    match summary.violation() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { spec, opts } => execute(opts.apply(ExperimentSpec::from_file(&spec)?), false),
        Command::Sweep { spec, opts } => execute(opts.apply(ExperimentSpec::from_file(&spec)?), true),
        Command::Preset { name, opts } => execute(opts.apply(preset(&name)?), false),
        Command::CheckBounds { run_dir } => check_bounds(&run_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category, e.message);
            ExitCode::FAILURE
        }
    }
}
