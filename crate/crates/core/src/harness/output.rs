//! CSV, TOML and JSON files written by runs and sweeps.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! value parsed back from any file is bit-identical to the one written.
//! Missing values are written as `na`.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use super::run::RunOutput;
use super::spec::ExperimentSpec;
use super::sweep::{SweepOutput, SweepRow};
use crate::bounds::BoundReport;
use crate::closed_loop::RunRecord;
use crate::error::{Error, Result};

/// Environment variable overriding the CLI's default output directory.
pub const OUT_ENV: &str = "RINGSWARM_OUT";

pub(crate) const METRICS_FILE: &str = "metrics.csv";
pub(crate) const MANIFEST_FILE: &str = "manifest.toml";
pub(crate) const BOUNDS_FILE: &str = "bounds.json";
const SWEEP_FILE: &str = "sweep.csv";
const NA: &str = "na";

const METRICS_HEADER: [&str; 7] = [
    "t",
    "err_l2",
    "kl",
    "mass",
    "bound_lhs",
    "bound_rhs",
    "bound_ok",
];

const SWEEP_HEADER: [&str; 16] = [
    "sensing_radius_pi",
    "kp",
    "ki",
    "disturbance_amplitude",
    "controller_kernel",
    "seed",
    "status",
    "kl_terminal",
    "err_l2_initial",
    "err_l2_terminal",
    "mass_terminal",
    "clipped_mass",
    "bound_kind",
    "bound_violations",
    "bound_ok",
    "run_dir",
];

/// One parsed line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub err_l2: f64,
    pub kl: f64,
    pub mass: f64,
    pub bound_lhs: Option<f64>,
    pub bound_rhs: Option<f64>,
    pub bound_ok: Option<bool>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes one row per sample. Bound columns come from `report`; `bound_ok`
/// is `na` unless the run is `judged`.
pub fn write_metrics_csv<W: Write>(
    writer: W,
    record: &RunRecord,
    report: Option<&BoundReport>,
    judged: bool,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    let records = report.map(|r| r.records.as_slice()).unwrap_or(&[]);
    for (i, s) in record.samples.iter().enumerate() {
        let b = records.get(i);
        w.write_record([
            s.t.to_string(),
            s.err_l2.to_string(),
            s.kl.to_string(),
            s.mass.to_string(),
            opt(b.map(|b| b.lhs)),
            opt(b.map(|b| b.rhs)),
            opt(b.filter(|_| judged).map(|b| b.satisfied)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the sweep table; an empty table gives the header alone.
pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            r.sensing_radius_pi.to_string(),
            r.kp.to_string(),
            r.ki.to_string(),
            r.disturbance_amplitude.to_string(),
            r.controller_kernel.clone(),
            r.seed.to_string(),
            r.status.clone(),
            opt(r.kl_terminal),
            opt(r.err_l2_initial),
            opt(r.err_l2_terminal),
            opt(r.mass_terminal),
            opt(r.clipped_mass),
            opt(r.bound_kind.map(|k| {
                serde_json::to_value(k)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            })),
            opt(r.bound_violations),
            opt(r.bound_ok),
            run_dir_name(i),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_dir_name(i: usize) -> String {
    format!("runs/run-{i:03}")
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path, line: usize) -> Result<Option<T>> {
    if field == NA {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| {
        Error::InvalidInput(format!(
            "{}:{line}: cannot parse `{field}`",
            path.display()
        ))
    })
}

fn required<T: std::str::FromStr>(field: &str, path: &Path, line: usize) -> Result<T> {
    parse(field, path, line)?.ok_or_else(|| {
        Error::InvalidInput(format!("{}:{line}: missing value", path.display()))
    })
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "{}: unexpected header {:?}",
            path.display(),
            found
        )));
    }
    r.records()
        .collect::<csv::Result<Vec<_>>>()
        .map_err(|e| csv_err(path, e))
}

/// Parses a `metrics.csv` written by [`write_metrics_csv`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_table(path, &METRICS_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            Ok(MetricsRow {
                t: required(&rec[0], path, line)?,
                err_l2: required(&rec[1], path, line)?,
                kl: required(&rec[2], path, line)?,
                mass: required(&rec[3], path, line)?,
                bound_lhs: parse(&rec[4], path, line)?,
                bound_rhs: parse(&rec[5], path, line)?,
                bound_ok: parse(&rec[6], path, line)?,
            })
        })
        .collect()
}

/// Parses a `sweep.csv` written by [`write_sweep_csv`].
pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    read_table(path, &SWEEP_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 2;
            let bound_kind = match &rec[12] {
                NA => None,
                s => Some(
                    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(
                        |_| {
                            Error::InvalidInput(format!(
                                "{}:{line}: unknown bound kind `{s}`",
                                path.display()
                            ))
                        },
                    )?,
                ),
            };
            Ok(SweepRow {
                sensing_radius_pi: required(&rec[0], path, line)?,
                kp: required(&rec[1], path, line)?,
                ki: required(&rec[2], path, line)?,
                disturbance_amplitude: required(&rec[3], path, line)?,
                controller_kernel: rec[4].to_string(),
                seed: required(&rec[5], path, line)?,
                status: rec[6].to_string(),
                kl_terminal: parse(&rec[7], path, line)?,
                err_l2_initial: parse(&rec[8], path, line)?,
                err_l2_terminal: parse(&rec[9], path, line)?,
                mass_terminal: parse(&rec[10], path, line)?,
                clipped_mass: parse(&rec[11], path, line)?,
                bound_kind,
                bound_violations: parse(&rec[13], path, line)?,
                bound_ok: parse(&rec[14], path, line)?,
            })
        })
        .collect()
}

fn write_manifest(dir: &Path, spec: &ExperimentSpec) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, spec.to_toml()?).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `metrics.csv`, `manifest.toml`, `bounds.json` and one
/// `snapshot_<t>.csv` per recorded snapshot into `dir`.
pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    make_dir(dir)?;
    let path = dir.join(METRICS_FILE);
    write_metrics_csv(
        create(&path)?,
        &run.record,
        run.report.as_ref(),
        run.bounds.judged,
    )
    .map_err(|e| csv_err(&path, e))?;

    for snap in &run.record.snapshots {
        let path = dir.join(format!("snapshot_{:.3}.csv", snap.t));
        let mut w = csv::Writer::from_writer(create(&path)?);
        let grid = snap.rho.grid();
        let result = (|| {
            w.write_record(["x", "rho", "rho_d", "u_field"])?;
            for (k, x) in grid.nodes().enumerate() {
                w.write_record([
                    x.to_string(),
                    snap.rho.values()[k].to_string(),
                    snap.rho_d.values()[k].to_string(),
                    snap.u.values()[k].to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        result.map_err(|e| csv_err(&path, e))?;
    }

    write_manifest(dir, &run.spec)?;
    let path = dir.join(BOUNDS_FILE);
    let json = serde_json::to_string_pretty(&run.bounds)
        .map_err(|e| Error::InvalidInput(format!("serializing bounds: {e}")))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `sweep.csv` and the sweep manifest into `dir`, and each
/// successful run under `runs/run-<row>`. Failed rows get an `error.txt`
/// next to their manifest.
pub fn write_sweep(dir: &Path, out: &SweepOutput) -> Result<()> {
    make_dir(dir)?;
    let path = dir.join(SWEEP_FILE);
    write_sweep_csv(create(&path)?, &out.rows).map_err(|e| csv_err(&path, e))?;
    write_manifest(dir, &out.spec)?;
    for (i, run) in out.runs.iter().enumerate() {
        let run_dir = dir.join(run_dir_name(i));
        match run {
            Ok(run) => write_run(&run_dir, run)?,
            Err(e) => {
                make_dir(&run_dir)?;
                let path = run_dir.join("error.txt");
                let text = format!("error[{}]: {e}\n", e.category());
                fs::write(&path, text).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundKind;
    use crate::closed_loop::{LoopMode, Sample};

    fn record() -> RunRecord {
        let samples = (0..5)
            .map(|i| {
                let t = 0.1 * i as f64 + 1e-17 * i as f64;
                Sample {
                    t,
                    err_l2: (1.0 / 3.0) * (-t).exp(),
                    kl: 2f64.sqrt() * 1e-7 * (i + 1) as f64,
                    mass: 100.0 - 1e-13 * i as f64,
                    rho_d_l2: 1.0,
                    rho_d_x_l2: 1.0,
                }
            })
            .collect();
        RunRecord {
            mode: LoopMode::Macro,
            samples,
            snapshots: Vec::new(),
            clipped_mass: 0.0,
            max_projected_residual: 0.0,
        }
    }

    #[test]
    fn metrics_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rec = record();
        write_metrics_csv(File::create(&path).unwrap(), &rec, None, false).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), rec.samples.len());
        for (r, s) in rows.iter().zip(&rec.samples) {
            assert_eq!(r.t.to_bits(), s.t.to_bits());
            assert_eq!(r.err_l2.to_bits(), s.err_l2.to_bits());
            assert_eq!(r.kl.to_bits(), s.kl.to_bits());
            assert_eq!(r.mass.to_bits(), s.mass.to_bits());
            assert_eq!((r.bound_lhs, r.bound_ok), (None, None));
        }
    }

    #[test]
    fn empty_sweep_table_is_header_only() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("sensing_radius_pi,kp,ki,"));
    }

    #[test]
    fn sweep_rows_round_trip() {
        let row = SweepRow {
            sensing_radius_pi: 0.1 + 0.2,
            kp: 10.0,
            ki: 0.1,
            disturbance_amplitude: 0.0,
            controller_kernel: "f2".into(),
            seed: u64::MAX,
            status: "ok".into(),
            kl_terminal: Some(1.0 / 7.0),
            err_l2_initial: Some(3.5),
            err_l2_terminal: None,
            mass_terminal: Some(100.0),
            clipped_mass: Some(0.0),
            bound_kind: Some(BoundKind::KernelPerturbation),
            bound_violations: Some(0),
            bound_ok: Some(true),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sweep_csv(File::create(&path).unwrap(), &[row.clone()]).unwrap();
        assert_eq!(read_sweep(&path).unwrap(), vec![row]);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert_eq!(read_metrics(&path).unwrap_err().category(), "invalid-input");
    }

    #[test]
    fn missing_file_is_an_io_error_with_path() {
        let err = read_metrics(Path::new("/nonexistent/metrics.csv")).unwrap_err();
        assert_eq!(err.category(), "io");
        assert!(err.to_string().contains("/nonexistent/metrics.csv"));
    }
}
