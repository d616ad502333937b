//! CSV serialization of particle snapshots and run telemetry.
//!
//! Snapshot columns: `iteration,particle_id,x_0..x_{d-1},v_0..v_{d-1},det_F,log_density`.
//! Numbers are written as shortest round-trip decimals, so a write/read cycle
//! is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::sampler::{Sampler, TelemetryRow};
use crate::scalar::Real;

pub const TELEMETRY_HEADER: &str = "iteration,mean_log_density,kinetic_energy,f_reset_count,wall_ms";

/// Shortest decimal that parses back to the same `f64`. Plain notation for
/// moderate magnitudes, scientific otherwise.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn snapshot_header(dimension: usize) -> String {
    let mut h = String::from("iteration,particle_id");
    for a in 0..dimension {
        let _ = write!(h, ",x_{a}");
    }
    for a in 0..dimension {
        let _ = write!(h, ",v_{a}");
    }
    h.push_str(",det_F,log_density");
    h
}

/// File name used for the snapshot of `iteration` inside a run's output.
pub fn snapshot_file_name(iteration: usize) -> String {
    format!("snapshot_{iteration:06}.csv")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub particle_id: usize,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub det_f: f64,
    pub log_density: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub dimension: usize,
    pub rows: Vec<SnapshotRow>,
}

impl Snapshot {
    pub fn from_sampler<S: Real>(sampler: &Sampler<S>) -> Self {
        let logs = sampler.log_densities();
        let rows = sampler
            .particles()
            .iter()
            .zip(logs)
            .enumerate()
            .map(|(id, (p, log))| SnapshotRow {
                particle_id: id,
                position: p.position.iter().map(|x| x.to_f64_lossy()).collect(),
                velocity: p.velocity.iter().map(|x| x.to_f64_lossy()).collect(),
                det_f: p.deformation.determinant().to_f64_lossy(),
                log_density: log.to_f64_lossy(),
            })
            .collect();
        Snapshot {
            iteration: sampler.iteration(),
            dimension: sampler.config().simulation.dimension,
            rows,
        }
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.position.clone()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = snapshot_header(self.dimension);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", self.iteration, r.particle_id);
            for &x in r.position.iter().chain(&r.velocity) {
                out.push(',');
                out.push_str(&format_f64(x));
            }
            let _ = writeln!(out, ",{},{}", format_f64(r.det_f), format_f64(r.log_density));
        }
        out
    }

    /// Parses snapshot CSV text; the dimension is inferred from the header.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or("empty snapshot file")?;
        let columns = header.split(',').count();
        if columns < 4 || (columns - 4) % 2 != 0 {
            return Err(format!("unexpected header '{header}'"));
        }
        let dimension = (columns - 4) / 2;
        if header != snapshot_header(dimension) {
            return Err(format!(
                "header '{header}' does not match '{}'",
                snapshot_header(dimension)
            ));
        }
        let mut iteration = None;
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(format!("line {lineno}: expected {columns} fields, found {}", fields.len()));
            }
            let int = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("line {lineno}: invalid integer '{s}'"))
            };
            let float = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("line {lineno}: invalid number '{s}'"))
            };
            let it = int(fields[0])?;
            match iteration {
                None => iteration = Some(it),
                Some(prev) if prev != it => {
                    return Err(format!("line {lineno}: iteration {it} differs from {prev}"));
                }
                _ => {}
            }
            let values = fields[2..]
                .iter()
                .map(|s| float(s))
                .collect::<Result<Vec<f64>, String>>()?;
            rows.push(SnapshotRow {
                particle_id: int(fields[1])?,
                position: values[..dimension].to_vec(),
                velocity: values[dimension..2 * dimension].to_vec(),
                det_f: values[2 * dimension],
                log_density: values[2 * dimension + 1],
            });
        }
        Ok(Snapshot {
            iteration: iteration.unwrap_or(0),
            dimension,
            rows,
        })
    }
}

pub fn write_snapshot(snapshot: &Snapshot, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    fs::write(path, snapshot.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot, Error> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Snapshot::parse(&text).map_err(|message| Error::Format {
        path: path.display().to_string(),
        message,
    })
}

/// Telemetry CSV. With `redact_wall_time` the wall_ms column is written as 0
/// so that repeated runs produce identical files.
pub fn telemetry_csv(rows: &[TelemetryRow], redact_wall_time: bool) -> String {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for r in rows {
        let wall = if redact_wall_time { 0.0 } else { r.wall_ms };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration,
            format_f64(r.mean_log_density),
            format_f64(r.kinetic_energy),
            r.f_reset_count,
            format_f64(wall)
        );
    }
    out
}

pub fn write_telemetry(rows: &[TelemetryRow], redact_wall_time: bool, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    fs::write(path, telemetry_csv(rows, redact_wall_time)).map_err(|e| Error::io(path, e))
}
