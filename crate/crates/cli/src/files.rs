//! On-disk formats owned by the command line tool.
//!
//! Trajectory CSV: header `u_1..u_m,x_1..x_n`, one row per sample holding
//! the input applied at k and the state at k. The final row holds the
//! terminal state and leaves the input fields empty.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ddguard_core::datamodel::{Trajectory, TrajectorySet};
use ddguard_core::sim::{polygon_area, vertex_rows, SimLog};
use ddguard_core::stc::RoscFamily;
use nalgebra::DMatrix;

pub const MODEL_FILE: &str = "model_set.json";
pub const REPORT_FILE: &str = "identify_report.json";
pub const FAMILY_FILE: &str = "family.json";
pub const SETS_FILE: &str = "sets.csv";

pub fn trajectory_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trajectory_{}.csv", index + 1))
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let (m, n) = (t.inputs.nrows(), t.states.nrows());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let header: Vec<String> = (1..=m)
        .map(|i| format!("u_{i}"))
        .chain((1..=n).map(|i| format!("x_{i}")))
        .collect();
    w.write_record(&header)?;
    for k in 0..=t.len() {
        let mut row: Vec<String> = if k < t.len() {
            t.inputs.column(k).iter().map(|v| num(*v)).collect()
        } else {
            vec![String::new(); m]
        };
        row.extend(t.states.column(k).iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path, n: usize, m: usize) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let width = r.headers()?.len();
    if width != n + m {
        bail!("{}: expected {} columns, found {width}", path.display(), n + m);
    }
    let mut inputs: Vec<f64> = Vec::new();
    let mut states: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut saw_terminal = false;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = || format!("{} row {}", path.display(), line + 2);
        if saw_terminal {
            bail!("{}: data after the terminal-state row", at());
        }
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: column {}", at(), i + 1))
        };
        if rec.iter().take(m).all(|s| s.trim().is_empty()) {
            saw_terminal = true;
        } else {
            for i in 0..m {
                inputs.push(field(i)?);
            }
        }
        for i in m..m + n {
            states.push(field(i)?);
        }
        rows += 1;
    }
    if !saw_terminal || rows == 0 {
        bail!("{}: missing the terminal-state row", path.display());
    }
    let samples = rows - 1;
    Ok(Trajectory::new(
        DMatrix::from_column_slice(m, samples, &inputs),
        DMatrix::from_column_slice(n, rows, &states),
    )?)
}

/// Reads `trajectory_1.csv` through `trajectory_<count>.csv`.
pub fn read_trajectories(dir: &Path, count: usize, n: usize, m: usize) -> Result<TrajectorySet> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let p = trajectory_path(dir, i);
        if !p.exists() {
            bail!("missing trajectory file {}", p.display());
        }
        out.push(read_trajectory(&p, n, m)?);
    }
    Ok(TrajectorySet::new(n, m, out)?)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_log(dir: &Path, stem: &str, log: &SimLog) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    w.write_record(log.csv_header())?;
    for row in log.csv_rows() {
        w.write_record(&row)?;
    }
    w.flush()?;
    write_text(&dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(log)?)
}

/// Vertices of every level as `level,vertex,x_1..x_n`; returns per-level areas
/// for planar families.
pub fn write_sets(path: &Path, fam: &RoscFamily) -> Result<Vec<f64>> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["level".to_string(), "vertex".to_string()];
    header.extend((1..=fam.n).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    let mut areas = Vec::new();
    for j in 0..=fam.num_levels() {
        let verts = vertex_rows(fam.state_set(j))?;
        for (v, row) in verts.iter().enumerate() {
            let mut rec = vec![j.to_string(), v.to_string()];
            rec.extend(row.iter().map(|x| num(*x)));
            w.write_record(&rec)?;
        }
        if fam.n == 2 {
            areas.push(polygon_area(&verts));
        }
    }
    w.flush()?;
    Ok(areas)
}
