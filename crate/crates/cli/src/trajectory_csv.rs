//! Trajectory CSV: `k,x1..xn,u1..um,J_star,status,iterations`, one row per
//! step plus a final state-only row.

use std::io::{Read, Write};

use mpc_core::controller::{StepStatus, Trajectory};
use mpc_core::Vector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed trajectory csv: {0}")]
    Format(String),
}

/// Reals with 17 significant digits, enough to round-trip any f64.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend(["J_star", "status", "iterations"].map(String::from));
    h
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, n: usize, m: usize, out: W) -> Result<(), CsvError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header(n, m))?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|&v| format_real(v)));
        match traj.inputs.get(k) {
            Some(u) => {
                row.extend(u.iter().map(|&v| format_real(v)));
                row.push(format_real(traj.costs[k]));
                row.push(traj.statuses[k].to_string());
                row.push(traj.iterations[k].to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), m + 3)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn trajectory_to_string(traj: &Trajectory, n: usize, m: usize) -> Result<String, CsvError> {
    let mut buf = Vec::new();
    write_trajectory(traj, n, m, &mut buf)?;
    String::from_utf8(buf).map_err(|e| CsvError::Format(e.to_string()))
}

fn real(s: &str) -> Result<f64, CsvError> {
    s.parse().map_err(|_| CsvError::Format(format!("not a number: {s:?}")))
}

/// Reads a trajectory written by [`write_trajectory`]. Plans and the
/// reference are not stored in the CSV and come back empty.
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory, CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let head = r.headers()?.clone();
    let n = head.iter().filter(|h| h.starts_with('x')).count();
    let m = head.iter().filter(|h| h.starts_with('u')).count();
    if head.len() != n + m + 4 {
        return Err(CsvError::Format("unexpected header".into()));
    }
    let mut traj = Trajectory::default();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.get(0).map(str::parse::<usize>) != Some(Ok(k)) {
            return Err(CsvError::Format(format!("row {k} has the wrong step index")));
        }
        let x: Vec<f64> = (1..=n).map(|i| real(&rec[i])).collect::<Result<_, _>>()?;
        traj.states.push(Vector::from_vec(x));
        if rec[n + 1].is_empty() {
            continue;
        }
        let u: Vec<f64> = (n + 1..=n + m).map(|i| real(&rec[i])).collect::<Result<_, _>>()?;
        traj.inputs.push(Vector::from_vec(u));
        traj.costs.push(real(&rec[n + m + 1])?);
        let status = StepStatus::parse(&rec[n + m + 2])
            .ok_or_else(|| CsvError::Format(format!("unknown status {:?}", &rec[n + m + 2])))?;
        traj.statuses.push(status);
        traj.iterations.push(
            rec[n + m + 3]
                .parse()
                .map_err(|_| CsvError::Format("bad iteration count".into()))?,
        );
    }
    if traj.states.len() != traj.inputs.len() + 1 {
        return Err(CsvError::Format("expected exactly one state-only final row".into()));
    }
    Ok(traj)
}
