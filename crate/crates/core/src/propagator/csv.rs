//! Control and trajectory CSV files.
//!
//! Controls: header `t,u,n1,n2`, one row per interval, `t` the left endpoint.
//! State trajectories: header `t,x1,…,x16`. Channel trajectories:
//! header `t,psi_1_1,…,psi_16_16` in row-major order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ChannelTrajectory, ControlGrid, ControlVector, StateTrajectory};
use crate::{Error, Result};

/// Controls read from a file, with the time column kept for grid checks.
#[derive(Clone, Debug)]
pub struct ControlTable {
    pub times: Vec<f64>,
    pub controls: ControlVector,
}

impl ControlTable {
    /// Checks the row count and left-endpoint times against `grid`.
    pub fn check_grid(&self, grid: &ControlGrid) -> Result<()> {
        self.controls.validate(grid)?;
        let tol = 1e-9 * grid.t_final.max(1.0);
        for (k, &t) in self.times.iter().enumerate() {
            if (t - grid.time(k)).abs() > tol {
                return Err(Error::InvalidControls(format!(
                    "row {}: t = {t} does not match grid time {}",
                    k + 1,
                    grid.time(k)
                )));
            }
        }
        Ok(())
    }
}

fn csv_err(label: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Csv { path: label.to_string(), line, message: message.into() }
}

fn from_csv_error(label: &str, e: ::csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        kind => csv_err(label, line, format!("{kind:?}")),
    }
}

/// Parses a control table; `label` names the source in error messages.
pub fn parse_controls<R: Read>(reader: R, label: &str) -> Result<ControlTable> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| from_csv_error(label, e))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["t", "u", "n1", "n2"] {
        return Err(csv_err(label, 1, format!("expected header t,u,n1,n2, found {}", names.join(","))));
    }
    let mut times = Vec::new();
    let mut f = ControlVector::zeros(0);
    for record in rdr.records() {
        let record = record.map_err(|e| from_csv_error(label, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut values = [0.0; 4];
        for (i, field) in record.iter().enumerate() {
            values[i] = field
                .parse::<f64>()
                .map_err(|_| csv_err(label, line, format!("column {}: cannot parse {field:?}", names[i])))?;
            if !values[i].is_finite() {
                return Err(csv_err(label, line, format!("column {}: value is not finite", names[i])));
            }
        }
        for (i, name) in [(2, "n1"), (3, "n2")] {
            if values[i] < 0.0 {
                return Err(csv_err(label, line, format!("{name} = {} is negative", values[i])));
            }
        }
        times.push(values[0]);
        f.u.push(values[1]);
        f.n1.push(values[2]);
        f.n2.push(values[3]);
    }
    if times.is_empty() {
        return Err(csv_err(label, 1, "no control rows"));
    }
    Ok(ControlTable { times, controls: f })
}

pub fn read_controls(path: &Path) -> Result<ControlTable> {
    parse_controls(File::open(path)?, &path.display().to_string())
}

pub fn write_controls_to<W: Write>(writer: W, grid: &ControlGrid, f: &ControlVector) -> Result<()> {
    f.validate(grid)?;
    let mut w = ::csv::Writer::from_writer(writer);
    let io = |e: ::csv::Error| from_csv_error("output", e);
    w.write_record(["t", "u", "n1", "n2"]).map_err(io)?;
    for k in 0..grid.intervals {
        w.write_record(
            [grid.time(k), f.u[k], f.n1[k], f.n2[k]].iter().map(|v| format!("{v:e}")),
        )
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_controls(path: &Path, grid: &ControlGrid, f: &ControlVector) -> Result<()> {
    write_controls_to(File::create(path)?, grid, f)
}

pub fn write_state_trajectory(path: &Path, traj: &StateTrajectory) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path).map_err(|e| from_csv_error("output", e))?;
    let io = |e: ::csv::Error| from_csv_error("output", e);
    let mut header = vec!["t".to_string()];
    header.extend((1..=16).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(io)?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let row = std::iter::once(*t).chain(x.0.iter().copied()).map(|v| format!("{v:e}"));
        w.write_record(row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_channel_trajectory(path: &Path, traj: &ChannelTrajectory) -> Result<()> {
    let mut w = ::csv::Writer::from_path(path).map_err(|e| from_csv_error("output", e))?;
    let io = |e: ::csv::Error| from_csv_error("output", e);
    let mut header = vec!["t".to_string()];
    for i in 1..=16 {
        header.extend((1..=16).map(|j| format!("psi_{i}_{j}")));
    }
    w.write_record(&header).map_err(io)?;
    for (t, psi) in traj.times.iter().zip(&traj.checkpoints) {
        let mut row = vec![format!("{t:e}")];
        for i in 0..16 {
            row.extend((0..16).map(|j| format!("{:e}", psi[(i, j)])));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let grid = ControlGrid::new(2.0, 3).unwrap();
        let f = ControlVector {
            u: vec![0.1, -1.0 / 3.0, 1e-17],
            n1: vec![0.0, 2.5, std::f64::consts::PI],
            n2: vec![1.0, 0.0, 7.25e3],
        };
        let mut buf = Vec::new();
        write_controls_to(&mut buf, &grid, &f).unwrap();
        let table = parse_controls(buf.as_slice(), "mem").unwrap();
        assert_eq!(table.controls, f);
        table.check_grid(&grid).unwrap();
    }

    #[test]
    fn negative_incoherent_control_reports_line() {
        let text = "t,u,n1,n2\n0,0.5,0.1,0.2\n1,0.5,-0.1,0.2\n";
        match parse_controls(text.as_bytes(), "c.csv") {
            Err(Error::Csv { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("n1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let bad_header = "t,u,n\n0,1,2\n";
        assert!(matches!(parse_controls(bad_header.as_bytes(), "x"), Err(Error::Csv { line: 1, .. })));
        let bad_number = "t,u,n1,n2\n0,abc,0,0\n";
        assert!(matches!(parse_controls(bad_number.as_bytes(), "x"), Err(Error::Csv { line: 2, .. })));
        let short_row = "t,u,n1,n2\n0,1,0,0\n1,1,0\n";
        assert!(matches!(parse_controls(short_row.as_bytes(), "x"), Err(Error::Csv { line: 3, .. })));
        let empty = "t,u,n1,n2\n";
        assert!(parse_controls(empty.as_bytes(), "x").is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let text = "t,u,n1,n2\n0,0,0,0\n0.7,0,0,0\n";
        let table = parse_controls(text.as_bytes(), "x").unwrap();
        assert!(table.check_grid(&ControlGrid::new(1.0, 2).unwrap()).is_err());
        assert!(table.check_grid(&ControlGrid::new(1.4, 2).unwrap()).is_ok());
        assert!(table.check_grid(&ControlGrid::new(1.4, 3).unwrap()).is_err());
    }
}
