use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{Activation, StudentEnsemble};
use crate::trainer::TraceRecord;

pub const TRACE_HEADER: [&str; 11] = [
    "iter",
    "stage",
    "emp_loss",
    "L0",
    "L1",
    "L2",
    "L4",
    "L6",
    "tail",
    "max_norm_sq",
    "frac_truncated",
];

/// 17 significant digits, enough for an exact round trip.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.stage.to_string(),
            real(r.emp_loss),
            real(r.l0),
            real(r.l1),
            real(r.l2),
            real(r.l4),
            real(r.l6),
            real(r.tail),
            real(r.max_norm_sq),
            real(r.frac_truncated),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 1;
        if i == 0 {
            if row.iter().ne(TRACE_HEADER.iter().copied()) {
                return Err(parse_err(line, "header does not match the trace schema".into()));
            }
            saw_header = true;
            continue;
        }
        if row.len() != TRACE_HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, got {}", TRACE_HEADER.len(), row.len())));
        }
        let f = |k: usize| -> Result<f64> {
            row[k]
                .parse()
                .map_err(|_| parse_err(line, format!("bad `{}` value `{}`", TRACE_HEADER[k], &row[k])))
        };
        out.push(TraceRecord {
            iter: row[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad `iter` value `{}`", &row[0])))?,
            stage: row[1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad `stage` value `{}`", &row[1])))?,
            emp_loss: f(2)?,
            l0: f(3)?,
            l1: f(4)?,
            l2: f(5)?,
            l4: f(6)?,
            l6: f(7)?,
            tail: f(8)?,
            max_norm_sq: f(9)?,
            frac_truncated: f(10)?,
        });
    }
    if !saw_header {
        return Err(parse_err(1, "missing header".into()));
    }
    Ok(out)
}

/// Weights as CSV, one neuron per row, preceded by a `w0,…` header and an
/// `# activation=…` comment line.
pub fn write_ensemble(ensemble: &StudentEnsemble, path: &Path) -> Result<()> {
    let mut text = format!("# activation={}\n", ensemble.activation());
    let header: Vec<String> = (0..ensemble.dim()).map(|k| format!("w{k}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in ensemble.weights().outer_iter() {
        let cells: Vec<String> = row.iter().map(|&v| real(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ensemble(path: &Path) -> Result<StudentEnsemble> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let act: Activation = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("# activation=")
            .ok_or_else(|| err(1, "missing `# activation=` line".into()))?
            .parse()
            .map_err(|e: Error| err(1, e.to_string()))?,
        None => return Err(err(1, "empty file".into())),
    };
    let d = match lines.next() {
        Some((_, l)) => l.split(',').count(),
        None => return Err(err(2, "missing header".into())),
    };
    let mut vals = Vec::new();
    let mut rows = 0;
    for (i, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = l.split(',').collect();
        if cells.len() != d {
            return Err(err(i + 1, format!("expected {d} fields, got {}", cells.len())));
        }
        for c in cells {
            vals.push(c.trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad value `{c}`")))?);
        }
        rows += 1;
    }
    let w = Array2::from_shape_vec((rows, d), vals).map_err(|e| err(0, e.to_string()))?;
    StudentEnsemble::new(w, act)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize) -> TraceRecord {
        TraceRecord {
            iter: i,
            stage: 1,
            emp_loss: 0.1 + i as f64 / 3.0,
            l0: 1e-300,
            l1: 0.0,
            l2: std::f64::consts::PI,
            l4: 1.0 / 7.0,
            l6: 2.5e-17,
            tail: 1e-4,
            max_norm_sq: 1.2345678901234567,
            frac_truncated: 0.25,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let recs: Vec<_> = (0..5).map(rec).collect();
        write_trace(&recs, &p).unwrap();
        assert_eq!(read_trace(&p).unwrap(), recs);
        write_trace(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), TRACE_HEADER.join(",") + "\n");
        assert!(read_trace(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&[rec(0), rec(1)], &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("3,1,oops,0,0,0,0,0,0,0,0\n");
        std::fs::write(&p, text).unwrap();
        match read_trace(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
