//! The per-round metrics CSV.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::format_f64;

pub const METRICS_HEADER: [&str; 6] =
    ["round", "epsilon", "train_loss", "test_loss", "test_accuracy", "wall_seconds"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub epsilon: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(METRICS_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            format_f64(r.epsilon),
            format_f64(r.train_loss),
            format_f64(r.test_loss),
            format_f64(r.test_accuracy),
            format_f64(r.wall_seconds),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("unexpected metrics header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse { line, msg: format!("bad number '{}'", &rec[k]) })
        };
        rows.push(MetricsRow {
            round: rec[0].parse().map_err(|_| Error::Parse { line, msg: format!("bad round '{}'", &rec[0]) })?,
            epsilon: num(1)?,
            train_loss: num(2)?,
            test_loss: num(3)?,
            test_accuracy: num(4)?,
            wall_seconds: num(5)?,
        });
    }
    Ok(rows)
}
