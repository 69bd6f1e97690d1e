//! Synthetic datasets, train/test splits and the feature CSV format.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{format_f64, Example};

/// Two unit-covariance Gaussian clusters at `-(separation/2) u` (label 0) and
/// `+(separation/2) u` (label 1) for a random unit vector `u`. Labels
/// alternate, so the classes differ in size by at most one.
pub fn generate_synthetic<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    separation: f64,
    rng: &mut R,
) -> Result<Vec<Example>> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 examples, got {n}")));
    }
    if d < 4 {
        return Err(Error::invalid(format!("need at least 4 features, got {d}")));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::invalid(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let sign = if label == 1 { 0.5 } else { -0.5 };
            let features = u
                .iter()
                .map(|&c| sign * separation * c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Example::new(features, label)
        })
        .collect()
}

/// Shuffles and splits off `round(M * test_fraction)` test examples.
/// Returns `(train, test)`.
pub fn train_test_split<R: Rng + ?Sized>(
    mut examples: Vec<Example>,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let n_test = (examples.len() as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == examples.len() {
        return Err(Error::invalid(format!(
            "{} examples cannot be split with test fraction {test_fraction}",
            examples.len()
        )));
    }
    examples.shuffle(rng);
    let test = examples.split_off(examples.len() - n_test);
    Ok((examples, test))
}

/// Writes `f1,...,fd,label` rows with 17 significant digits.
pub fn write_features_csv<W: Write>(examples: &[Example], out: W) -> Result<()> {
    let d = examples.first().map_or(0, |e| e.features().len());
    if examples.iter().any(|e| e.features().len() != d) {
        return Err(Error::invalid("examples have different feature counts"));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let header: Vec<String> = (1..=d).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
    w.write_record(&header).map_err(csv_io)?;
    for e in examples {
        let row: Vec<String> = e
            .features()
            .iter()
            .map(|&v| format_f64(v))
            .chain([e.label().to_string()])
            .collect();
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_features_csv(examples: &[Example], path: &Path) -> Result<()> {
    write_features_csv(examples, std::fs::File::create(path)?)
}

/// Parses the dataset CSV. A header-only file yields no examples.
pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<Example>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
        Some(r) => r.map_err(|e| csv_parse(e, 1))?,
    };
    let width = header.len();
    if width < 2 || header.get(width - 1).map(str::trim) != Some("label") {
        return Err(Error::Parse { line: 1, msg: "header must be f1,...,fd,label".into() });
    }
    let mut out = Vec::new();
    for (i, record) in records.enumerate() {
        let fallback = i + 2;
        let record = record.map_err(|e| csv_parse(e, fallback))?;
        let line = record.position().map_or(fallback, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} columns, got {}", record.len()),
            });
        }
        let features = record
            .iter()
            .take(width - 1)
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line, msg: format!("bad feature value '{t}'") })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = match record.get(width - 1).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("label must be 0 or 1, got '{}'", other.unwrap_or("")),
                })
            }
        };
        out.push(Example::new(features, label)?);
    }
    Ok(out)
}

pub fn load_features_csv(path: &Path) -> Result<Vec<Example>> {
    read_features_csv(std::fs::File::open(path)?)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_parse(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, msg: format!("{kind:?}") },
    }
}
