//! CSV input and output helpers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fallfact::experiments::fmt17;

use crate::Failure;

fn open(path: &Path) -> Result<csv::Reader<File>, Failure> {
    let file = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file))
}

/// Reads numeric rows of exactly `width` fields. A first row that does not parse
/// is taken as a header; blank lines are skipped.
pub fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let mut rows = Vec::new();
    for (line, record) in open(path)?.records().enumerate() {
        let record = record.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) if values.len() == width => rows.push(values),
            Ok(values) => {
                return Err(Failure::Io(format!(
                    "{}: line {} has {} columns, expected {width}",
                    path.display(),
                    line + 1,
                    values.len()
                )))
            }
            Err(_) if line == 0 && rows.is_empty() => continue,
            Err(_) => return Err(Failure::Io(format!("{}: line {} is not numeric", path.display(), line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Failure::Io(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn read_column(path: &Path) -> Result<Vec<f64>, Failure> {
    Ok(read_rows(path, 1)?.into_iter().map(|r| r[0]).collect())
}

/// Two-column `x,y` data.
pub fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    Ok(read_rows(path, 2)?.into_iter().map(|r| (r[0], r[1])).unzip())
}

pub fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let file = File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// Writes a header and float columns of equal length.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<(), Failure> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(header).map_err(io_err(path))?;
    let len = columns.first().map_or(0, |c| c.len());
    for i in 0..len {
        out.write_record(columns.iter().map(|c| fmt17(c[i]))).map_err(io_err(path))?;
    }
    out.flush().map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}
