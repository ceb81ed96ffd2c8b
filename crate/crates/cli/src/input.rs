//! CSV ingestion: header `y,d,x1..xd`, one unit per row, no empty cells.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use isopsm::{ObservationSet, RawRecord};

use crate::CliError;

pub fn read_path(path: &Path) -> Result<ObservationSet, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read(file)
}

pub fn read<R: Read>(source: R) -> Result<ObservationSet, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    check_header(&names)?;

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let row = row + 1;
        let record = result.map_err(|e| CliError::Data(format!("data row {row}: {e}")))?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        let at = || format!("line {line} (data row {row})");
        if record.len() != names.len() {
            return Err(CliError::Data(format!(
                "{}: expected {} cells, found {}",
                at(),
                names.len(),
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(names.len());
        for (cell, name) in record.iter().zip(&names) {
            if cell.is_empty() {
                return Err(CliError::Data(format!("{}: empty cell in column `{name}`", at())));
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: cannot parse `{cell}` in column `{name}` as a number",
                    at()
                ))
            })?;
            values.push(v);
        }
        records.push(RawRecord::new(values[0], values[1], values[2..].to_vec()));
    }
    ObservationSet::validate(&records).map_err(|e| CliError::Core(e, "input".into()))
}

fn check_header(names: &[&str]) -> Result<(), CliError> {
    let expected: Vec<String> = ["y".to_string(), "d".to_string()]
        .into_iter()
        .chain((1..names.len().saturating_sub(1)).map(|j| format!("x{j}")))
        .collect();
    if names.len() < 3 || names.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(CliError::Data(format!(
            "header must be `y,d,x1,...,xd` with d >= 1, found `{}`",
            names.join(",")
        )));
    }
    Ok(())
}
