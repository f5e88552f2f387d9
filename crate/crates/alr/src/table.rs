//! Numeric CSV datasets: one sample per row, one integer label column.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dim: usize,
    /// `rows x dim`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One more than the largest label.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

pub fn read_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, file, label_column, has_header)
}

pub fn parse_csv<R: std::io::Read>(path: &Path, src: R, label_column: usize, has_header: bool) -> Result<Table> {
    let fail = |line: u64, detail: String| Error::Format {
        path: path.to_path_buf(),
        position: format!("line {line}"),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(src);
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() <= label_column {
            return Err(fail(line, format!("no column {label_column} in a row of {} cells", record.len())));
        }
        let width = record.len() - 1;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(fail(line, format!("{} cells, expected {}", record.len(), d + 1)))
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            if col == label_column {
                let label = cell
                    .parse::<usize>()
                    .map_err(|_| fail(line, format!("label `{cell}` is not a non-negative integer")))?;
                labels.push(label);
            } else {
                let v = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| fail(line, format!("column {col}: `{cell}` is not a finite number")))?;
                features.push(v);
            }
        }
    }
    match dim {
        None => Err(fail(1, "no data rows".into())),
        Some(0) => Err(fail(1, "rows have no feature columns".into())),
        Some(dim) => Ok(Table {
            dim,
            features,
            labels,
        }),
    }
}
