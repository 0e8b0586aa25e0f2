use std::io::Read;
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

/// Reads a CSV with a header of `f0..f{dim-1}` feature columns (in order)
/// and an optional `label` column. An empty label marks the row unlabeled.
pub fn load_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("csv header: {e}")))?
        .clone();

    let mut label_col = None;
    let mut feature_cols = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if name == "label" {
            if label_col.replace(i).is_some() {
                return Err(Error::Parse("duplicate `label` column".into()));
            }
        } else {
            let expected = format!("f{}", feature_cols.len());
            if name != expected {
                return Err(Error::Parse(format!(
                    "column {i}: expected `{expected}` or `label`, found `{name}`"
                )));
            }
            feature_cols.push(i);
        }
    }
    let dim = feature_cols.len();
    if dim == 0 {
        return Err(Error::Parse("no feature columns".into()));
    }

    let mut samples = Vec::new();
    let mut max_label = None;
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let x = feature_cols
            .iter()
            .map(|&c| {
                let field = &record[c];
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("line {line}: bad feature value `{field}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let y = match label_col.map(|c| &record[c]) {
            None | Some("") => None,
            Some(field) => {
                let y = field
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("line {line}: bad label `{field}`")))?;
                max_label = max_label.max(Some(y));
                Some(y)
            }
        };
        samples.push(Sample { x, y });
    }

    let classes = match max_label {
        Some(m) => m
            .checked_add(1)
            .ok_or_else(|| Error::Parse("label out of range".into()))?,
        None => 0,
    };
    Ok(Dataset { samples, classes, dim })
}

pub fn load_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv(std::io::BufReader::new(file))
}
