use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{CareError, Result};

/// Which column, if any, holds the ground-truth labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    None,
    Last,
    /// 0-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub label_column: LabelColumn,
    /// When set, label cells equal to this text map to 1 and all other text
    /// maps to 0. Otherwise label cells must be numeric 0 or 1.
    pub outlier_label: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            label_column: LabelColumn::None,
            outlier_label: None,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CareError {
    CareError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a rectangular numeric table. A first line with any non-numeric
/// feature cell is treated as a header.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(options.delimiter)
        .from_reader(file);

    let mut records: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CareError::Structure(format!("{}: {e}", path.display())),
            _ => CareError::Structure(e.to_string()),
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(CareError::Structure(format!("{} is empty", path.display())));
    }

    let width = records[0].1.len();
    let label_idx = |header: Option<&csv::StringRecord>| -> Result<Option<usize>> {
        match &options.label_column {
            LabelColumn::None => Ok(None),
            LabelColumn::Last => Ok(Some(width - 1)),
            LabelColumn::Index(i) if *i < width => Ok(Some(*i)),
            LabelColumn::Index(i) => Err(CareError::param(format!(
                "label column {i} out of range for {width} columns"
            ))),
            LabelColumn::Name(name) => {
                let header = header.ok_or_else(|| {
                    CareError::param(format!("label column '{name}' needs a header row"))
                })?;
                header
                    .iter()
                    .position(|h| h.trim() == name)
                    .map(Some)
                    .ok_or_else(|| CareError::param(format!("no column named '{name}'")))
            }
        }
    };

    // Header detection ignores the label column when its position is known
    // without a header, since text labels are allowed there.
    let provisional = match options.label_column {
        LabelColumn::Last => Some(width - 1),
        LabelColumn::Index(i) => Some(i),
        _ => None,
    };
    let first = &records[0].1;
    let has_header = matches!(options.label_column, LabelColumn::Name(_))
        || first
            .iter()
            .enumerate()
            .any(|(j, c)| Some(j) != provisional && c.trim().parse::<f64>().is_err());

    let (header, body) = if has_header {
        (Some(&records[0].1), &records[1..])
    } else {
        (None, &records[..])
    };
    let label_col = label_idx(header)?;
    let d = width - usize::from(label_col.is_some());
    if d == 0 {
        return Err(CareError::Structure("no feature columns".into()));
    }

    let mut values = Vec::with_capacity(body.len() * d);
    let mut labels = label_col.map(|_| Vec::with_capacity(body.len()));
    for (line, rec) in body {
        if rec.len() != width {
            return Err(CareError::Structure(format!(
                "row {line} has {} columns, expected {width}",
                rec.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if Some(j) == label_col {
                let label = parse_label(cell, options.outlier_label.as_deref())
                    .ok_or_else(|| CareError::Parse {
                        row: *line,
                        column: j + 1,
                        message: format!("label '{cell}' is not 0 or 1"),
                    })?;
                if let Some(l) = labels.as_mut() {
                    l.push(label);
                }
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| CareError::Parse {
                row: *line,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CareError::invalid(format!(
                    "non-finite value at row {line}, column {}",
                    j + 1
                )));
            }
            values.push(v);
        }
    }

    let names = header.map(|h| {
        h.iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_col)
            .map(|(_, s)| s.trim().to_string())
            .collect::<Vec<_>>()
    });
    let points = Array2::from_shape_vec((body.len(), d), values)
        .map_err(|e| CareError::Structure(e.to_string()))?;
    Dataset::new(points, labels, names)
}

fn parse_label(cell: &str, outlier_label: Option<&str>) -> Option<u8> {
    if let Some(tag) = outlier_label {
        return Some(u8::from(cell == tag));
    }
    match cell.parse::<f64>() {
        Ok(v) if v == 0.0 => Some(0),
        Ok(v) if v == 1.0 => Some(1),
        _ => None,
    }
}

/// Writes the dataset as comma-separated text, labels (if any) in the last
/// column. Values use the shortest representation that parses back exactly.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut text = String::new();
    if let Some(names) = dataset.feature_names() {
        text.push_str(&names.join(","));
        if dataset.labels().is_some() {
            text.push_str(",label");
        }
        text.push('\n');
    }
    for (i, row) in dataset.points().rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(","));
        if let Some(labels) = dataset.labels() {
            text.push_str(&format!(",{}", labels[i]));
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_two_rows() {
        let f = temp_file("1.0\n2.0\n");
        let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 1));
        assert!(ds.labels().is_none());
    }

    #[test]
    fn parse_error_names_location() {
        let f = temp_file("1,2\n3,4\n5,abc\n");
        match load_csv(f.path(), &CsvOptions::default()).unwrap_err() {
            CareError::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_structural() {
        let f = temp_file("1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &CsvOptions::default()).unwrap_err(),
            CareError::Structure(_)
        ));
    }

    #[test]
    fn nan_is_validation_error() {
        let f = temp_file("1,2\nNaN,4\n");
        assert!(matches!(
            load_csv(f.path(), &CsvOptions::default()).unwrap_err(),
            CareError::Validation(_)
        ));
    }

    #[test]
    fn header_and_last_label() {
        let f = temp_file("a,b,y\n1,2,0\n3,4,1\n5,6,0\n");
        let opts = CsvOptions {
            label_column: LabelColumn::Last,
            ..Default::default()
        };
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!((ds.n(), ds.d()), (3, 2));
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn text_labels_need_mapping() {
        let f = temp_file("1;2;o\n3;4;n\n");
        let mut opts = CsvOptions {
            delimiter: b';',
            label_column: LabelColumn::Index(2),
            outlier_label: None,
        };
        assert!(matches!(
            load_csv(f.path(), &opts).unwrap_err(),
            CareError::Parse { row: 1, column: 3, .. }
        ));
        opts.outlier_label = Some("o".into());
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!(ds.labels().unwrap(), &[1, 0]);
    }

    #[test]
    fn label_by_name() {
        let f = temp_file("y,a\n1,0.5\n0,0.25\n");
        let opts = CsvOptions {
            label_column: LabelColumn::Name("y".into()),
            ..Default::default()
        };
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!(ds.labels().unwrap(), &[1, 0]);
        assert_eq!(ds.points()[[1, 0]], 0.25);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/x.csv", &CsvOptions::default()).unwrap_err();
        assert!(err.is_data_error());
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }
}
