//! CSV datasets and artifacts. Datasets carry a header row: `x_1..x_H,y`
//! for regression and `x_1..x_H,label` (integers from 1) for
//! classification. Every malformed row is reported with its line number.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use deelbo::data::{ClassificationData, RegressionData};
use deelbo::variational::{TraceRow, TRACE_COLUMNS};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{source_name}: {message}")]
    File { source_name: String, message: String },
    #[error("{source_name}:{line}: {message}")]
    Row {
        source_name: String,
        line: u64,
        message: String,
    },
}

impl CsvError {
    /// 1-based line of the offending row, when there is one.
    pub fn line(&self) -> Option<u64> {
        match self {
            Self::Row { line, .. } => Some(*line),
            Self::File { .. } => None,
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table<R: Read>(reader: R, name: &str) -> Result<Table, CsvError> {
    let file_err = |message: String| CsvError::File {
        source_name: name.to_string(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| file_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(file_err("missing header row".into()));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| match e.position() {
            Some(p) => CsvError::Row {
                source_name: name.to_string(),
                line: p.line(),
                message: e.to_string(),
            },
            None => file_err(e.to_string()),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CsvError::Row {
                source_name: name.to_string(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(file_err("no data rows".into()));
    }
    Ok(Table { header, rows })
}

fn check_inputs_header(header: &[String], last: &str, name: &str) -> Result<usize, CsvError> {
    let h = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=h).map(|j| format!("x_{j}")).chain([last.to_string()]).collect();
    if h == 0 || header != expected.as_slice() {
        return Err(CsvError::File {
            source_name: name.to_string(),
            message: format!("header must be `{}`, got `{}`", expected.join(","), header.join(",")),
        });
    }
    Ok(h)
}

fn parse_finite(field: &str, column: &str, line: u64, name: &str) -> Result<f64, CsvError> {
    let row_err = |message: String| CsvError::Row {
        source_name: name.to_string(),
        line,
        message,
    };
    let v: f64 = field
        .parse()
        .map_err(|_| row_err(format!("column `{column}`: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(row_err(format!("column `{column}`: non-finite value `{field}`")));
    }
    Ok(v)
}

pub fn parse_regression<R: Read>(reader: R, name: &str) -> Result<RegressionData<f64>, CsvError> {
    let table = read_table(reader, name)?;
    let h = check_inputs_header(&table.header, "y", name)?;
    let n = table.rows.len();
    let mut x = Array2::zeros((n, h));
    let mut y = Array1::zeros(n);
    for (i, (line, fields)) in table.rows.iter().enumerate() {
        for j in 0..h {
            x[[i, j]] = parse_finite(&fields[j], &table.header[j], *line, name)?;
        }
        y[i] = parse_finite(&fields[h], "y", *line, name)?;
    }
    RegressionData::new(x, y).map_err(|e| CsvError::File {
        source_name: name.to_string(),
        message: e.to_string(),
    })
}

/// Labels are 1-based in the file; the class count is the largest label
/// unless `class_count` is given.
pub fn parse_classification<R: Read>(
    reader: R,
    name: &str,
    class_count: Option<usize>,
) -> Result<ClassificationData<f64>, CsvError> {
    let table = read_table(reader, name)?;
    let h = check_inputs_header(&table.header, "label", name)?;
    let n = table.rows.len();
    let mut x = Array2::zeros((n, h));
    let mut labels = Vec::with_capacity(n);
    for (i, (line, fields)) in table.rows.iter().enumerate() {
        for j in 0..h {
            x[[i, j]] = parse_finite(&fields[j], &table.header[j], *line, name)?;
        }
        let label: i64 = fields[h].parse().ok().filter(|l| *l >= 1).ok_or_else(|| CsvError::Row {
            source_name: name.to_string(),
            line: *line,
            message: format!("column `label`: `{}` is not an integer ≥ 1", fields[h]),
        })?;
        if let Some(c) = class_count {
            if label as usize > c {
                return Err(CsvError::Row {
                    source_name: name.to_string(),
                    line: *line,
                    message: format!("column `label`: {label} exceeds the class count {c}"),
                });
            }
        }
        labels.push(label);
    }
    let c = class_count.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(1) as usize);
    ClassificationData::from_one_based(x, &labels, c).map_err(|e| CsvError::File {
        source_name: name.to_string(),
        message: e.to_string(),
    })
}

fn open(path: &Path) -> Result<std::fs::File, CsvError> {
    std::fs::File::open(path).map_err(|e| CsvError::File {
        source_name: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_regression(path: &Path) -> Result<RegressionData<f64>, CsvError> {
    parse_regression(open(path)?, &path.display().to_string())
}

pub fn read_classification(path: &Path, class_count: Option<usize>) -> Result<ClassificationData<f64>, CsvError> {
    parse_classification(open(path)?, &path.display().to_string(), class_count)
}

fn input_header(h: usize) -> String {
    (1..=h).map(|j| format!("x_{j}")).collect::<Vec<_>>().join(",")
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = String>) {
    let row: Vec<String> = values.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn regression_csv(data: &RegressionData<f64>) -> String {
    let mut out = format!("{},y\n", input_header(data.input_dim()));
    for (row, y) in data.inputs.outer_iter().zip(data.targets.iter()) {
        push_row(&mut out, row.iter().map(|v| fmt_f64(*v)).chain([fmt_f64(*y)]));
    }
    out
}

pub fn classification_csv(data: &ClassificationData<f64>) -> String {
    let mut out = format!("{},label\n", input_header(data.input_dim()));
    for (row, l) in data.inputs.outer_iter().zip(data.one_based_labels()) {
        push_row(&mut out, row.iter().map(|v| fmt_f64(*v)).chain([l.to_string()]));
    }
    out
}

pub fn trace_csv(rows: &[TraceRow<f64>]) -> String {
    let mut out = TRACE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        push_row(
            &mut out,
            [
                r.epoch.to_string(),
                fmt_f64(r.expected_loglik),
                fmt_f64(r.kl),
                fmt_f64(r.total),
                fmt_f64(r.lambda),
                fmt_f64(r.tau),
                fmt_f64(r.sigma_q_sq),
            ],
        );
    }
    out
}

/// `(x*, mean, std)` rows of a 1-D predictive.
pub fn predictive_grid_csv(x: ArrayView2<f64>, mean: ArrayView1<f64>, std: ArrayView1<f64>) -> String {
    let mut out = String::from("x,mean,std\n");
    for ((row, m), s) in x.outer_iter().zip(mean.iter()).zip(std.iter()) {
        push_row(&mut out, [fmt_f64(row[0]), fmt_f64(*m), fmt_f64(*s)]);
    }
    out
}

/// Any numeric table with the given header.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        push_row(&mut out, r.iter().map(|v| fmt_f64(*v)));
    }
    out
}

/// `(x_1.., p_1..p_C)` rows of class probabilities.
pub fn probability_grid_csv(x: ArrayView2<f64>, probs: ArrayView2<f64>) -> String {
    let mut out = input_header(x.ncols());
    for c in 1..=probs.ncols() {
        let _ = write!(out, ",p_{c}");
    }
    out.push('\n');
    for (row, p) in x.outer_iter().zip(probs.outer_iter()) {
        push_row(&mut out, row.iter().chain(p.iter()).map(|v| fmt_f64(*v)));
    }
    out
}
