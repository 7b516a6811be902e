//! UCR-style tab-separated time series: label first, then the values.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Samples;
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    /// `[N, L]`, z-normalized per series.
    pub series: Tensor,
    /// Dense class indices into `label_table`.
    pub labels: Vec<usize>,
    /// Original label of each class, ascending.
    pub label_table: Vec<i64>,
}

impl TimeSeriesDataset {
    pub fn num_classes(&self) -> usize {
        self.label_table.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Single-channel samples `[N, 1, L]`.
    pub fn to_samples(&self) -> Result<Samples> {
        let (n, l) = (self.series.dim(0), self.series.dim(1));
        Samples::new(self.series.clone().reshape(&[n, 1, l])?, self.labels.clone(), None, self.num_classes())
    }
}

/// Raw rows: original labels and unnormalized values.
pub fn parse_ucr(text: &str) -> Result<(Vec<i64>, Vec<Vec<f64>>)> {
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim);
        let head = fields.next().unwrap_or_default();
        let label: f64 = head
            .parse()
            .map_err(|_| Error::Parse { line: line_no, detail: format!("label {head:?} is not a number") })?;
        if label.fract() != 0.0 || !label.is_finite() {
            return Err(Error::Parse { line: line_no, detail: format!("label {head:?} is not an integer") });
        }
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse { line: line_no, detail: format!("value {f:?} is not a number") }))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Parse { line: line_no, detail: "series has no values".into() });
        }
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("series length {} differs from {}", values.len(), first.len()),
                });
            }
        }
        labels.push(label as i64);
        rows.push(values);
    }
    if rows.is_empty() {
        return invalid("time series file holds no rows");
    }
    Ok((labels, rows))
}

fn z_normalize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < 1e-12 {
        row.iter_mut().for_each(|v| *v = 0.0);
    } else {
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

fn assemble(labels: &[i64], rows: Vec<Vec<f64>>, table: &[i64]) -> Result<TimeSeriesDataset> {
    let len = rows[0].len();
    let mut data = Vec::with_capacity(rows.len() * len);
    for mut r in rows {
        z_normalize(&mut r);
        data.extend(r);
    }
    let dense = labels.iter().map(|l| table.binary_search(l).expect("label in table")).collect();
    Ok(TimeSeriesDataset { series: Tensor::new(vec![labels.len(), len], data)?, labels: dense, label_table: table.to_vec() })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn read_ucr_tsv(path: &Path) -> Result<TimeSeriesDataset> {
    let (labels, rows) = parse_ucr(&read_text(path)?)?;
    let table: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    assemble(&labels, rows, &table)
}

/// Reads a train/test pair with one shared label table.
pub fn read_ucr_pair(train: &Path, test: &Path) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let (la, ra) = parse_ucr(&read_text(train)?)?;
    let (lb, rb) = parse_ucr(&read_text(test)?)?;
    if ra[0].len() != rb[0].len() {
        return invalid(format!("train series length {} differs from test length {}", ra[0].len(), rb[0].len()));
    }
    let table: Vec<i64> = la.iter().chain(&lb).copied().collect::<BTreeSet<_>>().into_iter().collect();
    Ok((assemble(&la, ra, &table)?, assemble(&lb, rb, &table)?))
}

/// Writes rows as UCR TSV using the original labels.
pub fn write_ucr_tsv(path: &Path, labels: &[i64], series: &Tensor) -> Result<()> {
    let l = series.dim(1);
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        out.push_str(&label.to_string());
        for v in &series.data()[i * l..(i + 1) * l] {
            write!(out, "\t{v}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows() {
        let (labels, rows) = parse_ucr("3\t0.1\t0.2\t0.3\n").unwrap();
        assert_eq!(labels, vec![3]);
        assert_eq!(rows, vec![vec![0.1, 0.2, 0.3]]);
    }

    #[test]
    fn ragged_and_non_numeric_report_line() {
        match parse_ucr("1\t1\t2\n2\t1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_ucr("1\t1\t2\n2\t1\tx\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_and_constant_rows() {
        let (labels, rows) = parse_ucr("5\t5\t5\t5\n-1\t1\t2\t6\n").unwrap();
        let table = vec![-1, 5];
        let ds = assemble(&labels, rows, &table).unwrap();
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(&ds.series.data()[..3], &[0.0, 0.0, 0.0]);
        let r = &ds.series.data()[3..];
        let mean = r.iter().sum::<f64>() / 3.0;
        let std = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn float_formatted_labels_accepted() {
        let (labels, _) = parse_ucr("1.0000000e+00\t0.5\n").unwrap();
        assert_eq!(labels, vec![1]);
        assert!(parse_ucr("1.5\t0.5\n").is_err());
    }
}
