//! CSV ingestion. The first row is the header; the response column is
//! named in the config and every other column is a categorical predictor.

use std::collections::BTreeSet;
use std::path::Path;

use pseudodp::models::{PoissonData, RegressionData};

use crate::error::{CliError, CliResult};

/// Raw table as read, kept so synthetic files can mirror it.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based file line of each row, for error messages.
    pub lines: Vec<u64>,
    pub response: usize,
}

pub fn read_table(path: &Path, response: &str) -> CliResult<(Table, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let table = parse_table(&bytes, response)?;
    Ok((table, bytes))
}

pub fn parse_table(bytes: &[u8], response: &str) -> CliResult<Table> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::data(format!("input is not UTF-8: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::data(format!("line 1: cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.iter().all(String::is_empty) {
        return Err(CliError::data("line 1: empty header"));
    }
    let response_idx = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| CliError::config(format!("response column `{response}` not found in header {header:?}")))?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::data(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(rec.iter().map(|v| v.trim().to_string()).collect());
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(CliError::data("no data rows after the header"));
    }
    Ok(Table { header, rows, lines, response: response_idx })
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn response_name(&self) -> &str {
        &self.header[self.response]
    }

    pub fn poisson_data(&self) -> CliResult<PoissonData> {
        let counts = self
            .rows
            .iter()
            .zip(&self.lines)
            .map(|(r, line)| {
                let v = &r[self.response];
                v.parse::<u64>().map_err(|_| {
                    CliError::data(format!(
                        "line {line}: column `{}` must be a non-negative integer count, found `{v}`",
                        self.response_name()
                    ))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(PoissonData::new(counts)?)
    }

    pub fn responses(&self) -> CliResult<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(r, line)| {
                let v = &r[self.response];
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(CliError::data(format!(
                        "line {line}: column `{}` must be a finite number, found `{v}`",
                        self.response_name()
                    ))),
                }
            })
            .collect()
    }

    /// Intercept plus one-hot columns for every non-response column, with
    /// the first level (in sorted order) of each predictor dropped.
    pub fn design(&self) -> Vec<Vec<f64>> {
        let predictors: Vec<usize> = (0..self.header.len()).filter(|&j| j != self.response).collect();
        let levels: Vec<Vec<&str>> = predictors
            .iter()
            .map(|&j| {
                let set: BTreeSet<&str> = self.rows.iter().map(|r| r[j].as_str()).collect();
                set.into_iter().collect()
            })
            .collect();
        let width = 1 + levels.iter().map(|l| l.len() - 1).sum::<usize>();
        self.rows
            .iter()
            .map(|r| {
                let mut x = vec![0.0; width];
                x[0] = 1.0;
                let mut offset = 1;
                for (p, &j) in predictors.iter().enumerate() {
                    let lv = levels[p].binary_search(&r[j].as_str()).expect("level seen while building");
                    if lv > 0 {
                        x[offset + lv - 1] = 1.0;
                    }
                    offset += levels[p].len() - 1;
                }
                x
            })
            .collect()
    }

    pub fn regression_data(&self) -> CliResult<RegressionData> {
        Ok(RegressionData::new(self.responses()?, self.design())?)
    }

    /// The table with the response column replaced by `values`.
    pub fn write_with_response<W: std::io::Write, T: ToString>(&self, out: W, values: &[T]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(|e| CliError::data(e.to_string()))?;
        for (row, v) in self.rows.iter().zip(values) {
            let mut row = row.clone();
            row[self.response] = v.to_string();
            w.write_record(&row).map_err(|e| CliError::data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}
