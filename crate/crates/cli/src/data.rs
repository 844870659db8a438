//! CSV ingestion and output.
//!
//! Files carry a header row, '.' decimals and one record per line. Every
//! column except the optional sequence column must parse as a finite `f64`.

use crate::error::{CliError, Result};
use lvm_core::data::{Dataset, SequenceDataset};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

/// Column used to group rows into sequences when no other is named.
pub const DEFAULT_SEQUENCE_COLUMN: &str = "seq_id";

/// Where a table came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
}

/// A parsed CSV file: numeric columns plus an optional sequence label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// `N x C`, one row per record.
    pub values: DMatrix<f64>,
    pub sequence_column: Option<String>,
    pub sequence_ids: Option<Vec<String>>,
    pub provenance: Provenance,
}

/// Reads `path`. The sequence column is `sequence_column` when given (it must
/// exist), otherwise [`DEFAULT_SEQUENCE_COLUMN`] when the header has it.
pub fn load_table(path: &Path, sequence_column: Option<&str>) -> Result<Table> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let hash = Sha256::digest(&bytes);
    let sha256 = hash.iter().map(|b| format!("{b:02x}")).collect();
    parse_table(&bytes, sequence_column, path.display().to_string(), sha256)
}

fn parse_table(bytes: &[u8], sequence_column: Option<&str>, path: String, sha256: String) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::parse(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::parse("missing header row"));
    }
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(CliError::Parse {
                row: None,
                column: Some(h.clone()),
                message: "duplicate column name".into(),
            });
        }
    }
    let seq_index = match sequence_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::Usage(format!("sequence column {name:?} is not in the header")))?,
        ),
        None => header.iter().position(|h| h == DEFAULT_SEQUENCE_COLUMN),
    };
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != seq_index)
        .map(|(_, h)| h.clone())
        .collect();

    let mut flat = Vec::new();
    let mut ids = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Parse {
            row: Some(row),
            column: None,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(CliError::Parse {
                row: Some(row),
                column: None,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if Some(j) == seq_index {
                ids.push(cell.trim().to_string());
                continue;
            }
            flat.push(parse_cell(cell).ok_or_else(|| CliError::Parse {
                row: Some(row),
                column: Some(header[j].clone()),
                message: format!("{cell:?} is not a finite number"),
            })?);
        }
        n += 1;
    }
    Ok(Table {
        values: DMatrix::from_row_slice(n, columns.len(), &flat),
        columns,
        sequence_column: seq_index.map(|i| header[i].clone()),
        sequence_ids: seq_index.map(|_| ids),
        provenance: Provenance { path, sha256, rows: n },
    })
}

fn parse_cell(cell: &str) -> Option<f64> {
    let s = cell.trim();
    // `f64::from_str` also takes "inf" and "NaN"; only finite decimals are data.
    if !s
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl Table {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// The named columns, in the order given.
    pub fn select(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|name| {
                self.index_of(name)
                    .ok_or_else(|| CliError::Core(lvm_core::Error::Dimension(format!("data has no column {name:?}"))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.n(), idx.len(), |r, c| self.values[(r, idx[c])]))
    }

    /// Numeric columns not listed in `exclude`.
    pub fn columns_except(&self, exclude: &[String]) -> Vec<String> {
        self.columns.iter().filter(|c| !exclude.contains(c)).cloned().collect()
    }

    pub fn dataset(&self, names: &[String]) -> Result<Dataset> {
        Ok(Dataset::new(self.select(names)?)?)
    }

    /// Row indices per sequence. Sequences appear in order of first
    /// occurrence and keep their rows in file order; without a sequence
    /// column the whole file is one sequence.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let Some(ids) = &self.sequence_ids else {
            return vec![("0".to_string(), (0..self.n()).collect())];
        };
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let g = *slot.entry(id).or_insert_with(|| {
                groups.push((id.clone(), Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(i);
        }
        groups
    }

    /// The named columns split into sequences, with their labels.
    pub fn sequences(&self, names: &[String]) -> Result<(Vec<String>, Vec<DMatrix<f64>>)> {
        let all = self.select(names)?;
        let mut labels = Vec::new();
        let mut seqs = Vec::new();
        for (id, rows) in self.groups() {
            labels.push(id);
            seqs.push(all.select_rows(rows.iter()));
        }
        Ok((labels, seqs))
    }

    pub fn sequence_dataset(&self, names: &[String]) -> Result<(Vec<String>, SequenceDataset)> {
        let (labels, seqs) = self.sequences(names)?;
        Ok((labels, SequenceDataset::new(seqs)?))
    }
}

/// Formats a float so that parsing the text gives back the same bits.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

/// CSV text with the given header; every row must match its width.
pub fn write_csv(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Rows of floats as CSV cells.
pub fn float_rows(values: &[Vec<f64>]) -> Vec<Vec<String>> {
    values
        .iter()
        .map(|r| r.iter().map(|x| format_float(*x)).collect())
        .collect()
}
