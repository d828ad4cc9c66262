//! The feature matrix: one row per record, target last.

use std::io::{Read, Write};

use thiserror::Error;

use super::extract_features;
use crate::dataset::InferenceRecord;

pub const FEATURE_COLUMNS: [&str; 20] = [
    "char_count",
    "letter_count",
    "word_count",
    "lexicon_count",
    "syllable_count",
    "monosyllabcount",
    "polysyllabcount",
    "long_word_count",
    "stop_word_count",
    "reading_time",
    "sentence_count",
    "avg_word_length",
    "adj_count",
    "adverb_count",
    "noun_count",
    "verb_count",
    "prompt_token_length",
    "response_token_length",
    "response_duration",
    "total_duration",
];

/// Columns derived from the prompt (everything not known only after the
/// response).
pub const PROMPT_COLUMNS: &[&str] = &[
    "char_count",
    "letter_count",
    "word_count",
    "lexicon_count",
    "syllable_count",
    "monosyllabcount",
    "polysyllabcount",
    "long_word_count",
    "stop_word_count",
    "reading_time",
    "sentence_count",
    "avg_word_length",
    "adj_count",
    "adverb_count",
    "noun_count",
    "verb_count",
    "prompt_token_length",
];

pub const TARGET_COLUMN: &str = "energy_llm_kwh";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("no rows")]
    EmptyInput,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("CSV error: {0}")]
    Csv(String),
}

impl From<csv::Error> for TableError {
    fn from(e: csv::Error) -> Self {
        TableError::Csv(e.to_string())
    }
}

/// Accepts the long names for the POS columns too.
pub fn canonical_column(name: &str) -> &str {
    match name {
        "adjectives" => "adj_count",
        "adverbs" => "adverb_count",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Self {
        debug_assert_eq!(rows.len(), target.len());
        debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
        FeatureTable { columns, rows, target }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        let name = canonical_column(name);
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// A table with only `names`, in that order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureTable, TableError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureTable {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            target: self.target.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(String::as_str).chain([TARGET_COLUMN]))?;
        for (row, y) in self.rows.iter().zip(&self.target) {
            w.write_record(row.iter().chain([y]).map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| TableError::Csv(e.to_string()))
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); the last
    /// column is the target.
    pub fn read_csv<R: Read>(input: R) -> Result<FeatureTable, TableError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let Some((_, columns)) = header.split_last() else {
            return Err(TableError::Csv("empty header".into()));
        };
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let values = rec?
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TableError::Csv(format!("row {}: {e}", i + 1)))?;
            let (y, x) = values.split_last().ok_or_else(|| TableError::Csv(format!("row {}: empty", i + 1)))?;
            target.push(*y);
            rows.push(x.to_vec());
        }
        Ok(FeatureTable { columns: columns.to_vec(), rows, target })
    }
}

pub fn feature_row(record: &InferenceRecord) -> Vec<f64> {
    let text = extract_features(&record.prompt_text);
    let mut row: Vec<f64> = text.pairs().iter().map(|&(_, v)| v).collect();
    row.extend([
        record.prompt_token_length as f64,
        record.response_token_length as f64,
        record.response_duration_s,
        record.total_duration_s,
    ]);
    row
}

pub fn build_feature_table(records: &[InferenceRecord]) -> Result<FeatureTable, TableError> {
    if records.is_empty() {
        return Err(TableError::EmptyInput);
    }
    Ok(FeatureTable {
        columns: FEATURE_COLUMNS.iter().map(|c| c.to_string()).collect(),
        rows: records.iter().map(feature_row).collect(),
        target: records.iter().map(|r| r.energy_llm_kwh).collect(),
    })
}
