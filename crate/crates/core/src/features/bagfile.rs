//! JSON Lines interchange format for featurized bags.

use super::{FeatureMatrix, FeatureMode};
use crate::signal::Condition;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One featurized window, serialized as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub participant_id: String,
    pub window_id: String,
    pub condition: Condition,
    /// 0 = CWNS, 1 = CWS.
    pub label: u8,
    pub feature_mode: FeatureMode,
    /// Row-major, `n_rows * n_cols` values.
    pub matrix: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl BagRecord {
    pub fn new(
        participant_id: impl Into<String>,
        window_id: impl Into<String>,
        condition: Condition,
        label: u8,
        feature_mode: FeatureMode,
        grid: &FeatureMatrix,
    ) -> Self {
        BagRecord {
            participant_id: participant_id.into(),
            window_id: window_id.into(),
            condition,
            label,
            feature_mode,
            matrix: grid.data.clone(),
            n_rows: grid.n_rows,
            n_cols: grid.n_cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!(
                "bag {}: label {} out of range",
                self.window_id, self.label
            )));
        }
        if self.n_cols != self.feature_mode.n_cols() {
            return Err(Error::shape(
                format!("{} columns for {} mode", self.feature_mode.n_cols(), self.feature_mode.as_str()),
                format!("{} columns in bag {}", self.n_cols, self.window_id),
            ));
        }
        if self.matrix.len() != self.n_rows * self.n_cols {
            return Err(Error::shape(
                format!("{} values", self.n_rows * self.n_cols),
                format!("{} values in bag {}", self.matrix.len(), self.window_id),
            ));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("bag {}: non-finite feature value", self.window_id)));
        }
        Ok(())
    }

    pub fn grid(&self) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.matrix.clone(),
        }
    }
}

pub fn save_bag_records(path: &Path, records: &[BagRecord]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        rec.validate()?;
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_bag_records(path: &Path) -> Result<Vec<BagRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BagRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(window_id: &str, label: u8) -> BagRecord {
        let grid = FeatureMatrix {
            n_rows: 19,
            n_cols: 8,
            data: (0..19 * 8).map(|i| i as f64 * 0.5).collect(),
        };
        BagRecord::new("p1", window_id, Condition::Task, label, FeatureMode::Change, &grid)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bags.jsonl");
        let records = vec![record("w0", 1), record("w1", 0)];
        save_bag_records(&path, &records).unwrap();
        let loaded = load_bag_records(&path).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn rejects_bad_shape() {
        let mut rec = record("w0", 1);
        rec.matrix.pop();
        assert!(rec.validate().is_err());

        let mut rec = record("w0", 1);
        rec.n_cols = 24; // wrong for change mode
        assert!(rec.validate().is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_label() {
        let mut rec = record("w0", 1);
        rec.matrix[3] = f64::NAN;
        assert!(rec.validate().is_err());
        assert!(record("w0", 2).validate().is_err());
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bags.jsonl");
        std::fs::write(&path, "{\"not\": \"a bag\"}\n").unwrap();
        let err = load_bag_records(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err}");
    }
}
