//! CSV ingestion and deterministic train/validation/test splitting.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{config, Error, Result};

/// Where a tabular dataset lives and how to cut it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub csv_path: PathBuf,
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    /// Constraint file in raw units; `None` means only the default bounds.
    #[serde(default)]
    pub constraint_file: Option<PathBuf>,
    /// Append a lower and upper bound per target, taken from the training
    /// split's range widened by 5%.
    #[serde(default)]
    pub default_bounds: bool,
    /// Train, validation and test row counts.
    pub split_sizes: [usize; 3],
    #[serde(default)]
    pub shuffle_seed: u64,
    /// Only the first `head_count` shuffled rows are eligible for the splits.
    #[serde(default)]
    pub head_count: Option<usize>,
}

impl DatasetSpec {
    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.csv_path.is_relative() {
            self.csv_path = base.join(&self.csv_path);
        }
        if let Some(p) = &mut self.constraint_file {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Rows of inputs and targets in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl Dataset {
    pub fn new(
        input_columns: Vec<String>,
        target_columns: Vec<String>,
        inputs: Tensor,
        targets: Tensor,
    ) -> Result<Self> {
        if inputs.rows() != targets.rows()
            || inputs.cols() != input_columns.len()
            || targets.cols() != target_columns.len()
        {
            return Err(crate::error::contract(format!(
                "dataset shape mismatch: inputs {:?} for {} columns, targets {:?} for {} columns",
                inputs.shape(),
                input_columns.len(),
                targets.shape(),
                target_columns.len()
            )));
        }
        Ok(Self {
            input_columns,
            target_columns,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            input_columns: self.input_columns.clone(),
            target_columns: self.target_columns.clone(),
            inputs: self.inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }

    /// Writes the rows with a header, inputs first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.input_columns.iter().chain(&self.target_columns))?;
        for (x, y) in self.inputs.row_iter().zip(self.targets.row_iter()) {
            w.write_record(x.iter().chain(y).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the named columns of a headed CSV file.
///
/// Errors name the 1-based data row and the column of the offending cell.
pub fn read_csv(path: &Path, input_columns: &[String], target_columns: &[String]) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let locate = |name: &String| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Ingestion {
                row: 0,
                column: name.clone(),
                message: format!("no such column in {}", path.display()),
            })
    };
    let in_idx = input_columns.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let out_idx = target_columns.iter().map(locate).collect::<Result<Vec<_>>>()?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingestion {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |idx: usize, name: &String| -> Result<f64> {
            let text = record.get(idx).unwrap_or("").trim();
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: format!("cannot parse `{text}` as a finite number"),
                })
        };
        for (&idx, name) in in_idx.iter().zip(input_columns) {
            xs.push(cell(idx, name)?);
        }
        for (&idx, name) in out_idx.iter().zip(target_columns) {
            ys.push(cell(idx, name)?);
        }
        rows += 1;
    }
    Dataset::new(
        input_columns.to_vec(),
        target_columns.to_vec(),
        Tensor::new(vec![rows, input_columns.len()], xs)?,
        Tensor::new(vec![rows, target_columns.len()], ys)?,
    )
}

/// Shuffles row indices with `seed`, keeps the first `head_count` and cuts
/// consecutive blocks of the requested sizes.
pub fn split_indices(
    rows: usize,
    sizes: [usize; 3],
    seed: u64,
    head_count: Option<usize>,
) -> Result<[Vec<usize>; 3]> {
    let pool = head_count.unwrap_or(rows);
    if pool > rows {
        return Err(config(format!("head count {pool} exceeds the {rows} available rows")));
    }
    let needed: usize = sizes.iter().sum();
    if needed > pool {
        return Err(config(format!(
            "split sizes {sizes:?} need {needed} rows but only {pool} are available"
        )));
    }
    if sizes[0] == 0 {
        return Err(config("the training split must be nonempty"));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..sizes[0]].to_vec();
    let val = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = order[sizes[0] + sizes[1]..needed].to_vec();
    Ok([train, val, test])
}

/// Train, validation and test rows in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_dataset(
    data: &Dataset,
    sizes: [usize; 3],
    seed: u64,
    head_count: Option<usize>,
) -> Result<RawSplits> {
    let [train, val, test] = split_indices(data.len(), sizes, seed, head_count)?;
    Ok(RawSplits {
        train: data.select(&train),
        val: data.select(&val),
        test: data.select(&test),
    })
}

/// Reads `spec.csv_path` and splits it.
pub fn load_and_split(spec: &DatasetSpec) -> Result<RawSplits> {
    let data = read_csv(&spec.csv_path, &spec.input_columns, &spec.target_columns)?;
    split_dataset(&data, spec.split_sizes, spec.shuffle_seed, spec.head_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn standard_split_sizes() {
        let [a, b, c] = split_indices(750, [200, 250, 250], 3, None).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (200, 250, 250));
        let all: HashSet<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        assert_eq!(all.len(), 700);
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(
            split_indices(100, [20, 30, 40], 9, None).unwrap(),
            split_indices(100, [20, 30, 40], 9, None).unwrap()
        );
        assert_ne!(
            split_indices(100, [20, 30, 40], 9, None).unwrap(),
            split_indices(100, [20, 30, 40], 10, None).unwrap()
        );
    }

    #[test]
    fn oversized_splits_rejected() {
        assert!(split_indices(750, [200, 250, 301], 0, None).is_err());
        assert!(split_indices(1000, [200, 250, 250], 0, Some(600)).is_err());
        assert!(split_indices(1000, [200, 250, 250], 0, Some(2000)).is_err());
    }

    #[test]
    fn head_count_restricts_pool() {
        let [a, b, c] = split_indices(5000, [200, 250, 250], 1, Some(750)).unwrap();
        let [a2, _, _] = split_indices(5000, [200, 250, 250], 1, None).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.len() + b.len() + c.len(), 700);
    }
}
