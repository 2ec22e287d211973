//! Sparse binary design matrices and the CSV data format.
//!
//! Columns are stored as sorted lists of row indices; entries are 0/1 so no
//! values are kept. Data files are plain CSV with a header row, one response
//! column named on the command line, and every other column binary 0/1.

use crate::error::{Error, Result};
use crate::tree::FeatureTree;

/// Column-major sparse binary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    n_rows: usize,
    cols: Vec<Vec<u32>>,
}

impl BinaryMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> BinaryMatrix {
        BinaryMatrix { n_rows, cols: vec![Vec::new(); n_cols] }
    }

    /// Build from sorted, deduplicated row-index lists.
    pub fn from_columns(n_rows: usize, cols: Vec<Vec<u32>>) -> Result<BinaryMatrix> {
        for (j, col) in cols.iter().enumerate() {
            if !col.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Invalid(format!("column {j} row indices not strictly sorted")));
            }
            if col.last().is_some_and(|&r| r as usize >= n_rows) {
                return Err(Error::Invalid(format!("column {j} row index out of range")));
            }
        }
        Ok(BinaryMatrix { n_rows, cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn col(&self, j: usize) -> &[u32] {
        &self.cols[j]
    }

    pub fn ones_in_col(&self, j: usize) -> usize {
        self.cols[j].len()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cols[j].binary_search(&(i as u32)).is_ok()
    }

    pub fn push_col(&mut self, rows: Vec<u32>) {
        debug_assert!(rows.windows(2).all(|w| w[0] < w[1]));
        self.cols.push(rows);
    }

    /// Elementwise OR of a set of columns.
    pub fn or_of(&self, cols: &[usize]) -> Vec<u32> {
        let mut mark = vec![false; self.n_rows];
        for &j in cols {
            for &r in &self.cols[j] {
                mark[r as usize] = true;
            }
        }
        (0..self.n_rows as u32).filter(|&r| mark[r as usize]).collect()
    }

    /// Keep the given rows (in order), renumbering indices.
    pub fn select_rows(&self, rows: &[usize]) -> BinaryMatrix {
        let mut new_index = vec![u32::MAX; self.n_rows];
        for (new_r, &old_r) in rows.iter().enumerate() {
            new_index[old_r] = new_r as u32;
        }
        let cols = self
            .cols
            .iter()
            .map(|col| {
                let mut out: Vec<u32> =
                    col.iter().map(|&r| new_index[r as usize]).filter(|&r| r != u32::MAX).collect();
                out.sort_unstable();
                out
            })
            .collect();
        BinaryMatrix { n_rows: rows.len(), cols }
    }

    /// Dense 0/1 expansion, row-major; test and oracle use only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols.len()]; self.n_rows];
        for (j, col) in self.cols.iter().enumerate() {
            for &r in col {
                out[r as usize][j] = 1.0;
            }
        }
        out
    }

    /// y = X * beta (+ nothing); used for predictions.
    pub fn matvec(&self, beta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(beta.len(), self.cols.len());
        debug_assert_eq!(out.len(), self.n_rows);
        out.fill(0.0);
        for (j, col) in self.cols.iter().enumerate() {
            let b = beta[j];
            if b != 0.0 {
                for &r in col {
                    out[r as usize] += b;
                }
            }
        }
    }
}

/// Intersection of two sorted row-index lists.
pub fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return Vec::new();
    }
    // Galloping pays off here: high-order interactions intersect a tiny list
    // against a large one.
    let mut out = Vec::with_capacity(short.len());
    let mut lo = 0usize;
    for &x in short {
        match long[lo..].binary_search(&x) {
            Ok(k) => {
                out.push(x);
                lo += k + 1;
            }
            Err(k) => lo += k,
        }
        if lo >= long.len() {
            break;
        }
    }
    out
}

/// A data file split into binary feature columns and a numeric response.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: BinaryMatrix,
    pub response: Vec<f64>,
}

/// Parse CSV text with a header; `response` names the outcome column, all
/// remaining columns must be 0/1.
pub fn read_csv(text: &str, response: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("data csv: empty file".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let resp_idx = names
        .iter()
        .position(|n| n == response)
        .ok_or_else(|| Error::Invalid(format!("response column '{response}' not in data header")))?;
    let feature_names: Vec<String> =
        names.iter().enumerate().filter(|&(i, _)| i != resp_idx).map(|(_, n)| n.clone()).collect();

    let mut cols: Vec<Vec<u32>> = vec![Vec::new(); feature_names.len()];
    let mut response_vals = Vec::new();
    let mut n_rows = 0u32;
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Parse(format!(
                "data csv line {}: expected {} fields, got {}",
                lineno + 1,
                names.len(),
                fields.len()
            )));
        }
        let mut feat = 0usize;
        for (i, field) in fields.iter().enumerate() {
            if i == resp_idx {
                let y: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("data csv line {}: bad response '{field}'", lineno + 1)))?;
                response_vals.push(y);
            } else {
                match *field {
                    "0" => {}
                    "1" => cols[feat].push(n_rows),
                    other => {
                        return Err(Error::Parse(format!(
                            "data csv line {}: feature '{}' must be 0/1, got '{other}'",
                            lineno + 1,
                            feature_names[feat]
                        )))
                    }
                }
                feat += 1;
            }
        }
        n_rows += 1;
    }
    Ok(Dataset {
        feature_names,
        features: BinaryMatrix { n_rows: n_rows as usize, cols },
        response: response_vals,
    })
}

/// Write the same CSV shape that `read_csv` accepts.
pub fn write_csv(names: &[String], features: &BinaryMatrix, response_name: &str, response: &[f64]) -> String {
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push(',');
    out.push_str(response_name);
    out.push('\n');
    let dense = features.to_dense();
    for (i, row) in dense.iter().enumerate() {
        for v in row {
            out.push(if *v != 0.0 { '1' } else { '0' });
            out.push(',');
        }
        let y = response[i];
        if y == y.trunc() && y.abs() < 1e15 {
            out.push_str(&format!("{}", y as i64));
        } else {
            out.push_str(&format!("{y}"));
        }
        out.push('\n');
    }
    out
}

/// Reorder a dataset's feature columns to match the tree's leaf order.
/// Errors when a leaf label is missing from the data, or the data carries
/// columns the tree does not know.
pub fn bind_to_tree(tree: &FeatureTree, data: &Dataset) -> Result<BinaryMatrix> {
    let leaf_labels = tree.leaf_labels();
    let mut col_of: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (i, name) in data.feature_names.iter().enumerate() {
        col_of.insert(name.as_str(), i);
    }
    let mut order = Vec::with_capacity(leaf_labels.len());
    for label in &leaf_labels {
        match col_of.remove(label.as_str()) {
            Some(i) => order.push(i),
            None => return Err(Error::Invalid(format!("leaf '{label}' not found in data header"))),
        }
    }
    if let Some(extra) = col_of.keys().next() {
        return Err(Error::Invalid(format!("data column '{extra}' is not a leaf of the tree")));
    }
    let cols = order.iter().map(|&i| data.features.col(i).to_vec()).collect();
    Ok(BinaryMatrix { n_rows: data.features.n_rows(), cols })
}
