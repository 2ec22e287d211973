//! Serializable model artifact and output digests.
//!
//! A fitted model is written as JSON that is self-contained for scoring: each
//! retained design column carries its AND-of-ORs recipe in terms of original
//! feature names, so new data can be expanded without the tree file.

use crate::design::BinaryMatrix;
use crate::error::{Error, Result};
use crate::expansion::{BinaryDesign, ExpandedTree};
use crate::solver::{FitResult, Loss};
use crate::tree::FeatureTree;
use serde::{Deserialize, Serialize};

/// FNV-1a, hex encoded; used to tag outputs with input/config digests.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// One retained design column: AND over `terms`, each term an OR of original
/// feature names. `path` lists the tree nodes whose signed sum gives the
/// column's coefficient (the column's row of the path matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelColumn {
    pub label: String,
    pub sign: f64,
    pub terms: Vec<Vec<String>>,
    pub path: Vec<String>,
}

/// One penalty group with its weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelGroup {
    pub label: String,
    pub weight: f64,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub mu: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub smoothed_objective: f64,
    pub loss: Loss,
    pub tree_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub columns: Vec<ModelColumn>,
    /// Node labels of the expanded tree, indexing `gamma`.
    pub node_labels: Vec<String>,
    #[serde(default)]
    pub groups: Vec<ModelGroup>,
}

impl Model {
    #[allow(clippy::too_many_arguments)]
    pub fn from_fit(
        tree: &FeatureTree,
        expanded: &ExpandedTree,
        design: &BinaryDesign,
        fit: &FitResult,
        lambda: f64,
        alpha: f64,
        tau: f64,
        loss: Loss,
    ) -> Model {
        let leaf_names = tree.leaf_labels();
        let columns = design
            .col_leaf
            .iter()
            .map(|&leaf| ModelColumn {
                label: expanded.label(leaf).to_string(),
                sign: expanded.sign(leaf),
                terms: expanded
                    .leaf_terms(tree, leaf)
                    .into_iter()
                    .map(|or| or.into_iter().map(|c| leaf_names[c].clone()).collect())
                    .collect(),
                path: expanded
                    .path_to_root(leaf)
                    .into_iter()
                    .map(|u| expanded.label(u).to_string())
                    .collect(),
            })
            .collect();
        Model {
            mu: fit.mu,
            gamma: fit.gamma.clone(),
            beta: fit.beta.clone(),
            lambda,
            alpha,
            tau,
            iterations: fit.iterations,
            converged: fit.converged,
            objective: fit.exact_objective,
            smoothed_objective: fit.smoothed_objective,
            loss,
            tree_digest: tree.digest(),
            config_digest: None,
            columns,
            node_labels: (0..expanded.len()).map(|u| expanded.label(u).to_string()).collect(),
            groups: crate::reparam::build_groups(expanded, expanded.original_k)
                .into_iter()
                .map(|g| ModelGroup {
                    label: g.label,
                    weight: g.weight,
                    nodes: g.nodes.iter().map(|&u| expanded.label(u).to_string()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model json")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("model json: {e}")))
    }

    /// Linear predictor `mu + X beta` on new data, where the columns are
    /// rebuilt from the stored recipes by feature name.
    pub fn linear_predictor(&self, feature_names: &[String], x0: &BinaryMatrix) -> Result<Vec<f64>> {
        let mut col_of = std::collections::HashMap::new();
        for (i, name) in feature_names.iter().enumerate() {
            col_of.insert(name.as_str(), i);
        }
        let n = x0.n_rows();
        let mut out = vec![self.mu; n];
        for (column, &b) in self.columns.iter().zip(&self.beta) {
            if b == 0.0 {
                continue;
            }
            let mut acc: Option<Vec<u32>> = None;
            for or_group in &column.terms {
                let cols: Vec<usize> = or_group
                    .iter()
                    .map(|name| {
                        col_of.get(name.as_str()).copied().ok_or_else(|| {
                            Error::Invalid(format!("feature '{name}' missing from data"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let or_rows = x0.or_of(&cols);
                acc = Some(match acc {
                    None => or_rows,
                    Some(prev) => crate::design::intersect_sorted(&prev, &or_rows),
                });
                if acc.as_ref().is_some_and(|a| a.is_empty()) {
                    break;
                }
            }
            for &r in acc.iter().flatten() {
                out[r as usize] += b;
            }
        }
        Ok(out)
    }

    /// Predictions on the response scale (identity or logistic).
    pub fn predict(&self, feature_names: &[String], x0: &BinaryMatrix) -> Result<Vec<f64>> {
        let mut eta = self.linear_predictor(feature_names, x0)?;
        if self.loss == Loss::Logistic {
            for e in eta.iter_mut() {
                *e = 1.0 / (1.0 + (-*e).exp());
            }
        }
        Ok(eta)
    }
}
