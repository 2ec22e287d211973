//! Reparameterization and penalty structure.
//!
//! Every node `u` of the expanded tree carries an intermediate coefficient
//! `gamma_u`; a leaf's regression coefficient is the signed sum of `gamma`
//! along its path to the root, `beta = A gamma`. Collapsing a subtree is then
//! exactly zero-sparsity of `gamma` below the collapse point. The penalty is
//! a weighted l1 on `beta` plus a weighted group lasso over the root
//! singleton and each internal node's child set.

use crate::design::{BinaryMatrix, Dataset};
use crate::error::{Error, Result};
use crate::expansion::{BinaryDesign, ExpandedTree};
use crate::linalg;

/// One row of `A`: `beta_j = sign * sum(gamma[nodes])`.
#[derive(Debug, Clone)]
pub struct PathRow {
    pub sign: f64,
    pub nodes: Vec<usize>,
}

/// A penalty group: node ids plus its weight `w_g = sqrt(p_g / (2^k - 1))`.
#[derive(Debug, Clone)]
pub struct Group {
    pub label: String,
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// Reparameterization matrix `A`, feature-weight diagonal, and group set.
#[derive(Debug, Clone)]
pub struct ReparamMap {
    /// Number of nodes of the expanded tree (columns of `A`).
    pub n_nodes: usize,
    /// Per design column (leaf of the expanded tree).
    pub paths: Vec<PathRow>,
    /// `w~_j = ||x_j|| / sqrt(n)` per design column.
    pub feature_weights: Vec<f64>,
    pub groups: Vec<Group>,
    /// node id -> index into `groups`.
    pub group_of: Vec<usize>,
    /// Max child count of the original tree (the `k` in the group weights).
    pub k_original: usize,
    norm_da: f64,
}

/// `w~_j = sqrt(ones_j / n)`; binary columns make this `||x_j||/sqrt(n)`.
pub fn feature_weights(x: &BinaryMatrix) -> Result<Vec<f64>> {
    let n = x.n_rows() as f64;
    (0..x.n_cols())
        .map(|j| {
            let m = x.ones_in_col(j);
            if m == 0 {
                Err(Error::Invalid(format!(
                    "column {j} is all zero (should have been dropped)"
                )))
            } else {
                Ok((m as f64 / n).sqrt())
            }
        })
        .collect()
}

/// Root singleton plus one group per internal node's child set.
pub fn build_groups(expanded: &ExpandedTree, k: usize) -> Vec<Group> {
    // A bare single-node tree has k = 0; treat the denominator as 1.
    let denom = ((1usize << k) - 1).max(1) as f64;
    let mut groups = Vec::new();
    groups.push(Group {
        label: format!("{{{}}}", expanded.label(expanded.root())),
        nodes: vec![expanded.root()],
        weight: (1.0 / denom).sqrt(),
    });
    for u in expanded.internal_nodes() {
        let nodes = expanded.node(u).children.clone();
        let p_g = nodes.len() as f64;
        groups.push(Group {
            label: format!("C({})", expanded.label(u)),
            nodes,
            weight: (p_g / denom).sqrt(),
        });
    }
    groups
}

impl ReparamMap {
    pub fn build(expanded: &ExpandedTree, design: &BinaryDesign) -> Result<ReparamMap> {
        let n_nodes = expanded.len();
        let paths: Vec<PathRow> = design
            .col_leaf
            .iter()
            .map(|&leaf| PathRow { sign: expanded.sign(leaf), nodes: expanded.path_to_root(leaf) })
            .collect();
        let feature_weights = feature_weights(&design.x)?;
        let groups = build_groups(expanded, expanded.original_k);
        let mut group_of = vec![usize::MAX; n_nodes];
        let mut covered = 0usize;
        for (gi, g) in groups.iter().enumerate() {
            for &u in &g.nodes {
                debug_assert_eq!(group_of[u], usize::MAX, "groups must not overlap");
                group_of[u] = gi;
                covered += 1;
            }
        }
        debug_assert_eq!(covered, n_nodes, "groups must partition the nodes");

        let mut map = ReparamMap {
            n_nodes,
            paths,
            feature_weights,
            groups,
            group_of,
            k_original: expanded.original_k,
            norm_da: 0.0,
        };
        map.norm_da = map.compute_norm_da();
        Ok(map)
    }

    pub fn n_features(&self) -> usize {
        self.paths.len()
    }

    /// `beta = A gamma`.
    pub fn beta_from_gamma(&self, gamma: &[f64]) -> Vec<f64> {
        self.paths
            .iter()
            .map(|row| row.sign * row.nodes.iter().map(|&u| gamma[u]).sum::<f64>())
            .collect()
    }

    /// `out += A^T v`.
    pub fn add_at_v(&self, v: &[f64], out: &mut [f64]) {
        for (row, &vj) in self.paths.iter().zip(v) {
            if vj != 0.0 {
                let s = row.sign * vj;
                for &u in &row.nodes {
                    out[u] += s;
                }
            }
        }
    }

    /// Dense `A` (p x |T|); for tests and serialization.
    pub fn a_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n_nodes]; self.paths.len()];
        for (j, row) in self.paths.iter().enumerate() {
            for &u in &row.nodes {
                a[j][u] = row.sign;
            }
        }
        a
    }

    /// Spectral norm of `D A`.
    pub fn norm_da(&self) -> f64 {
        self.norm_da
    }

    fn compute_norm_da(&self) -> f64 {
        let p = self.paths.len();
        if p == 0 || self.n_nodes == 0 {
            return 0.0;
        }
        let eig = linalg::power_iter_sym(self.n_nodes, 500, 1e-12, |v, out| {
            let mut t = self.beta_from_gamma(v);
            for (tj, w) in t.iter_mut().zip(&self.feature_weights) {
                *tj *= w * w;
            }
            out.fill(0.0);
            self.add_at_v(&t, out);
        });
        eig.sqrt()
    }

    /// Exact penalty `Omega(gamma)` at regularization `(lambda, alpha)`.
    pub fn penalty(&self, gamma: &[f64], lambda: f64, alpha: f64) -> f64 {
        let beta = self.beta_from_gamma(gamma);
        let l1: f64 =
            beta.iter().zip(&self.feature_weights).map(|(b, w)| w * b.abs()).sum();
        let group: f64 = self
            .groups
            .iter()
            .map(|g| {
                let ss: f64 = g.nodes.iter().map(|&u| gamma[u] * gamma[u]).sum();
                g.weight * ss.sqrt()
            })
            .sum();
        lambda * (1.0 - alpha) * l1 + lambda * alpha * group
    }
}

/// Scales and spectral norms of the dual matrices
/// `C1 = lambda (1-alpha) D A` and the block-diagonal group selector `C2`.
#[derive(Debug, Clone, Copy)]
pub struct DualPenalty {
    pub c1_scale: f64,
    pub c2_scale: f64,
    pub norm_c1: f64,
    pub norm_c2: f64,
}

pub fn build_dual(map: &ReparamMap, lambda: f64, alpha: f64) -> Result<DualPenalty> {
    if lambda < 0.0 {
        return Err(Error::Invalid("lambda must be nonnegative".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid("alpha must lie in [0, 1]".into()));
    }
    let c1_scale = lambda * (1.0 - alpha);
    let c2_scale = lambda * alpha;
    let max_w = map.groups.iter().map(|g| g.weight).fold(0.0f64, f64::max);
    Ok(DualPenalty {
        c1_scale,
        c2_scale,
        norm_c1: c1_scale * map.norm_da(),
        // C2 has one nonzero per row and the groups partition the nodes, so
        // C2^T C2 is diagonal with entries (lambda alpha w_g)^2.
        norm_c2: c2_scale * max_w,
    })
}

/// Convenience: bind a dataset to a tree, expand, and build the map.
pub fn prepare_from_dataset(
    tree: &crate::tree::FeatureTree,
    data: &Dataset,
    opts: &crate::expansion::ExpandOptions,
) -> Result<(ExpandedTree, BinaryDesign, ReparamMap)> {
    let x0 = crate::design::bind_to_tree(tree, data)?;
    let (expanded, design) = crate::expansion::expand(tree, &x0, opts)?;
    let map = ReparamMap::build(&expanded, &design)?;
    Ok((expanded, design, map))
}
