//! Shared oracles for the integration tests. Everything here recomputes from
//! dense matrices and first principles, independent of the solver's sparse
//! shortcuts.

// each test binary uses its own subset of these helpers
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use treeagg::design::BinaryMatrix;
use treeagg::expansion::{expand, BinaryDesign, ExpandOptions, ExpandedTree};
use treeagg::reparam::ReparamMap;
use treeagg::tree::FeatureTree;

pub struct Instance {
    pub tree: FeatureTree,
    pub expanded: ExpandedTree,
    pub design: BinaryDesign,
    pub map: ReparamMap,
    pub ops: treeagg::solver::NodeColumns,
    pub y: Vec<f64>,
}

/// The 5-leaf, depth-2 toy hierarchy.
pub fn toy_tree() -> FeatureTree {
    FeatureTree::parse_tsv("g1\troot\nx1\tg1\nx2\tg1\nx3\tg1\ng2\troot\nx4\tg2\nx5\tg2\n").unwrap()
}

/// Random instance on the toy tree: binary design with no empty columns plus
/// a Gaussian response.
pub fn toy_instance(seed: u64, n: usize, prevalence: f64) -> Instance {
    let tree = toy_tree();
    let mut rng = treeagg::rng::stream_rng(seed, treeagg::rng::stream::DESIGN);
    let x0 = loop {
        let cols: Vec<Vec<u32>> = (0..5)
            .map(|_| (0..n as u32).filter(|_| rng.gen_bool(prevalence)).collect())
            .collect();
        if cols.iter().all(|c| !c.is_empty()) {
            break BinaryMatrix::from_columns(n, cols).unwrap();
        }
    };
    let (expanded, design) = expand(&tree, &x0, &ExpandOptions::default()).unwrap();
    let map = ReparamMap::build(&expanded, &design).unwrap();
    let ops = treeagg::solver::NodeColumns::build(&expanded, &design);
    let mut noise = treeagg::rng::stream_rng(seed, treeagg::rng::stream::NOISE);
    let y: Vec<f64> = (0..n).map(|_| treeagg::rng::standard_normal(&mut noise)).collect();
    Instance { tree, expanded, design, map, ops, y }
}

/// Exact objective recomputed densely: squared loss plus the raw penalty.
#[allow(clippy::too_many_arguments)]
pub fn dense_objective(
    x: &[Vec<f64>],
    a: &[Vec<f64>],
    map: &ReparamMap,
    y: &[f64],
    lambda: f64,
    alpha: f64,
    mu: f64,
    gamma: &[f64],
) -> f64 {
    let n = y.len();
    let p = a.len();
    let mut beta = vec![0.0; p];
    for j in 0..p {
        beta[j] = a[j].iter().zip(gamma).map(|(aju, g)| aju * g).sum();
    }
    let mut ss = 0.0;
    for i in 0..n {
        let pred: f64 = mu + x[i].iter().zip(&beta).map(|(xi, b)| xi * b).sum::<f64>();
        ss += (y[i] - pred) * (y[i] - pred);
    }
    let l1: f64 = beta
        .iter()
        .zip(&map.feature_weights)
        .map(|(b, w)| w * b.abs())
        .sum();
    let group: f64 = map
        .groups
        .iter()
        .map(|g| {
            let ssq: f64 = g.nodes.iter().map(|&u| gamma[u] * gamma[u]).sum();
            g.weight * ssq.sqrt()
        })
        .sum();
    ss / (2.0 * n as f64) + lambda * (1.0 - alpha) * l1 + lambda * alpha * group
}

/// Long-run subgradient descent on the exact (unsmoothed) objective with
/// diminishing steps and best-iterate tracking. Several step scales are
/// tried; the best final objective wins.
pub fn subgradient_oracle(
    inst: &Instance,
    lambda: f64,
    alpha: f64,
    iterations: usize,
) -> (f64, f64, Vec<f64>) {
    let x = inst.design.x.to_dense();
    let a = inst.map.a_dense();
    let n = inst.y.len();
    let p = a.len();
    let m = inst.map.n_nodes;

    // crude curvature scale for the step sizes
    let col_sq: f64 = (0..p)
        .map(|j| (0..n).map(|i| x[i][j] * x[i][j]).sum::<f64>())
        .sum::<f64>();
    let l0 = 1.0 + col_sq / n as f64;

    let mut best_obj = f64::INFINITY;
    let mut best = (0.0, vec![0.0; m]);
    for scale in [1.0, 0.25, 0.05] {
        let step0 = scale / l0;
        let mut mu = 0.0f64;
        let mut gamma = vec![0.0f64; m];
        for t in 0..iterations {
            // subgradient at (mu, gamma)
            let mut beta = vec![0.0; p];
            for j in 0..p {
                beta[j] = a[j].iter().zip(&gamma).map(|(aju, g)| aju * g).sum();
            }
            let mut s = vec![0.0; n];
            let mut g_mu = 0.0;
            for i in 0..n {
                let pred: f64 = mu + x[i].iter().zip(&beta).map(|(xi, b)| xi * b).sum::<f64>();
                s[i] = (pred - inst.y[i]) / n as f64;
                g_mu += s[i];
            }
            // beta-space part: X^T s + lambda (1-alpha) w sign(beta)
            let mut g_beta = vec![0.0; p];
            for j in 0..p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += x[i][j] * s[i];
                }
                g_beta[j] = acc
                    + lambda * (1.0 - alpha) * inst.map.feature_weights[j] * beta[j].signum() * f64::from(beta[j] != 0.0);
            }
            let mut g_gamma = vec![0.0; m];
            for j in 0..p {
                for (u, aju) in a[j].iter().enumerate() {
                    if *aju != 0.0 {
                        g_gamma[u] += aju * g_beta[j];
                    }
                }
            }
            for g in &inst.map.groups {
                let norm: f64 =
                    g.nodes.iter().map(|&u| gamma[u] * gamma[u]).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for &u in &g.nodes {
                        g_gamma[u] += lambda * alpha * g.weight * gamma[u] / norm;
                    }
                }
            }
            let step = step0 / ((t + 1) as f64).sqrt();
            mu -= step * g_mu;
            for u in 0..m {
                gamma[u] -= step * g_gamma[u];
            }
            let obj = dense_objective(&x, &a, &inst.map, &inst.y, lambda, alpha, mu, &gamma);
            if obj < best_obj {
                best_obj = obj;
                best = (mu, gamma.clone());
            }
        }
    }
    (best_obj, best.0, best.1)
}

/// Weighted-lasso oracle in beta space: accelerated proximal gradient with a
/// soft-threshold step, run to high accuracy. Returns its best objective
/// (which is also the alpha = 0 objective of the tree problem).
pub fn lasso_oracle(inst: &Instance, lambda: f64, iterations: usize) -> f64 {
    let x = inst.design.x.to_dense();
    let n = inst.y.len();
    let p = inst.map.n_features();
    let w = &inst.map.feature_weights;

    // Lipschitz bound via dense power iteration on [1 | X]
    let mut v = vec![1.0; p + 1];
    let mut lmax = 0.0;
    for _ in 0..500 {
        let mut xv = vec![0.0; n];
        for i in 0..n {
            xv[i] = v[0] + x[i].iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut out = vec![0.0; p + 1];
        out[0] = xv.iter().sum();
        for j in 0..p {
            out[j + 1] = (0..n).map(|i| x[i][j] * xv[i]).sum();
        }
        let norm: f64 = out.iter().map(|o| o * o).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lmax = norm;
        for (vi, oi) in v.iter_mut().zip(&out) {
            *vi = oi / norm;
        }
    }
    let big_l = lmax / n as f64 + 1e-12;
    let step = 1.0 / big_l;

    let mut mu = 0.0f64;
    let mut beta = vec![0.0f64; p];
    let mut mu_w = mu;
    let mut beta_w = beta.clone();
    let mut theta = 1.0f64;
    let mut best = f64::INFINITY;
    for _ in 0..iterations {
        let mut s = vec![0.0; n];
        let mut g_mu = 0.0;
        for i in 0..n {
            let pred: f64 =
                mu_w + x[i].iter().zip(&beta_w).map(|(a, b)| a * b).sum::<f64>();
            s[i] = (pred - inst.y[i]) / n as f64;
            g_mu += s[i];
        }
        let mu_new = mu_w - step * g_mu;
        let mut beta_new = vec![0.0; p];
        for j in 0..p {
            let g: f64 = (0..n).map(|i| x[i][j] * s[i]).sum();
            let raw = beta_w[j] - step * g;
            let thr = step * lambda * w[j];
            beta_new[j] = raw.signum() * (raw.abs() - thr).max(0.0);
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let coef = (theta - 1.0) / theta_new;
        mu_w = mu_new + coef * (mu_new - mu);
        for j in 0..p {
            beta_w[j] = beta_new[j] + coef * (beta_new[j] - beta[j]);
        }
        mu = mu_new;
        beta = beta_new;
        theta = theta_new;

        let mut ss = 0.0;
        for i in 0..n {
            let pred: f64 = mu + x[i].iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            ss += (inst.y[i] - pred) * (inst.y[i] - pred);
        }
        let pen: f64 =
            beta.iter().zip(w).map(|(b, wj)| lambda * wj * b.abs()).sum();
        best = best.min(ss / (2.0 * n as f64) + pen);
    }
    best
}

/// Random rooted tree as a TSV edge list: every internal node gets 2..=max_k
/// children, leaves appear at mixed depths.
pub fn random_tree(rng: &mut ChaCha8Rng, max_depth: usize, max_k: usize) -> FeatureTree {
    let mut edges = String::new();
    let mut counter = 0usize;
    let mut leaf_counter = 0usize;
    #[allow(clippy::too_many_arguments)]
    fn grow(
        rng: &mut ChaCha8Rng,
        parent: &str,
        depth: usize,
        max_depth: usize,
        max_k: usize,
        edges: &mut String,
        counter: &mut usize,
        leaf_counter: &mut usize,
    ) {
        let n_children = rng.gen_range(2..=max_k);
        for _ in 0..n_children {
            let leaf = depth + 1 >= max_depth || rng.gen_bool(0.45);
            if leaf {
                *leaf_counter += 1;
                edges.push_str(&format!("x{}\t{parent}\n", *leaf_counter));
            } else {
                *counter += 1;
                let name = format!("g{}", *counter);
                edges.push_str(&format!("{name}\t{parent}\n"));
                grow(rng, &name, depth + 1, max_depth, max_k, edges, counter, leaf_counter);
            }
        }
    }
    grow(rng, "root", 0, max_depth.max(1), max_k.max(2), &mut edges, &mut counter, &mut leaf_counter);
    FeatureTree::parse_tsv(&edges).unwrap()
}

/// Random aggregation set: a top-down cut of the tree whose leaf sets
/// partition all native leaves.
pub fn random_aggregation_set(tree: &FeatureTree, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(u) = stack.pop() {
        if tree.is_leaf(u) || rng.gen_bool(0.35) {
            out.push(u);
        } else {
            stack.extend(tree.node(u).children.iter().copied());
        }
    }
    out
}

/// Bernoulli design over a tree's leaves with no all-zero columns.
pub fn random_design(tree: &FeatureTree, n: usize, prevalence: f64, rng: &mut ChaCha8Rng) -> BinaryMatrix {
    let p0 = tree.leaves().len();
    loop {
        let cols: Vec<Vec<u32>> = (0..p0)
            .map(|_| (0..n as u32).filter(|_| rng.gen_bool(prevalence)).collect())
            .collect();
        if cols.iter().all(|c| !c.is_empty()) {
            return BinaryMatrix::from_columns(n, cols).unwrap();
        }
    }
}
