//! Synthetic benchmark generators: three built-in hierarchies, rare binary
//! designs, regression and classification outcomes with controlled signal
//! strength, and case-control subsampling.
//!
//! All generators are pure functions of `(config, seed)`; independent pieces
//! draw from separate named streams (see [`crate::rng`]) and replicate `r` of
//! a study uses `seed + r`.

use crate::design::BinaryMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, stream};
use crate::tree::FeatureTree;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The three simulated hierarchies: 15, 42, and 43 leaves with max child
/// counts 4, 11, and 10.
pub fn builtin_tree(id: u8) -> Result<FeatureTree> {
    let edges = match id {
        1 => tree1_edges(),
        2 => tree2_edges(),
        3 => tree3_edges(),
        _ => return Err(Error::Invalid(format!("no built-in tree {id}; use 1, 2, or 3"))),
    };
    FeatureTree::parse_tsv(&edges)
}

fn shared_stem() -> String {
    let mut s = String::new();
    s.push_str("b1\troot\n");
    s.push_str("b11\tb1\n");
    for i in 1..=4 {
        s.push_str(&format!("x{i}\tb11\n"));
    }
    s.push_str("b12\tb1\nb121\tb12\nx5\tb121\nx6\tb121\nb122\tb12\nx7\tb122\nx8\tb122\n");
    s.push_str("x9\tb1\n");
    s.push_str("b2\troot\nb21\tb2\nx10\tb21\nx11\tb21\nx12\tb21\nx13\tb2\n");
    s.push_str("x14\troot\nx15\troot\n");
    s
}

fn tree1_edges() -> String {
    shared_stem()
}

fn tree2_edges() -> String {
    let mut s = shared_stem();
    s.push_str("b5\troot\n");
    for i in 16..=25 {
        s.push_str(&format!("x{i}\tb5\n"));
    }
    s.push_str("b6\troot\n");
    for i in 26..=35 {
        s.push_str(&format!("x{i}\tb6\n"));
    }
    s.push_str("b7\troot\n");
    for i in 36..=38 {
        s.push_str(&format!("x{i}\tb7\n"));
    }
    for i in 39..=42 {
        s.push_str(&format!("x{i}\troot\n"));
    }
    s
}

fn tree3_edges() -> String {
    let mut s = shared_stem();
    s.push_str("b5\troot\nx16\tb5\nx17\tb5\n");
    s.push_str("b6\troot\nx18\tb6\nx19\tb6\n");
    s.push_str("b7\troot\nb71\tb7\nx20\tb71\nx21\tb71\nx22\tb7\n");
    s.push_str("b8\troot\n");
    for i in 23..=32 {
        s.push_str(&format!("x{i}\tb8\n"));
    }
    s.push_str("b9\troot\n");
    for i in 33..=42 {
        s.push_str(&format!("x{i}\tb9\n"));
    }
    s.push_str("x43\troot\n");
    s
}

/// i.i.d. Bernoulli(prevalence) design, deterministic in the seed.
pub fn gen_design(n: usize, p0: usize, prevalence: f64, seed: u64) -> Result<BinaryMatrix> {
    if n == 0 {
        return Err(Error::Invalid("need n >= 1 rows".into()));
    }
    if !(0.0..1.0).contains(&prevalence) {
        return Err(Error::Invalid("prevalence must lie in [0, 1)".into()));
    }
    let mut rng = rng::stream_rng(seed, stream::DESIGN);
    let mut cols = Vec::with_capacity(p0);
    for _ in 0..p0 {
        cols.push((0..n as u32).filter(|_| rng.gen_bool(prevalence)).collect());
    }
    BinaryMatrix::from_columns(n, cols)
}

fn or_feature(x0: &BinaryMatrix, cols: &[usize]) -> Vec<f64> {
    let rows = x0.or_of(cols);
    let mut out = vec![0.0; x0.n_rows()];
    for r in rows {
        out[r as usize] = 1.0;
    }
    out
}

/// Ground truth written next to a simulated dataset: the intercept, the
/// per-leaf coefficients, the nonzero node values of the equi-sparse
/// representation, and the coarsest aggregation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub mu: f64,
    pub beta: BTreeMap<String, f64>,
    pub gamma: BTreeMap<String, f64>,
    pub coarsest_set: Vec<String>,
    pub sigma2: Option<f64>,
}

impl Truth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth json")
    }

    pub fn from_json(text: &str) -> Result<Truth> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("truth json: {e}")))
    }

    fn build(tree: &FeatureTree, mu: f64, beta_leaf: &[f64], sigma2: Option<f64>) -> Result<Truth> {
        let set = crate::selection::coarsest_aggregation_set(tree, beta_leaf)?;
        let mut gamma = BTreeMap::new();
        for &u in &set {
            let leaves = tree.leaves_under(u)?;
            let val = beta_leaf[tree.column_of(leaves[0]).unwrap()];
            if val != 0.0 {
                gamma.insert(tree.label(u).to_string(), val);
            }
        }
        let beta = tree
            .leaf_labels()
            .into_iter()
            .zip(beta_leaf.iter().copied())
            .collect();
        Ok(Truth {
            mu,
            beta,
            gamma,
            coarsest_set: set.iter().map(|&u| tree.label(u).to_string()).collect(),
            sigma2,
        })
    }

    /// Truth `gamma*` on an expanded tree, for grouping accuracy.
    pub fn gamma_on(&self, expanded: &crate::expansion::ExpandedTree) -> Vec<f64> {
        (0..expanded.len())
            .map(|u| self.gamma.get(expanded.label(u)).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Per-leaf regression coefficients: 3 on x1..x4, -5 on x9, 1.5 on x10..x13.
fn regression_beta(p0: usize) -> Result<Vec<f64>> {
    if p0 < 13 {
        return Err(Error::Invalid("regression signal needs at least 13 features".into()));
    }
    let mut beta = vec![0.0; p0];
    for b in beta.iter_mut().take(4) {
        *b = 3.0;
    }
    beta[8] = -5.0;
    for b in beta.iter_mut().take(13).skip(9) {
        *b = 1.5;
    }
    Ok(beta)
}

fn regression_signal(x0: &BinaryMatrix) -> Result<Vec<f64>> {
    if x0.n_cols() < 13 {
        return Err(Error::Invalid("regression signal needs at least 13 features".into()));
    }
    let or1 = or_feature(x0, &[0, 1, 2, 3]);
    let or2 = or_feature(x0, &[9, 10, 11, 12]);
    Ok((0..x0.n_rows())
        .map(|i| 2.0 + 3.0 * or1[i] - 5.0 * f64::from(x0.get(i, 8)) + 1.5 * or2[i])
        .collect())
}

#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub y: Vec<f64>,
    pub signal: Vec<f64>,
    pub sigma2: f64,
    pub truth: Truth,
}

/// Continuous outcome with noise variance calibrated so that
/// `var(signal) / sigma^2 = snr` on the realized design.
pub fn gen_regression(tree: &FeatureTree, x0: &BinaryMatrix, snr: f64, seed: u64) -> Result<RegressionSample> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::Invalid("snr must be positive".into()));
    }
    let signal = regression_signal(x0)?;
    let sigma2 = linalg::variance(&signal) / snr;
    gen_regression_with_sigma(tree, x0, sigma2, seed)
}

/// Same signal with a fixed noise variance; used to score held-out data under
/// the exact model of the training replicate.
pub fn gen_regression_with_sigma(
    tree: &FeatureTree,
    x0: &BinaryMatrix,
    sigma2: f64,
    seed: u64,
) -> Result<RegressionSample> {
    let signal = regression_signal(x0)?;
    let mut noise_rng = rng::stream_rng(seed, stream::NOISE);
    let sd = sigma2.sqrt();
    let y: Vec<f64> =
        signal.iter().map(|s| s + sd * rng::standard_normal(&mut noise_rng)).collect();
    let beta = regression_beta(x0.n_cols())?;
    let truth = Truth::build(tree, 2.0, &beta, Some(sigma2))?;
    Ok(RegressionSample { y, signal, sigma2, truth })
}

#[derive(Debug, Clone)]
pub struct ClassificationSample {
    pub y: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub truth: Truth,
}

/// Binary outcome: `y ~ Bernoulli(sigmoid(eta))` with
/// `eta = -5a + b [z + 5 or(x1..x4) + 4 x9 - 1.5 or(x10..x13)]
///        + c or(x18,x19) - d or(x20..x22)`, `z ~ N(0, 0.25)`.
pub fn gen_classification(
    tree: &FeatureTree,
    x0: &BinaryMatrix,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    seed: u64,
) -> Result<ClassificationSample> {
    let p0 = x0.n_cols();
    if p0 < 13 {
        return Err(Error::Invalid("classification signal needs at least 13 features".into()));
    }
    if (c != 0.0 || d != 0.0) && p0 < 22 {
        return Err(Error::Invalid(
            "nonzero c/d terms need at least 22 features (x18..x22)".into(),
        ));
    }
    let or1 = or_feature(x0, &[0, 1, 2, 3]);
    let or2 = or_feature(x0, &[9, 10, 11, 12]);
    let (or3, or4) = if c != 0.0 || d != 0.0 {
        (or_feature(x0, &[17, 18]), or_feature(x0, &[19, 20, 21]))
    } else {
        (vec![0.0; x0.n_rows()], vec![0.0; x0.n_rows()])
    };
    let mut latent = rng::stream_rng(seed, stream::LATENT);
    let mut labels = rng::stream_rng(seed, stream::LABELS);
    let mut y = Vec::with_capacity(x0.n_rows());
    let mut q = Vec::with_capacity(x0.n_rows());
    for i in 0..x0.n_rows() {
        let z = 0.5 * rng::standard_normal(&mut latent);
        let eta = -5.0 * a
            + b * (z + 5.0 * or1[i] + 4.0 * f64::from(x0.get(i, 8)) - 1.5 * or2[i])
            + c * or3[i]
            - d * or4[i];
        let p = 1.0 / (1.0 + (-eta).exp());
        q.push(p);
        y.push(if labels.gen_bool(p.clamp(0.0, 1.0)) { 1.0 } else { 0.0 });
    }
    let mut beta = vec![0.0; p0];
    for v in beta.iter_mut().take(4) {
        *v = 5.0 * b;
    }
    beta[8] = 4.0 * b;
    for v in beta.iter_mut().take(13).skip(9) {
        *v = -1.5 * b;
    }
    if c != 0.0 {
        beta[17] = c;
        beta[18] = c;
    }
    if d != 0.0 {
        for v in beta.iter_mut().take(22).skip(19) {
            *v = -d;
        }
    }
    let truth = Truth::build(tree, -5.0 * a, &beta, None)?;
    Ok(ClassificationSample { y, probabilities: q, truth })
}

/// Keep every positive row and draw `ratio` controls per case without
/// replacement. Returns sorted row indices.
pub fn case_control_subsample(y: &[f64], ratio: usize, seed: u64) -> Result<Vec<usize>> {
    let positives: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    let negatives: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 1.0).collect();
    let wanted = positives.len() * ratio;
    if wanted > negatives.len() {
        return Err(Error::Invalid(format!(
            "need {wanted} controls for a 1:{ratio} design but only {} available",
            negatives.len()
        )));
    }
    let mut pool = negatives;
    let mut rng = rng::stream_rng(seed, stream::SUBSAMPLE);
    // partial Fisher-Yates: the first `wanted` slots become the sample
    for i in 0..wanted {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut out = positives;
    out.extend_from_slice(&pool[..wanted]);
    out.sort_unstable();
    Ok(out)
}
