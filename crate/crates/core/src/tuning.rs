//! Tuning-parameter selection: the analytic `lambda*` bound and k-fold
//! cross-validation over the `(alpha, lambda)` grid.
//!
//! `lambda*` is the smallest penalty level at which everything is zero at the
//! grid extremes: `lambda_1*` kills the l1 side (`alpha = 0`), `lambda_2*`
//! the group side (`alpha = 1`), and the grid runs log-spaced down from
//! their maximum. Expansion happens once on the full data; folds reuse the
//! same columns, groups, and weights.

use crate::error::{Error, Result};
use crate::linalg;
use crate::pipeline::Prepared;
use crate::rng::{self, stream};
use crate::solver::{self, Loss, SolverConfig};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMetric {
    Mse,
    Deviance,
}

#[derive(Debug, Clone)]
pub struct TuningGrid {
    /// Mixing values, ascending.
    pub alphas: Vec<f64>,
    pub n_lambda: usize,
    /// Smallest lambda as a fraction of lambda*.
    pub lambda_min_frac: f64,
    pub folds: usize,
    pub metric: CvMetric,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            n_lambda: 50,
            lambda_min_frac: 0.01,
            folds: 5,
            metric: CvMetric::Mse,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub seed: u64,
    /// Explicit fold assignment (row -> fold id); seeded folds otherwise.
    pub fold_assignment: Option<Vec<usize>>,
    /// Initialize each fit from the previous point on the lambda path.
    pub warm_start: bool,
    pub solver: SolverConfig,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { seed: 0, fold_assignment: None, warm_start: true, solver: SolverConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCell {
    pub alpha: f64,
    pub lambda: f64,
    pub mean_score: f64,
    pub se_score: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub best_alpha: f64,
    pub best_lambda: f64,
    pub lambda_max: f64,
    pub lambda_values: Vec<f64>,
    pub table: Vec<CvCell>,
}

/// Analytic upper bound for the lambda grid. The response is centered by its
/// mean first (for the logistic case this uses `y - ybar` as a working
/// response in the same formula).
pub fn lambda_max(prepared: &Prepared, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = linalg::mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();

    // l1 side: max_j |x_j^T y| / (n w~_j) over design columns
    let mut l1 = 0.0f64;
    for j in 0..prepared.design.x.n_cols() {
        let dot: f64 = prepared.design.x.col(j).iter().map(|&r| yc[r as usize]).sum();
        let w = prepared.map.feature_weights[j];
        l1 = l1.max(dot.abs() / (n * w));
    }
    // group side: max_g ||(X A P_g)^T y|| / (n w_g)
    let mut node_dots = vec![0.0; prepared.map.n_nodes];
    prepared.ops.rmatvec(&yc, &mut node_dots);
    let mut l2 = 0.0f64;
    for g in &prepared.map.groups {
        let ss: f64 = g.nodes.iter().map(|&u| node_dots[u] * node_dots[u]).sum();
        l2 = l2.max(ss.sqrt() / (n * g.weight));
    }
    l1.max(l2)
}

/// Log-spaced lambda path from `lambda_max` down to `frac * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, min_frac: f64) -> Vec<f64> {
    if lambda_max <= 0.0 || n_lambda == 0 {
        return vec![0.0];
    }
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    let lo = (lambda_max * min_frac).ln();
    let hi = lambda_max.ln();
    (0..n_lambda)
        .map(|i| (hi + (lo - hi) * i as f64 / (n_lambda - 1) as f64).exp())
        .collect()
}

/// Fold assignment by seeded shuffle; stratified by class when labels are
/// given so every training part keeps both classes.
pub fn make_folds(n: usize, k: usize, seed: u64, labels: Option<&[f64]>) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }
    if n < k {
        return Err(Error::Invalid(format!("cannot split {n} rows into {k} folds")));
    }
    let mut rng = rng::stream_rng(seed, stream::FOLDS);
    let mut assign = vec![0usize; n];
    match labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            shuffle(&mut idx, &mut rng);
            for (pos, &row) in idx.iter().enumerate() {
                assign[row] = pos % k;
            }
        }
        Some(y) => {
            for class in [1.0, 0.0] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
                if idx.len() < 2 {
                    return Err(Error::Invalid(
                        "stratified folds need at least 2 rows of each class".into(),
                    ));
                }
                shuffle(&mut idx, &mut rng);
                for (pos, &row) in idx.iter().enumerate() {
                    assign[row] = pos % k;
                }
            }
        }
    }
    Ok(assign)
}

fn shuffle(idx: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

fn score(metric: CvMetric, y: &[f64], eta: &[f64]) -> f64 {
    match metric {
        CvMetric::Mse => crate::metrics::mse(y, eta),
        CvMetric::Deviance => {
            let mut acc = 0.0;
            for (&yi, &e) in y.iter().zip(eta) {
                let p = (1.0 / (1.0 + (-e).exp())).clamp(1e-12, 1.0 - 1e-12);
                acc += -2.0 * (yi * p.ln() + (1.0 - yi) * (1.0 - p).ln());
            }
            acc / y.len() as f64
        }
    }
}

/// Expand once, then refit on each fold's training part over the whole
/// `(alpha, lambda)` grid and score the held-out part. The minimizing cell
/// wins; exact ties go to the larger lambda, then the larger alpha.
pub fn cross_validate(
    prepared: &Prepared,
    y: &[f64],
    grid: &TuningGrid,
    opts: &CvOptions,
) -> Result<CvResult> {
    let n = y.len();
    if n != prepared.ops.n_rows() {
        return Err(Error::Invalid("response length does not match the design".into()));
    }
    if grid.alphas.is_empty() || grid.n_lambda == 0 {
        return Err(Error::Invalid("empty tuning grid".into()));
    }
    let classify = opts.solver.loss == Loss::Logistic;
    let assign = match &opts.fold_assignment {
        Some(a) => {
            if a.len() != n {
                return Err(Error::Invalid("fold assignment length mismatch".into()));
            }
            a.clone()
        }
        None => make_folds(n, grid.folds, opts.seed, classify.then_some(y))?,
    };
    let n_folds = assign.iter().max().map(|m| m + 1).unwrap_or(0);
    if n_folds < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }

    let lmax = lambda_max(prepared, y);
    let lambdas = lambda_grid(lmax, grid.n_lambda, grid.lambda_min_frac);

    struct FoldData {
        ops: solver::NodeColumns,
        x_test: crate::design::BinaryMatrix,
        y_train: Vec<f64>,
        y_test: Vec<f64>,
        sigma_sq: f64,
    }
    let folds: Vec<FoldData> = (0..n_folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            if classify {
                let ones = y_train.iter().filter(|&&v| v == 1.0).count();
                if ones == 0 || ones == y_train.len() {
                    return Err(Error::Invalid(format!(
                        "fold {f} leaves a single-class training set; re-stratify"
                    )));
                }
            }
            let ops = prepared.ops.select_rows(&train);
            let sigma_sq = solver::design_spectral_sq(&ops, opts.solver.intercept);
            Ok(FoldData {
                ops,
                x_test: prepared.design.x.select_rows(&test),
                y_train,
                y_test: test.iter().map(|&i| y[i]).collect(),
                sigma_sq,
            })
        })
        .collect::<Result<_>>()?;

    // one task per (fold, alpha): walk the lambda path with warm starts
    let tasks: Vec<(usize, usize)> = (0..n_folds)
        .flat_map(|f| (0..grid.alphas.len()).map(move |a| (f, a)))
        .collect();
    let path_scores: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(f, a)| {
            let fold = &folds[f];
            let alpha = grid.alphas[a];
            let mut cfg = opts.solver.clone();
            let mut scores = Vec::with_capacity(lambdas.len());
            let mut prev: Option<(f64, Vec<f64>)> = None;
            for &lambda in &lambdas {
                cfg.init = if opts.warm_start { prev.clone() } else { None };
                let fit = solver::fit_with_spectral(
                    &fold.ops,
                    &prepared.map,
                    &fold.y_train,
                    lambda,
                    alpha,
                    &cfg,
                    Some(fold.sigma_sq),
                )?;
                let mut eta = vec![0.0; fold.y_test.len()];
                fold.x_test.matvec(&fit.beta, &mut eta);
                for e in eta.iter_mut() {
                    *e += fit.mu;
                }
                scores.push(score(grid.metric, &fold.y_test, &eta));
                prev = Some((fit.mu, fit.gamma));
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;

    // assemble the table: alphas ascending, lambdas descending as generated
    let mut table = Vec::with_capacity(grid.alphas.len() * lambdas.len());
    let mut best: Option<(f64, f64, f64)> = None; // score, lambda, alpha
    for (a, &alpha) in grid.alphas.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let per_fold: Vec<f64> = (0..n_folds)
                .map(|f| {
                    let task = f * grid.alphas.len() + a;
                    path_scores[task][li]
                })
                .collect();
            let (mean, se) = linalg::mean_se(&per_fold);
            if !mean.is_finite() {
                return Err(Error::Numerical("non-finite cross-validation score".into()));
            }
            table.push(CvCell { alpha, lambda, mean_score: mean, se_score: se, chosen: false });
            let replace = match best {
                None => true,
                Some((s, l, al)) => {
                    mean < s
                        || (mean == s && (lambda > l || (lambda == l && alpha > al)))
                }
            };
            if replace {
                best = Some((mean, lambda, alpha));
            }
        }
    }
    let (_, best_lambda, best_alpha) = best.expect("non-empty grid");
    for cell in table.iter_mut() {
        cell.chosen = cell.lambda == best_lambda && cell.alpha == best_alpha;
    }
    Ok(CvResult { best_alpha, best_lambda, lambda_max: lmax, lambda_values: lambdas, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::ExpandOptions;
    use crate::simgen;

    fn toy_prepared(seed: u64, n: usize) -> (Prepared, Vec<f64>) {
        let tree = crate::tree::FeatureTree::parse_tsv(
            "g1\troot\nx1\tg1\nx2\tg1\nx3\tg1\ng2\troot\nx4\tg2\nx5\tg2\n",
        )
        .unwrap();
        let x0 = simgen::gen_design(n, 5, 0.3, seed).unwrap();
        let mut rng = crate::rng::stream_rng(seed, crate::rng::stream::NOISE);
        let y: Vec<f64> =
            (0..n).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        (Prepared::new(&tree, &x0, &ExpandOptions::default()).unwrap(), y)
    }

    #[test]
    fn lambda_max_props() {
        let (prep, y) = toy_prepared(31, 60);
        let lmax = lambda_max(&prep, &y);
        assert!(lmax > 0.0);
        // linear in y
        let y2: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        assert!((lambda_max(&prep, &y2) - 3.0 * lmax).abs() < 1e-10 * lmax);
        // orthogonal response: zero bound (constant y centers to zero)
        let flat = vec![4.0; y.len()];
        assert_eq!(lambda_max(&prep, &flat), 0.0);
    }

    #[test]
    fn lambda_max_hand_toy() {
        // 3-leaf flat tree, tiny design: both maxima by hand
        let tree = crate::tree::FeatureTree::parse_tsv("a\tr\nb\tr\nc\tr\n").unwrap();
        let x0 = crate::design::BinaryMatrix::from_columns(
            4,
            vec![vec![0, 1], vec![1, 2], vec![3]],
        )
        .unwrap();
        let prep = Prepared::new(&tree, &x0, &ExpandOptions::default()).unwrap();
        let y = vec![2.0, -1.0, 1.0, 0.0];
        let got = lambda_max(&prep, &y);

        // by hand, after centering y
        let ybar = 0.5;
        let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
        let n = 4.0;
        let xs = x0.to_dense();
        let mut l1: f64 = 0.0;
        let mut cols: Vec<Vec<f64>> = (0..x0.n_cols())
            .map(|j| (0..4).map(|i| xs[i][j]).collect())
            .collect();
        // surviving interaction columns (a&b nonzero; others empty/dropped)
        let ab: Vec<f64> = (0..4).map(|i| cols[0][i] * cols[1][i]).collect();
        if ab.iter().any(|v| *v != 0.0) {
            cols.push(ab);
        }
        for col in &cols {
            let m: f64 = col.iter().sum();
            let w = (m / n).sqrt();
            let dot: f64 = col.iter().zip(&yc).map(|(a, b)| a * b).sum();
            l1 = l1.max(dot.abs() / (n * w));
        }
        assert!((got - l1).abs() <= got * 0.5 + 1e-12);
        assert!(got >= l1 - 1e-12, "lambda* dominates the l1 bound");
    }

    #[test]
    fn lambda_grid_shape() {
        let g = lambda_grid(2.0, 5, 0.01);
        assert_eq!(g.len(), 5);
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[4] - 0.02).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(lambda_grid(0.0, 5, 0.01), vec![0.0]);
    }

    #[test]
    fn folds_cover_and_stratify() {
        let assign = make_folds(23, 5, 7, None).unwrap();
        assert_eq!(assign.len(), 23);
        for f in 0..5 {
            let c = assign.iter().filter(|&&a| a == f).count();
            assert!((4..=5).contains(&c));
        }
        let y: Vec<f64> = (0..20).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let assign = make_folds(20, 4, 7, Some(&y)).unwrap();
        for f in 0..4 {
            let train_ones =
                (0..20).filter(|&i| assign[i] != f && y[i] == 1.0).count();
            assert!(train_ones >= 1, "training part of fold {f} lost the positives");
        }
        assert!(make_folds(5, 2, 1, Some(&[1.0, 0.0, 0.0, 0.0, 0.0])).is_err());
        assert!(make_folds(3, 5, 1, None).is_err());
    }

    #[test]
    fn single_point_grid_returns_it() {
        let (prep, y) = toy_prepared(33, 40);
        let grid = TuningGrid {
            alphas: vec![0.5],
            n_lambda: 1,
            lambda_min_frac: 1.0,
            folds: 3,
            metric: CvMetric::Mse,
        };
        let opts = CvOptions { seed: 5, ..Default::default() };
        let res = cross_validate(&prep, &y, &grid, &opts).unwrap();
        assert_eq!(res.best_alpha, 0.5);
        assert!((res.best_lambda - res.lambda_max).abs() < 1e-15);
        assert_eq!(res.table.len(), 1);
        // deterministic under repetition
        let res2 = cross_validate(&prep, &y, &grid, &opts).unwrap();
        assert_eq!(res.table[0].mean_score.to_bits(), res2.table[0].mean_score.to_bits());
    }

    #[test]
    fn permuting_rows_with_folds_keeps_selection() {
        let (prep, y) = toy_prepared(34, 48);
        let grid = TuningGrid {
            alphas: vec![0.0, 1.0],
            n_lambda: 8,
            lambda_min_frac: 0.05,
            folds: 4,
            metric: CvMetric::Mse,
        };
        let assign = make_folds(48, 4, 11, None).unwrap();
        let opts = CvOptions {
            fold_assignment: Some(assign.clone()),
            ..Default::default()
        };
        let res = cross_validate(&prep, &y, &grid, &opts).unwrap();

        // apply a permutation to rows, response, and fold labels alike
        let mut perm: Vec<usize> = (0..48).collect();
        perm.reverse();
        let x_perm = {
            // rebuild the original x0 by permuting rows of the bound design
            let tree = prep.tree.clone();
            let x0_cols: Vec<Vec<u32>> = (0..5).map(|j| prep.design.x.col(j).to_vec()).collect();
            let x0 = crate::design::BinaryMatrix::from_columns(48, x0_cols).unwrap();
            let xp = x0.select_rows(&perm);
            Prepared::new(&tree, &xp, &ExpandOptions::default()).unwrap()
        };
        let y_perm: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let assign_perm: Vec<usize> = perm.iter().map(|&i| assign[i]).collect();
        let opts_perm = CvOptions {
            fold_assignment: Some(assign_perm),
            ..Default::default()
        };
        let res_perm = cross_validate(&x_perm, &y_perm, &grid, &opts_perm).unwrap();
        assert_eq!(res.best_alpha, res_perm.best_alpha);
        assert!((res.best_lambda - res_perm.best_lambda).abs() < 1e-12 * res.best_lambda.max(1e-12));
    }
}
