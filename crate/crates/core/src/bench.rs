//! Repeated-simulation studies: generate a replicate, tune by
//! cross-validation, refit, score held-out data, and aggregate means with
//! standard errors across replicates.

use crate::error::{Error, Result};
use crate::expansion::ExpandOptions;
use crate::linalg;
use crate::metrics::{self, OperatingPoint};
use crate::pipeline::Prepared;
use crate::rng;
use crate::selection;
use crate::simgen;
use crate::solver::{Loss, SolverConfig};
use crate::tuning::{self, CvMetric, CvOptions, TuningGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression(u8),
    Classification(u8),
}

impl Task {
    pub fn parse(name: &str) -> Result<Task> {
        let lower = name.to_ascii_lowercase();
        let (kind, case) = lower
            .rsplit_once("-case")
            .ok_or_else(|| Error::Invalid(format!("unknown task '{name}'")))?;
        let case: u8 = case
            .parse()
            .map_err(|_| Error::Invalid(format!("bad case number in task '{name}'")))?;
        match kind {
            "regression" if (1..=3).contains(&case) => Ok(Task::Regression(case)),
            "classification" if (1..=4).contains(&case) => Ok(Task::Classification(case)),
            _ => Err(Error::Invalid(format!("unknown task '{name}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Task::Regression(c) => format!("regression-case{c}"),
            Task::Classification(c) => format!("classification-case{c}"),
        }
    }

    /// (tree id, training n, default test n)
    fn shape(&self) -> (u8, usize, usize) {
        match self {
            Task::Regression(3) => (2, 200, 200),
            Task::Regression(_) => (1, 200, 200),
            Task::Classification(4) => (3, 100, 1000),
            Task::Classification(_) => (1, 200, 1000),
        }
    }

    fn snr(&self) -> f64 {
        match self {
            Task::Regression(1) => 0.5,
            _ => 2.0,
        }
    }

    fn class_params(&self) -> (f64, f64, f64, f64) {
        match self {
            Task::Classification(1) => (1.0, 1.0, 0.0, 0.0),
            Task::Classification(2) => (0.66, 0.6, 0.0, 0.0),
            Task::Classification(3) => (0.7, 1.0, 0.0, 0.0),
            Task::Classification(4) => (0.9, 1.0, 1.5, -3.5),
            _ => unreachable!("regression task has no class params"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub task: Task,
    pub replicates: usize,
    pub seed: u64,
    pub grid: TuningGrid,
    pub solver: SolverConfig,
    pub warm_start: bool,
    pub prevalence: f64,
    pub train_n: Option<usize>,
    pub test_n: Option<usize>,
}

impl BenchConfig {
    pub fn new(task: Task) -> BenchConfig {
        let mut grid = TuningGrid::default();
        let mut solver = SolverConfig::default();
        if matches!(task, Task::Classification(_)) {
            grid.metric = CvMetric::Deviance;
            solver.loss = Loss::Logistic;
        }
        BenchConfig {
            task,
            replicates: 20,
            seed: 20240901,
            grid,
            solver,
            warm_start: true,
            prevalence: 0.1,
            train_n: None,
            test_n: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub task: String,
    pub replicates: usize,
    pub seed: u64,
    pub summary: Vec<MetricSummary>,
    /// Per-replicate metric values, replicate-major.
    pub rows: Vec<BTreeMap<String, f64>>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench json")
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.iter().find(|m| m.metric == metric).map(|m| m.mean)
    }
}

fn one_regression_replicate(cfg: &BenchConfig, rep: u64) -> Result<BTreeMap<String, f64>> {
    let (tree_id, n_default, test_default) = cfg.task.shape();
    let n = cfg.train_n.unwrap_or(n_default);
    let test_n = cfg.test_n.unwrap_or(test_default);
    let seed = rng::replicate_seed(cfg.seed, rep);
    let test_seed = rng::derive(seed, 1);

    let tree = simgen::builtin_tree(tree_id)?;
    let p0 = tree.leaves().len();
    let x0 = simgen::gen_design(n, p0, cfg.prevalence, seed)?;
    let sample = simgen::gen_regression(&tree, &x0, cfg.task.snr(), seed)?;

    let prepared = Prepared::new(&tree, &x0, &ExpandOptions::default())?;
    let opts = CvOptions {
        seed,
        fold_assignment: None,
        warm_start: cfg.warm_start,
        solver: cfg.solver.clone(),
    };
    let cv = tuning::cross_validate(&prepared, &sample.y, &cfg.grid, &opts)?;
    let fit = prepared.fit(&sample.y, cv.best_lambda, cv.best_alpha, &cfg.solver)?;

    let x_test = simgen::gen_design(test_n, p0, cfg.prevalence, test_seed)?;
    let test = simgen::gen_regression_with_sigma(&tree, &x_test, sample.sigma2, test_seed)?;
    let pred = prepared.linear_predictor(&fit, &x_test)?;

    let selected = selection::select_groups(&fit.gamma, &prepared.map);
    let gamma_star = sample.truth.gamma_on(&prepared.expanded);
    let (fnr, fpr) = metrics::grouping_fnr_fpr(&selected, &gamma_star, &prepared.map);

    let mut row = BTreeMap::new();
    row.insert("mse".into(), metrics::mse(&test.y, &pred));
    row.insert("fnr".into(), fnr);
    row.insert("fpr".into(), fpr);
    row.insert("alpha".into(), cv.best_alpha);
    row.insert("lambda".into(), cv.best_lambda);
    Ok(row)
}

fn one_classification_replicate(cfg: &BenchConfig, rep: u64) -> Result<BTreeMap<String, f64>> {
    let (tree_id, n_default, test_default) = cfg.task.shape();
    let n = cfg.train_n.unwrap_or(n_default);
    let test_n = cfg.test_n.unwrap_or(test_default);
    let seed = rng::replicate_seed(cfg.seed, rep);
    let test_seed = rng::derive(seed, 1);
    let (a, b, c, d) = cfg.task.class_params();

    let tree = simgen::builtin_tree(tree_id)?;
    let p0 = tree.leaves().len();
    let x0 = simgen::gen_design(n, p0, cfg.prevalence, seed)?;
    let sample = simgen::gen_classification(&tree, &x0, a, b, c, d, seed)?;

    let prepared = Prepared::new(&tree, &x0, &ExpandOptions::default())?;
    let opts = CvOptions {
        seed,
        fold_assignment: None,
        warm_start: cfg.warm_start,
        solver: cfg.solver.clone(),
    };
    let cv = tuning::cross_validate(&prepared, &sample.y, &cfg.grid, &opts)?;
    let fit = prepared.fit(&sample.y, cv.best_lambda, cv.best_alpha, &cfg.solver)?;

    let x_test = simgen::gen_design(test_n, p0, cfg.prevalence, test_seed)?;
    let test = simgen::gen_classification(&tree, &x_test, a, b, c, d, test_seed)?;
    let scores = prepared.linear_predictor(&fit, &x_test)?;

    let selected = selection::select_groups(&fit.gamma, &prepared.map);
    let gamma_star = sample.truth.gamma_on(&prepared.expanded);
    let (fnr, fpr) = metrics::grouping_fnr_fpr(&selected, &gamma_star, &prepared.map);

    let mut row = BTreeMap::new();
    row.insert("auc".into(), metrics::auc(&test.y, &scores)?);
    row.insert("auprc".into(), metrics::auprc(&test.y, &scores)?);
    for (name, spec) in [("90", 0.90), ("95", 0.95)] {
        let (sens, ppv, _) =
            metrics::sens_ppv_at(&test.y, &scores, OperatingPoint::Specificity(spec))?;
        row.insert(format!("sens_spec{name}"), sens);
        row.insert(format!("ppv_spec{name}"), ppv);
    }
    row.insert("fnr".into(), fnr);
    row.insert("fpr".into(), fpr);
    row.insert("alpha".into(), cv.best_alpha);
    row.insert("lambda".into(), cv.best_lambda);
    Ok(row)
}

/// Run all replicates (in parallel) and aggregate.
pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.replicates == 0 {
        return Err(Error::Invalid("need at least one replicate".into()));
    }
    let rows: Vec<BTreeMap<String, f64>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|rep| match cfg.task {
            Task::Regression(_) => one_regression_replicate(cfg, rep),
            Task::Classification(_) => one_classification_replicate(cfg, rep),
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    if let Some(first) = rows.first() {
        for metric in first.keys() {
            let vals: Vec<f64> = rows.iter().map(|r| r[metric]).collect();
            let (mean, se) = linalg::mean_se(&vals);
            summary.push(MetricSummary { metric: metric.clone(), mean, se });
        }
    }
    Ok(BenchReport {
        task: cfg.task.name(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        summary,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_parsing() {
        assert_eq!(Task::parse("regression-case2").unwrap(), Task::Regression(2));
        assert_eq!(Task::parse("Classification-Case4").unwrap(), Task::Classification(4));
        assert!(Task::parse("regression-case9").is_err());
        assert!(Task::parse("nonsense").is_err());
        assert_eq!(Task::parse("regression-case1").unwrap().name(), "regression-case1");
    }

    #[test]
    fn tiny_regression_bench_runs() {
        // minimal smoke run: 2 replicates on a thin grid
        let mut cfg = BenchConfig::new(Task::Regression(2));
        cfg.replicates = 2;
        cfg.grid.alphas = vec![0.5];
        cfg.grid.n_lambda = 4;
        cfg.grid.folds = 3;
        cfg.train_n = Some(60);
        cfg.test_n = Some(40);
        let report = run(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.mean("mse").unwrap().is_finite());
        assert!(report.mean("fnr").is_some());
        assert!(report.mean("fpr").is_some());
        // determinism
        let again = run(&cfg).unwrap();
        assert_eq!(report.to_json(), again.to_json());
    }
}
