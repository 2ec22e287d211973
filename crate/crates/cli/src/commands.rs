//! Subcommand implementations: file plumbing around the library pipeline.

use crate::{AggregateArgs, BenchArgs, CvArgs, EvaluateArgs, ExportDotArgs, FitArgs, SimulateArgs};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use treeagg::bench::{BenchConfig, Task};
use treeagg::design::{self, Dataset};
use treeagg::error::{Error, Result};
use treeagg::expansion::ExpandOptions;
use treeagg::metrics::{self, EvalReport, OperatingPoint, OperatingSummary};
use treeagg::model::{fnv1a_hex, Model};
use treeagg::pipeline::Prepared;
use treeagg::selection::{self, AggregationPattern};
use treeagg::simgen;
use treeagg::solver::{Loss, SolverConfig};
use treeagg::tree::FeatureTree;
use treeagg::tuning::{self, CvMetric, CvOptions, TuningGrid};

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var("TREEAGG_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}

fn digest_of<T: Serialize>(args: &T) -> String {
    fnv1a_hex(serde_json::to_string(args).expect("args serialize").as_bytes())
}

fn parse_loss(name: &str) -> Result<Loss> {
    match name {
        "squared" => Ok(Loss::Squared),
        "logistic" => Ok(Loss::Logistic),
        other => Err(Error::Invalid(format!("unknown loss '{other}' (squared|logistic)"))),
    }
}

fn parse_alphas(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for piece in text.split(',') {
        let v: f64 = piece
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("bad alpha '{piece}'")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invalid(format!("alpha {v} outside [0, 1]")));
        }
        out.push(v);
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup();
    if out.is_empty() {
        return Err(Error::Invalid("empty alpha grid".into()));
    }
    Ok(out)
}

fn solver_config(args: &crate::SolverArgs) -> Result<SolverConfig> {
    Ok(SolverConfig {
        tau: args.tau,
        max_iter: args.max_iter,
        tol: args.tol,
        loss: parse_loss(&args.loss)?,
        w1: args.w1,
        w0: args.w0,
        ..SolverConfig::default()
    })
}

fn load_bound(io: &crate::DataArgs) -> Result<(FeatureTree, Dataset, treeagg::design::BinaryMatrix)> {
    let tree = FeatureTree::parse(&read(&io.tree)?)?;
    let data = design::read_csv(&read(&io.data)?, &io.response)?;
    let x0 = design::bind_to_tree(&tree, &data)?;
    Ok((tree, data, x0))
}

fn write_fit_outputs(
    dir: &Path,
    digest: &str,
    prepared: &Prepared,
    fit: &treeagg::solver::FitResult,
    lambda: f64,
    alpha: f64,
    cfg: &SolverConfig,
) -> Result<AggregationPattern> {
    let mut model = Model::from_fit(
        &prepared.tree,
        &prepared.expanded,
        &prepared.design,
        fit,
        lambda,
        alpha,
        cfg.tau,
        cfg.loss,
    );
    model.config_digest = Some(digest.to_string());
    let selected = selection::select_groups(&fit.gamma, &prepared.map);
    let pattern = selection::aggregation_pattern(&selected, &prepared.expanded, &prepared.map, &fit.gamma);
    write(dir, "model.json", &model.to_json())?;
    write(dir, "pattern.json", &pattern.to_json())?;
    write(dir, "tree.dot", &selection::export_dot(&prepared.tree, &pattern))?;
    Ok(pattern)
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let digest = digest_of(args);
    let cfg = solver_config(&args.solver)?;
    let (tree, data, x0) = load_bound(&args.io)?;
    let prepared = Prepared::new(&tree, &x0, &ExpandOptions { subset_cap: args.solver.subset_cap })?;
    let lambda = match args.lambda {
        Some(l) => l,
        None => args.lambda_frac * tuning::lambda_max(&prepared, &data.response),
    };
    let fitres = prepared.fit(&data.response, lambda, args.alpha, &cfg)?;
    let dir = out_dir(&args.out);
    let pattern = write_fit_outputs(&dir, &digest, &prepared, &fitres, lambda, args.alpha, &cfg)?;
    println!(
        "fit: n={} p={} ({} interaction columns dropped), lambda={lambda:.6}, alpha={}, \
         {} iterations ({}), objective {:.6}",
        x0.n_rows(),
        prepared.design.x.n_cols(),
        prepared.design.dropped.len(),
        args.alpha,
        fitres.iterations,
        if fitres.converged { "converged" } else { "max-iter" },
        fitres.exact_objective,
    );
    println!(
        "selected groups: [{}]; {} blocks ({} dropped); outputs in {}",
        pattern.selected_groups.join(", "),
        pattern.blocks.len(),
        pattern.blocks.iter().filter(|b| b.dropped).count(),
        dir.display(),
    );
    Ok(())
}

#[derive(Serialize)]
struct CvFile<'a> {
    config_digest: &'a str,
    loss: Loss,
    lambda_max: f64,
    best_alpha: f64,
    best_lambda: f64,
    table: &'a [tuning::CvCell],
}

pub fn cv(args: &CvArgs) -> Result<()> {
    let digest = digest_of(args);
    let cfg = solver_config(&args.solver)?;
    let (tree, data, x0) = load_bound(&args.io)?;
    let prepared = Prepared::new(&tree, &x0, &ExpandOptions { subset_cap: args.solver.subset_cap })?;
    let grid = TuningGrid {
        alphas: parse_alphas(&args.alphas)?,
        n_lambda: args.n_lambda,
        lambda_min_frac: args.lambda_min_frac,
        folds: args.folds,
        metric: match cfg.loss {
            Loss::Squared => CvMetric::Mse,
            Loss::Logistic => CvMetric::Deviance,
        },
    };
    let opts = CvOptions {
        seed: args.seed,
        fold_assignment: None,
        warm_start: !args.no_warm_start,
        solver: cfg.clone(),
    };
    let cv = tuning::cross_validate(&prepared, &data.response, &grid, &opts)?;
    let fitres = prepared.fit(&data.response, cv.best_lambda, cv.best_alpha, &cfg)?;
    let dir = out_dir(&args.out);
    let file = CvFile {
        config_digest: &digest,
        loss: cfg.loss,
        lambda_max: cv.lambda_max,
        best_alpha: cv.best_alpha,
        best_lambda: cv.best_lambda,
        table: &cv.table,
    };
    write(dir.as_path(), "cv.json", &serde_json::to_string_pretty(&file).expect("cv json"))?;
    write_fit_outputs(&dir, &digest, &prepared, &fitres, cv.best_lambda, cv.best_alpha, &cfg)?;
    println!(
        "cv: {} grid points x {} folds; best alpha={}, lambda={:.6} (lambda*={:.6}); outputs in {}",
        cv.table.len(),
        grid.folds,
        cv.best_alpha,
        cv.best_lambda,
        cv.lambda_max,
        dir.display(),
    );
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let seed = treeagg::rng::replicate_seed(args.seed, args.replicate);
    let tree = match (&args.tree_id, &args.tree) {
        (Some(id), None) => simgen::builtin_tree(*id)?,
        (None, Some(path)) => FeatureTree::parse(&read(path)?)?,
        (None, None) => simgen::builtin_tree(1)?,
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let leaf_names = tree.leaf_labels();
    if leaf_names.iter().any(|l| l == "y") {
        return Err(Error::Invalid("a leaf named 'y' collides with the response column".into()));
    }
    let p0 = leaf_names.len();
    let x0 = simgen::gen_design(args.n, p0, args.prevalence, seed)?;
    if args.prevalence == 0.0 {
        eprintln!("warning: prevalence 0 produces an all-zero design");
    }

    let (y, truth) = match args.mode.as_str() {
        "regression" => {
            let sample = simgen::gen_regression(&tree, &x0, args.snr, seed)?;
            (sample.y, sample.truth)
        }
        "classification" => {
            let sample =
                simgen::gen_classification(&tree, &x0, args.a, args.b, args.c, args.d, seed)?;
            (sample.y, sample.truth)
        }
        other => return Err(Error::Invalid(format!("unknown mode '{other}'"))),
    };

    let (x_out, y_out) = match args.case_control_ratio {
        None => (x0, y),
        Some(ratio) => {
            if args.mode != "classification" {
                return Err(Error::Invalid("case-control subsampling needs classification data".into()));
            }
            let keep = simgen::case_control_subsample(&y, ratio, seed)?;
            let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
            (x0.select_rows(&keep), ys)
        }
    };

    let dir = out_dir(&args.out);
    write(&dir, "data.csv", &design::write_csv(&leaf_names, &x_out, "y", &y_out))?;
    write(&dir, "tree.json", &tree.to_json())?;
    write(&dir, "truth.json", &truth.to_json())?;
    println!(
        "simulate: {} rows x {} features ({}, seed {seed}) written to {}",
        x_out.n_rows(),
        p0,
        args.mode,
        dir.display(),
    );
    Ok(())
}

fn parse_operating(text: &str) -> Result<Vec<OperatingPoint>> {
    let mut out = Vec::new();
    for piece in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some(pct) = piece.strip_prefix("spec") {
            let v: f64 = pct.parse().map_err(|_| Error::Invalid(format!("bad operating '{piece}'")))?;
            out.push(OperatingPoint::Specificity(v / 100.0));
        } else if let Some(pct) = piece.strip_prefix("top") {
            let v: f64 = pct.parse().map_err(|_| Error::Invalid(format!("bad operating '{piece}'")))?;
            out.push(OperatingPoint::TopFraction(v / 100.0));
        } else {
            return Err(Error::Invalid(format!(
                "bad operating point '{piece}' (use specNN or topNN)"
            )));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalFile<'a> {
    config_digest: &'a str,
    report: EvalReport,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let digest = digest_of(args);
    let model = Model::from_json(&read(&args.model)?)?;
    let data = design::read_csv(&read(&args.data)?, &args.response)?;
    let scores = model.linear_predictor(&data.feature_names, &data.features)?;

    let mut report = EvalReport::default();
    match model.loss {
        Loss::Squared => {
            report.mse = Some(metrics::mse(&data.response, &scores));
        }
        Loss::Logistic => {
            report.auc = Some(metrics::auc(&data.response, &scores)?);
            report.auprc = Some(metrics::auprc(&data.response, &scores)?);
            let n1 = data.response.iter().filter(|&&v| v == 1.0).count();
            let n0 = data.response.len() - n1;
            for point in parse_operating(&args.operating)? {
                let (sens, ppv, (tp, fp, tn, _)) =
                    metrics::sens_ppv_at(&data.response, &scores, point)?;
                let adjusted = match args.base_rate {
                    Some(rate) => Some(metrics::adjusted_ppv(tp, fp, tn, n1, n0, rate)?),
                    None => None,
                };
                report.operating.push(OperatingSummary {
                    at: point.label(),
                    sensitivity: sens,
                    ppv,
                    adjusted_ppv: adjusted,
                });
            }
        }
    }
    let dir = out_dir(&args.out);
    let file = EvalFile { config_digest: &digest, report };
    let path = write(&dir, "eval.json", &serde_json::to_string_pretty(&file).expect("eval json"))?;
    println!("evaluate: report written to {}", path.display());
    Ok(())
}

pub fn aggregate(args: &AggregateArgs) -> Result<()> {
    let pattern = AggregationPattern::from_json(&read(&args.pattern)?)?;
    let (tree, data, x0) = load_bound(&args.io)?;
    let (reduced, names) = selection::aggregate_design(&x0, &tree, &pattern)?;
    let dir = out_dir(&args.out);
    let path = write(
        &dir,
        "aggregated.csv",
        &design::write_csv(&names, &reduced, &args.io.response, &data.response),
    )?;
    println!(
        "aggregate: {} blocks -> {} columns written to {}",
        pattern.blocks.len(),
        names.len(),
        path.display(),
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchFile<'a> {
    config_digest: &'a str,
    report: &'a treeagg::bench::BenchReport,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let digest = digest_of(args);
    let task = Task::parse(&args.task)?;
    let mut cfg = BenchConfig::new(task);
    cfg.replicates = args.replicates;
    cfg.seed = args.seed;
    cfg.grid.alphas = parse_alphas(&args.alphas)?;
    cfg.grid.n_lambda = args.n_lambda;
    cfg.grid.lambda_min_frac = args.lambda_min_frac;
    cfg.grid.folds = args.folds;
    cfg.train_n = args.train_n;
    cfg.test_n = args.test_n;
    let report = treeagg::bench::run(&cfg)?;
    let dir = out_dir(&args.out);
    let file = BenchFile { config_digest: &digest, report: &report };
    write(&dir, "bench.json", &serde_json::to_string_pretty(&file).expect("bench json"))?;
    println!("bench {} ({} replicates, seed {}):", report.task, report.replicates, report.seed);
    for m in &report.summary {
        println!("  {:<12} {:>9.4} ({:.4})", m.metric, m.mean, m.se);
    }
    println!("written to {}", dir.join("bench.json").display());
    Ok(())
}

pub fn export_dot(args: &ExportDotArgs) -> Result<()> {
    let tree = FeatureTree::parse(&read(&args.tree)?)?;
    let pattern = match &args.pattern {
        Some(path) => AggregationPattern::from_json(&read(path)?)?,
        None => AggregationPattern { selected_groups: Vec::new(), blocks: Vec::new() },
    };
    let dir = out_dir(&args.out);
    let path = write(&dir, "tree.dot", &selection::export_dot(&tree, &pattern))?;
    println!("export-dot: written to {}", path.display());
    Ok(())
}
