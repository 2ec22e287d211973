//! One-stop wiring of the estimation pipeline: bind data to a tree, expand,
//! build the reparameterization, and keep the solver operator plus cached
//! spectral bound for repeated fits over a tuning grid.

use crate::design::BinaryMatrix;
use crate::error::Result;
use crate::expansion::{expand, BinaryDesign, ExpandOptions, ExpandedTree};
use crate::reparam::ReparamMap;
use crate::solver::{self, FitResult, NodeColumns, SolverConfig};
use crate::tree::FeatureTree;
use std::sync::OnceLock;

pub struct Prepared {
    pub tree: FeatureTree,
    pub expanded: ExpandedTree,
    pub design: BinaryDesign,
    pub map: ReparamMap,
    pub ops: NodeColumns,
    spectral: OnceLock<f64>,
    spectral_no_intercept: OnceLock<f64>,
}

impl Prepared {
    pub fn new(tree: &FeatureTree, x0: &BinaryMatrix, opts: &ExpandOptions) -> Result<Prepared> {
        let (expanded, design) = expand(tree, x0, opts)?;
        let map = ReparamMap::build(&expanded, &design)?;
        let ops = NodeColumns::build(&expanded, &design);
        Ok(Prepared {
            tree: tree.clone(),
            expanded,
            design,
            map,
            ops,
            spectral: OnceLock::new(),
            spectral_no_intercept: OnceLock::new(),
        })
    }

    /// `sigma_max^2` of the (possibly intercept-augmented) working design,
    /// computed once and shared across grid fits.
    pub fn spectral_sq(&self, intercept: bool) -> f64 {
        let cell = if intercept { &self.spectral } else { &self.spectral_no_intercept };
        *cell.get_or_init(|| solver::design_spectral_sq(&self.ops, intercept))
    }

    pub fn fit(&self, y: &[f64], lambda: f64, alpha: f64, config: &SolverConfig) -> Result<FitResult> {
        solver::fit_with_spectral(
            &self.ops,
            &self.map,
            y,
            lambda,
            alpha,
            config,
            Some(self.spectral_sq(config.intercept)),
        )
    }

    /// Expanded design for new rows of the original features.
    pub fn design_for(&self, x0: &BinaryMatrix) -> Result<BinaryMatrix> {
        self.expanded.design_for(&self.tree, x0)
    }

    /// Linear predictor `mu + X beta` on new original-feature rows.
    pub fn linear_predictor(&self, fit: &FitResult, x0: &BinaryMatrix) -> Result<Vec<f64>> {
        let x = self.design_for(x0)?;
        let mut out = vec![0.0; x.n_rows()];
        x.matvec(&fit.beta, &mut out);
        for o in out.iter_mut() {
            *o += fit.mu;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen;

    #[test]
    fn prepared_fit_and_predict() {
        let tree = simgen::builtin_tree(1).unwrap();
        let x0 = simgen::gen_design(80, 15, 0.15, 21).unwrap();
        let sample = simgen::gen_regression(&tree, &x0, 2.0, 21).unwrap();
        let prep = Prepared::new(&tree, &x0, &ExpandOptions::default()).unwrap();
        let fit = prep.fit(&sample.y, 0.05, 0.5, &SolverConfig::default()).unwrap();
        assert!(fit.exact_objective.is_finite());
        // in-sample predictions through design_for equal mu + X beta on the
        // training design
        let pred = prep.linear_predictor(&fit, &x0).unwrap();
        let mut direct = vec![0.0; 80];
        prep.design.x.matvec(&fit.beta, &mut direct);
        for (p, d) in pred.iter().zip(&direct) {
            assert!((p - (d + fit.mu)).abs() < 1e-12);
        }
    }
}
