//! Evaluation metrics: regression error, ranking metrics for classification,
//! operating-point summaries, case-control PPV adjustment, and grouping
//! accuracy against a known aggregation truth.

use crate::error::{Error, Result};
use crate::reparam::ReparamMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auprc: Option<f64>,
    /// (label, sensitivity, ppv) per requested operating point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operating: Vec<OperatingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grouping_fnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grouping_fpr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingSummary {
    pub at: String,
    pub sensitivity: f64,
    pub ppv: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_ppv: Option<f64>,
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    assert_eq!(y.len(), pred.len());
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

fn split_classes(y: &[f64]) -> Result<(usize, usize)> {
    let mut n1 = 0;
    for &v in y {
        if v == 1.0 {
            n1 += 1;
        } else if v != 0.0 {
            return Err(Error::Invalid("labels must be 0/1".into()));
        }
    }
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Invalid("both classes needed for ranking metrics".into()));
    }
    Ok((n1, n0))
}

/// Area under the ROC curve by the rank (Mann-Whitney) formula with average
/// ranks over ties.
pub fn auc(y: &[f64], scores: &[f64]) -> Result<f64> {
    assert_eq!(y.len(), scores.len());
    let (n1, n0) = split_classes(y)?;
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the average rank of their span
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            if y[k] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    Ok((rank_sum_pos - n1 as f64 * (n1 as f64 + 1.0) / 2.0) / (n1 as f64 * n0 as f64))
}

/// Area under the precision-recall curve with step interpolation: walking
/// thresholds from the highest score down, each distinct-score group adds
/// `(recall step) * (precision at that threshold)`.
pub fn auprc(y: &[f64], scores: &[f64]) -> Result<f64> {
    assert_eq!(y.len(), scores.len());
    let (n1, _) = split_classes(y)?;
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut area = 0.0f64;
    let mut prev_recall = 0.0f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if y[idx[j]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n1 as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Where to cut the score distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatingPoint {
    /// Threshold at the most inclusive cut keeping specificity >= this level.
    Specificity(f64),
    /// Flag this fraction of the sample with the highest scores.
    TopFraction(f64),
}

impl OperatingPoint {
    pub fn label(&self) -> String {
        match self {
            OperatingPoint::Specificity(s) => format!("specificity>={s}"),
            OperatingPoint::TopFraction(f) => format!("top{f}"),
        }
    }
}

/// Confusion counts `(tp, fp, tn, fn)` at an operating point.
pub type Confusion = (usize, usize, usize, usize);

/// Sensitivity and PPV at an operating point; ties at the threshold are all
/// flagged positive. Also returns the confusion counts `(tp, fp, tn, fn)`.
pub fn sens_ppv_at(
    y: &[f64],
    scores: &[f64],
    at: OperatingPoint,
) -> Result<(f64, f64, Confusion)> {
    assert_eq!(y.len(), scores.len());
    let (n1, n0) = split_classes(y)?;
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    // number flagged before tie expansion
    let base = match at {
        OperatingPoint::TopFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Invalid("top fraction must be in [0,1]".into()));
            }
            ((f * n as f64).ceil() as usize).min(n)
        }
        OperatingPoint::Specificity(s) => {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Invalid("specificity must be in [0,1]".into()));
            }
            // most inclusive prefix whose false-positive share stays within
            // budget, scanning by distinct-score groups
            let fp_budget = ((1.0 - s) * n0 as f64 + 1e-12).floor() as usize;
            let mut best = 0usize;
            let mut fp = 0usize;
            let mut i = 0;
            while i < n {
                let mut j = i;
                let mut fp_add = 0usize;
                while j < n && scores[idx[j]] == scores[idx[i]] {
                    if y[idx[j]] == 0.0 {
                        fp_add += 1;
                    }
                    j += 1;
                }
                if fp + fp_add <= fp_budget {
                    fp += fp_add;
                    best = j;
                    i = j;
                } else {
                    break;
                }
            }
            best
        }
    };
    // include all scores tied with the last flagged one
    let mut cut = base;
    if base > 0 {
        let t = scores[idx[base - 1]];
        while cut < n && scores[idx[cut]] == t {
            cut += 1;
        }
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &k in &idx[..cut] {
        if y[k] == 1.0 {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let fn_ = n1 - tp;
    let tn = n0 - fp;
    let sens = tp as f64 / n1 as f64;
    let ppv = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    Ok((sens, ppv, (tp, fp, tn, fn_)))
}

/// PPV corrected for case-control down-sampling back to `base_rate`:
/// the held-out negatives stand in for `n* = n1/base_rate - n1 - n0`
/// additional controls, which inflate false positives proportionally.
pub fn adjusted_ppv(
    tp: usize,
    fp: usize,
    tn: usize,
    n1: usize,
    n0: usize,
    base_rate: f64,
) -> Result<f64> {
    if !(base_rate > 0.0 && base_rate <= 1.0) {
        return Err(Error::Invalid("base rate must be in (0, 1]".into()));
    }
    if tn + fp == 0 {
        return Err(Error::Invalid("no negatives in the confusion counts".into()));
    }
    let n_star = n1 as f64 / base_rate - n1 as f64 - n0 as f64;
    let denom = tp as f64 + fp as f64 + fp as f64 / (tn + fp) as f64 * n_star;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(tp as f64 / denom)
}

/// Grouping accuracy of a selection against the truth `gamma*`: groups with
/// `||gamma*_g|| > 0` are the positives; FNR is the missed share of them,
/// FPR the selected share of the nulls.
pub fn grouping_fnr_fpr(selected: &[usize], gamma_star: &[f64], map: &ReparamMap) -> (f64, f64) {
    let mut chosen = vec![false; map.groups.len()];
    for &g in selected {
        chosen[g] = true;
    }
    let mut positives = 0usize;
    let mut missed = 0usize;
    let mut nulls = 0usize;
    let mut false_alarms = 0usize;
    for (gi, g) in map.groups.iter().enumerate() {
        let active = g.nodes.iter().any(|&u| gamma_star[u] != 0.0);
        if active {
            positives += 1;
            if !chosen[gi] {
                missed += 1;
            }
        } else {
            nulls += 1;
            if chosen[gi] {
                false_alarms += 1;
            }
        }
    }
    let fnr = if positives == 0 { 0.0 } else { missed as f64 / positives as f64 };
    let fpr = if nulls == 0 { 0.0 } else { false_alarms as f64 / nulls as f64 };
    (fnr, fpr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]), 2.5);
        // constant prediction at the mean gives the variance
        let y = [1.0, 2.0, 3.0, 6.0];
        let m = y.iter().sum::<f64>() / 4.0;
        let pred = [m; 4];
        assert!((mse(&y, &pred) - crate::linalg::variance(&y)).abs() < 1e-15);
    }

    #[test]
    fn auc_trivial_and_brute_force() {
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&y, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&y, &[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert!(auc(&[1.0, 1.0], &[0.1, 0.2]).is_err());

        // rank formula vs exhaustive pair counting with 0.5 for ties
        let mut rng = crate::rng::stream_rng(3, crate::rng::stream::LABELS);
        for _ in 0..20 {
            let n = 60;
            let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            if y.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 1.0) {
                continue;
            }
            // coarse scores force plenty of ties
            let s: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let fast = auc(&y, &s).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if y[i] == 1.0 && y[j] == 0.0 {
                        den += 1.0;
                        if s[i] > s[j] {
                            num += 1.0;
                        } else if s[i] == s[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            assert!((fast - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn auprc_cases() {
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auprc(&y, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        // constant scores: a single PR point at (1, prevalence)
        assert_eq!(auprc(&y, &[0.3; 4]).unwrap(), 0.5);
        // 4-point hand example: ordering pos(0.9), neg(0.8), pos(0.7), neg(0.1)
        // steps: r=1/2 at p=1, then r=1 at p=2/3 -> 0.5*1 + 0.5*2/3
        let y = [1.0, 0.0, 1.0, 0.0];
        let s = [0.9, 0.8, 0.7, 0.1];
        assert!((auprc(&y, &s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn operating_points() {
        // all positives ranked on top
        let y = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
        let (sens, ppv, _) = sens_ppv_at(&y, &s, OperatingPoint::TopFraction(0.2)).unwrap();
        assert_eq!((sens, ppv), (1.0, 1.0));
        // specificity 90%: one false positive allowed out of 8 -> budget 0
        let (sens, _, (tp, fp, _, _)) =
            sens_ppv_at(&y, &s, OperatingPoint::Specificity(0.9)).unwrap();
        assert_eq!((tp, fp), (2, 0));
        assert_eq!(sens, 1.0);
        // ties at the cut are all included
        let s_tied = [0.9, 0.5, 0.5, 0.5, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
        let (_, _, (tp, fp, _, _)) =
            sens_ppv_at(&y, &s_tied, OperatingPoint::TopFraction(0.2)).unwrap();
        assert_eq!(tp + fp, 5);
        assert!(sens_ppv_at(&[1.0, 1.0], &[0.1, 0.2], OperatingPoint::TopFraction(0.5)).is_err());
    }

    #[test]
    fn random_scores_ppv_near_prevalence() {
        let mut rng = crate::rng::stream_rng(4, crate::rng::stream::LABELS);
        let n = 40_000;
        let prev = 0.2;
        let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(prev) { 1.0 } else { 0.0 }).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let (_, ppv, _) = sens_ppv_at(&y, &s, OperatingPoint::TopFraction(0.1)).unwrap();
        assert!((ppv - prev).abs() < 0.03, "ppv {ppv}");
    }

    #[test]
    fn adjusted_ppv_formula() {
        // worked example: n* = 332/0.005 - 332 - 2657 = 63411 and the
        // adjustment lands near 2.6%
        let n_star = 332.0 / 0.005 - 332.0 - 2657.0;
        assert_eq!(n_star, 63411.0);
        let expect = 100.0 / (100.0 + 150.0 + 150.0 / 2650.0 * 63411.0);
        let got = adjusted_ppv(100, 150, 2500, 332, 2657, 0.005).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.026).abs() < 1e-3, "{got}");

        // no false positives: PPV 1 when TP > 0
        assert_eq!(adjusted_ppv(5, 0, 100, 50, 100, 0.005).unwrap(), 1.0);

        // base rate equal to the sample rate: n* = 0, ordinary PPV
        let got = adjusted_ppv(10, 5, 85, 20, 90, 20.0 / 110.0).unwrap();
        assert!((got - 10.0 / 15.0).abs() < 1e-12);

        // monotone decreasing in FP
        let a = adjusted_ppv(10, 5, 95, 20, 100, 0.01).unwrap();
        let b = adjusted_ppv(10, 6, 94, 20, 100, 0.01).unwrap();
        assert!(b < a);
    }

    #[test]
    fn grouping_rates() {
        use crate::design::BinaryMatrix;
        use crate::expansion::{expand, ExpandOptions};
        use crate::tree::FeatureTree;
        let tree =
            FeatureTree::parse_tsv("g1\troot\nx1\tg1\nx2\tg1\ng2\troot\nx3\tg2\nx4\tg2\n").unwrap();
        let x0 = BinaryMatrix::from_columns(3, vec![(0..3).collect(); 4]).unwrap();
        let (exp, design) = expand(&tree, &x0, &ExpandOptions::default()).unwrap();
        let map = ReparamMap::build(&exp, &design).unwrap();
        // groups: {root}, C(root), C(g1), C(g2) -- make C(g1), C(g2) the truth
        let mut gamma_star = vec![0.0; exp.len()];
        let x1 = (0..exp.len()).find(|&u| exp.label(u) == "x1").unwrap();
        let x3 = (0..exp.len()).find(|&u| exp.label(u) == "x3").unwrap();
        gamma_star[x1] = 1.0;
        gamma_star[x3] = -2.0;
        let truth: Vec<usize> = map
            .groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.label == "C(g1)" || g.label == "C(g2)")
            .map(|(i, _)| i)
            .collect();
        assert_eq!(grouping_fnr_fpr(&truth, &gamma_star, &map), (0.0, 0.0));
        assert_eq!(grouping_fnr_fpr(&[], &gamma_star, &map), (1.0, 0.0));
        // one hit, one false alarm: fnr 0.5, fpr 0.5
        let root_group = 0usize;
        let mix = vec![truth[0], root_group];
        let (fnr, fpr) = grouping_fnr_fpr(&mix, &gamma_star, &map);
        assert_eq!((fnr, fpr), (0.5, 0.5));
    }
}
