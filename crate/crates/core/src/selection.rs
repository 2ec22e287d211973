//! From fitted coefficients to an aggregation pattern.
//!
//! Group lasso over-selects, so groups are kept only when their share of the
//! total weighted norm clears the uniform level `1/|G|`. Zeroing the rest and
//! walking the tree top-down yields a partition of the native leaves: each
//! block collapses to one or-feature whose coefficient is the surviving
//! path sum at the collapse node; blocks with zero coefficient are dropped.

use crate::design::BinaryMatrix;
use crate::error::{Error, Result};
use crate::expansion::ExpandedTree;
use crate::reparam::ReparamMap;
use crate::tree::FeatureTree;
use serde::{Deserialize, Serialize};

/// One block of the partition: the native leaves under `node`, collapsed to a
/// single or-feature with `coefficient`, or dropped when the coefficient is 0.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Block {
    pub node: String,
    pub leaves: Vec<String>,
    pub coefficient: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregationPattern {
    pub selected_groups: Vec<String>,
    pub blocks: Vec<Block>,
}

impl AggregationPattern {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern json")
    }

    pub fn from_json(text: &str) -> Result<AggregationPattern> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("pattern json: {e}")))
    }
}

/// Thresholding rule: keep group `g` iff `m_g / sum(m) > 1 / |G|` where
/// `m_g = w_g ||gamma_g||`. Nothing is selected when every `m_g` is zero.
pub fn select_groups(gamma: &[f64], map: &ReparamMap) -> Vec<usize> {
    let m: Vec<f64> = map
        .groups
        .iter()
        .map(|g| {
            let ss: f64 = g.nodes.iter().map(|&u| gamma[u] * gamma[u]).sum();
            g.weight * ss.sqrt()
        })
        .collect();
    let total: f64 = m.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let level = 1.0 / map.groups.len() as f64;
    (0..m.len()).filter(|&g| m[g] / total > level).collect()
}

/// Extract the aggregation pattern implied by the selected groups.
pub fn aggregation_pattern(
    selected: &[usize],
    expanded: &ExpandedTree,
    map: &ReparamMap,
    gamma: &[f64],
) -> AggregationPattern {
    let n = expanded.len();
    let mut keep = vec![false; map.groups.len()];
    for &g in selected {
        keep[g] = true;
    }
    // gamma with unselected groups zeroed
    let surviving: Vec<f64> =
        (0..n).map(|u| if keep[map.group_of[u]] { gamma[u] } else { 0.0 }).collect();

    // does the subtree of u contain any selected child-set group?
    let mut selected_inside = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&u| std::cmp::Reverse(expanded.node(u).depth));
    for &u in &order {
        if expanded.is_leaf(u) {
            continue;
        }
        let own = keep[map.group_of[expanded.node(u).children[0]]];
        selected_inside[u] =
            own || expanded.node(u).children.iter().any(|&c| selected_inside[c]);
    }

    let mut blocks = Vec::new();
    let mut stack = vec![(expanded.root(), 0.0f64)];
    while let Some((u, path_sum)) = stack.pop() {
        let here = path_sum + surviving[u];
        if expanded.is_derived(u) {
            continue;
        }
        if expanded.is_leaf(u) || !selected_inside[u] {
            let leaves: Vec<String> = collect_native_leaves(expanded, u)
                .into_iter()
                .map(|l| expanded.label(l).to_string())
                .collect();
            blocks.push(Block {
                node: expanded.label(u).to_string(),
                leaves,
                coefficient: here,
                dropped: here == 0.0,
            });
        } else {
            for &c in expanded.node(u).children.iter().rev() {
                stack.push((c, here));
            }
        }
    }

    AggregationPattern {
        selected_groups: selected.iter().map(|&g| map.groups[g].label.clone()).collect(),
        blocks,
    }
}

fn collect_native_leaves(expanded: &ExpandedTree, root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        if expanded.is_derived(u) {
            continue;
        }
        if expanded.is_leaf(u) {
            out.push(u);
        } else {
            for &c in expanded.node(u).children.iter().rev() {
                stack.push(c);
            }
        }
    }
    out
}

/// The node coefficients a pattern encodes on the expanded tree: the block
/// coefficient sits at the block node, everything else is zero.
pub fn pattern_gamma(pattern: &AggregationPattern, expanded: &ExpandedTree) -> Result<Vec<f64>> {
    let mut gamma = vec![0.0; expanded.len()];
    for block in &pattern.blocks {
        let id = (0..expanded.len())
            .find(|&u| expanded.label(u) == block.node)
            .ok_or_else(|| Error::Invalid(format!("pattern block node '{}' not in tree", block.node)))?;
        gamma[id] = block.coefficient;
    }
    Ok(gamma)
}

/// Unique coarsest aggregation set for leaf coefficients `beta` on the
/// original tree: merge bottom-up wherever all leaves below agree.
pub fn coarsest_aggregation_set(tree: &FeatureTree, beta: &[f64]) -> Result<Vec<usize>> {
    let p0 = tree.leaves().len();
    if beta.len() != p0 {
        return Err(Error::Invalid(format!(
            "beta has {} entries for {} leaves",
            beta.len(),
            p0
        )));
    }
    // common value under each node, NaN marking "not constant"
    let mut value = vec![f64::NAN; tree.len()];
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by_key(|&u| std::cmp::Reverse(tree.node(u).depth));
    for &u in &order {
        if tree.is_leaf(u) {
            value[u] = beta[tree.column_of(u).unwrap()];
        } else {
            let children = &tree.node(u).children;
            let first = value[children[0]];
            let constant = !first.is_nan()
                && children.iter().all(|&c| !value[c].is_nan() && value[c] == first);
            value[u] = if constant { first } else { f64::NAN };
        }
    }
    // a node enters the set when it is constant but its parent is not
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(u) = stack.pop() {
        if !value[u].is_nan() {
            out.push(u);
        } else {
            for &c in tree.node(u).children.iter().rev() {
                stack.push(c);
            }
        }
    }
    Ok(out)
}

/// One or-column per non-dropped block, with the block nodes as names.
pub fn aggregate_design(
    x0: &BinaryMatrix,
    tree: &FeatureTree,
    pattern: &AggregationPattern,
) -> Result<(BinaryMatrix, Vec<String>)> {
    let mut col_of = std::collections::HashMap::new();
    for (c, &leaf) in tree.leaves().iter().enumerate() {
        col_of.insert(tree.label(leaf).to_string(), c);
    }
    let mut out = BinaryMatrix::new(x0.n_rows(), 0);
    let mut names = Vec::new();
    for block in &pattern.blocks {
        if block.dropped {
            continue;
        }
        let cols: Vec<usize> = block
            .leaves
            .iter()
            .map(|l| {
                col_of
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("pattern leaf '{l}' not in tree")))
            })
            .collect::<Result<_>>()?;
        out.push_col(x0.or_of(&cols));
        names.push(block.node.clone());
    }
    Ok((out, names))
}

/// Deterministic Graphviz rendering of a pattern over the original tree.
/// Selected, uncollapsed leaves are solid; aggregated leaves are open with
/// dashed edges; dropped blocks carry a cross mark. The full pattern is
/// embedded as a comment so it can be read back.
pub fn export_dot(tree: &FeatureTree, pattern: &AggregationPattern) -> String {
    let mut leaf_block: std::collections::HashMap<&str, &Block> = std::collections::HashMap::new();
    for block in &pattern.blocks {
        for leaf in &block.leaves {
            leaf_block.insert(leaf.as_str(), block);
        }
    }
    let mut out = String::new();
    out.push_str("digraph feature_tree {\n");
    out.push_str(&format!(
        "  // pattern: {}\n",
        serde_json::to_string(pattern).expect("pattern json")
    ));
    out.push_str("  node [shape=circle, fontsize=10];\n");
    for id in 0..tree.len() {
        let label = tree.label(id);
        if tree.is_leaf(id) {
            match leaf_block.get(label) {
                Some(b) if b.dropped => {
                    out.push_str(&format!(
                        "  \"{label}\" [label=\"x {label}\", style=dashed];\n"
                    ));
                }
                Some(b) if b.leaves.len() == 1 => {
                    out.push_str(&format!("  \"{label}\" [style=filled, fillcolor=black, fontcolor=white];\n"));
                }
                _ => {
                    out.push_str(&format!("  \"{label}\" [style=dashed];\n"));
                }
            }
        } else {
            out.push_str(&format!("  \"{label}\";\n"));
        }
    }
    for id in 0..tree.len() {
        if let Some(p) = tree.node(id).parent {
            let label = tree.label(id);
            let dashed = tree.is_leaf(id)
                && leaf_block.get(label).is_none_or(|b| b.dropped || b.leaves.len() > 1);
            let style = if dashed { " [style=dashed]" } else { "" };
            out.push_str(&format!("  \"{}\" -> \"{label}\"{style};\n", tree.label(p)));
        }
    }
    out.push_str("}\n");
    out
}

/// Recover the pattern embedded by [`export_dot`].
pub fn pattern_from_dot(text: &str) -> Result<AggregationPattern> {
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix("// pattern: ") {
            return AggregationPattern::from_json(rest);
        }
    }
    Err(Error::Parse("no pattern comment found in DOT".into()))
}
