//! Tree-guided feature expansion.
//!
//! Aggregating binary features with "or" is, after inclusion-exclusion, a
//! linear statement about a model that carries the right interaction columns.
//! This module grows the hierarchy accordingly: for every internal node `u`
//! and every subset `S` of its children with `|S| >= 2`, a childless derived
//! node is attached under `u` whose column is the elementwise AND of the
//! children's OR-columns, signed `(-1)^(|S|-1)`. Interaction columns that are
//! identically zero on the training design are dropped (and logged); with
//! rare features that is most of them.

use crate::design::{intersect_sorted, BinaryMatrix};
use crate::error::{Error, Result};
use crate::tree::FeatureTree;

#[derive(Debug, Clone, PartialEq)]
pub enum ExpNodeKind {
    /// Mirrors a node of the original tree.
    Native { orig: usize },
    /// Interaction of a subset of an internal node's original children.
    Derived { members: Vec<usize>, sign: f64 },
}

#[derive(Debug, Clone)]
pub struct ExpNode {
    pub label: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub kind: ExpNodeKind,
}

/// The hierarchy after expansion. Node ids `[0, n_native)` coincide with the
/// original tree's ids; surviving derived nodes follow.
#[derive(Debug, Clone)]
pub struct ExpandedTree {
    nodes: Vec<ExpNode>,
    root: usize,
    /// Leaf ids in design-column order: native leaves first, then derived.
    leaves: Vec<usize>,
    n_native: usize,
    pub original_k: usize,
    pub original_height: usize,
}

/// An all-zero interaction column removed at expansion time.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DroppedColumn {
    pub label: String,
    pub parent: String,
    pub members: Vec<String>,
}

/// The expanded design: binary matrix over the surviving leaves of `T`.
#[derive(Debug, Clone)]
pub struct BinaryDesign {
    pub x: BinaryMatrix,
    /// Column -> leaf id of the expanded tree.
    pub col_leaf: Vec<usize>,
    pub dropped: Vec<DroppedColumn>,
}

#[derive(Debug, Clone)]
pub struct ExpandOptions {
    /// Refuse expansion when an internal node would generate more than this
    /// many subsets (2^children - 1).
    pub subset_cap: usize,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        ExpandOptions { subset_cap: 4095 }
    }
}

/// OR of the original feature columns under a native node.
pub fn or_column(tree: &FeatureTree, x0: &BinaryMatrix, node: usize) -> Result<Vec<u32>> {
    if x0.n_cols() != tree.leaves().len() {
        return Err(Error::Invalid(format!(
            "design has {} columns but the tree has {} leaves",
            x0.n_cols(),
            tree.leaves().len()
        )));
    }
    let cols: Vec<usize> = tree
        .leaves_under(node)?
        .iter()
        .map(|&l| tree.column_of(l).ok_or_else(|| Error::Invalid(format!("unbound leaf '{}'", tree.label(l)))))
        .collect::<Result<_>>()?;
    Ok(x0.or_of(&cols))
}

/// OR-columns for every node of the original tree, bottom-up.
fn all_or_columns(tree: &FeatureTree, x0: &BinaryMatrix) -> Result<Vec<Vec<u32>>> {
    let mut out = vec![Vec::new(); tree.len()];
    // Children have larger depth, so process deepest first.
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(tree.node(i).depth));
    for id in order {
        if tree.is_leaf(id) {
            let col = tree
                .column_of(id)
                .ok_or_else(|| Error::Invalid(format!("unbound leaf '{}'", tree.label(id))))?;
            out[id] = x0.col(col).to_vec();
        } else {
            let mut mark = vec![false; x0.n_rows()];
            for &c in &tree.node(id).children {
                for &r in &out[c] {
                    mark[r as usize] = true;
                }
            }
            out[id] = (0..x0.n_rows() as u32).filter(|&r| mark[r as usize]).collect();
        }
    }
    Ok(out)
}

fn derived_label(tree: &FeatureTree, members: &[usize]) -> String {
    let mut s = String::from("(");
    for (i, &m) in members.iter().enumerate() {
        if i > 0 {
            s.push('&');
        }
        s.push_str(tree.label(m));
    }
    s.push(')');
    s
}

/// Expand the hierarchy over a bound binary design.
pub fn expand(
    tree: &FeatureTree,
    x0: &BinaryMatrix,
    opts: &ExpandOptions,
) -> Result<(ExpandedTree, BinaryDesign)> {
    if x0.n_rows() == 0 {
        return Err(Error::Invalid("design has no rows".into()));
    }
    if x0.n_cols() != tree.leaves().len() {
        return Err(Error::Invalid(format!(
            "design has {} columns but the tree has {} leaves",
            x0.n_cols(),
            tree.leaves().len()
        )));
    }
    let stats = tree.stats();
    for id in 0..tree.len() {
        let c = tree.node(id).children.len();
        if c > 0 && (c >= usize::BITS as usize - 1 || (1usize << c) - 1 > opts.subset_cap) {
            return Err(Error::Invalid(format!(
                "node '{}' has {c} children; subset budget {} exceeded",
                tree.label(id),
                opts.subset_cap
            )));
        }
    }

    let or_cols = all_or_columns(tree, x0)?;

    let mut nodes: Vec<ExpNode> = (0..tree.len())
        .map(|id| ExpNode {
            label: tree.label(id).to_string(),
            parent: tree.node(id).parent,
            children: tree.node(id).children.clone(),
            depth: tree.node(id).depth,
            kind: ExpNodeKind::Native { orig: id },
        })
        .collect();
    let mut dropped = Vec::new();
    let mut derived_cols: Vec<Vec<u32>> = Vec::new();
    let mut derived_ids: Vec<usize> = Vec::new();

    for u in 0..tree.len() {
        let children = tree.node(u).children.clone();
        let c = children.len();
        if c < 2 {
            continue;
        }
        // Subset columns by ascending bitmask; each mask reuses the
        // intersection of its submask without the lowest bit.
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); 1usize << c];
        for (b, &child) in children.iter().enumerate() {
            rows[1usize << b] = or_cols[child].clone();
        }
        for mask in 3usize..(1usize << c) {
            if mask.count_ones() < 2 {
                continue;
            }
            let low = mask & mask.wrapping_neg();
            let rest = mask ^ low;
            let col = if rows[rest].is_empty() {
                Vec::new()
            } else {
                intersect_sorted(&rows[rest], &rows[low])
            };
            rows[mask] = col;
            let members: Vec<usize> =
                (0..c).filter(|b| mask >> b & 1 == 1).map(|b| children[b]).collect();
            if rows[mask].is_empty() {
                dropped.push(DroppedColumn {
                    label: derived_label(tree, &members),
                    parent: tree.label(u).to_string(),
                    members: members.iter().map(|&m| tree.label(m).to_string()).collect(),
                });
            } else {
                let sign = if members.len() % 2 == 1 { 1.0 } else { -1.0 };
                let id = nodes.len();
                nodes.push(ExpNode {
                    label: derived_label(tree, &members),
                    parent: Some(u),
                    children: Vec::new(),
                    depth: tree.node(u).depth + 1,
                    kind: ExpNodeKind::Derived { members, sign },
                });
                nodes[u].children.push(id);
                derived_ids.push(id);
                derived_cols.push(rows[mask].clone());
            }
        }
    }

    let mut leaves: Vec<usize> = tree.leaves().to_vec();
    leaves.extend(derived_ids.iter().copied());
    let mut x = BinaryMatrix::new(x0.n_rows(), 0);
    for &leaf in tree.leaves() {
        x.push_col(x0.col(tree.column_of(leaf).unwrap()).to_vec());
    }
    for col in derived_cols {
        x.push_col(col);
    }

    let expanded = ExpandedTree {
        nodes,
        root: tree.root(),
        leaves: leaves.clone(),
        n_native: tree.len(),
        original_k: stats.max_children,
        original_height: stats.height,
    };
    let design = BinaryDesign { x, col_leaf: leaves, dropped };
    Ok((expanded, design))
}

impl ExpandedTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &ExpNode {
        &self.nodes[id]
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    pub fn n_native(&self) -> usize {
        self.n_native
    }

    pub fn is_derived(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, ExpNodeKind::Derived { .. })
    }

    /// +1 for native nodes, `(-1)^(|S|-1)` for derived ones.
    pub fn sign(&self, id: usize) -> f64 {
        match &self.nodes[id].kind {
            ExpNodeKind::Native { .. } => 1.0,
            ExpNodeKind::Derived { sign, .. } => *sign,
        }
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Leaf ids in design-column order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Internal node ids (all of them native by construction).
    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.is_leaf(i)).collect()
    }

    /// Path from a node up to the root, node itself included.
    pub fn path_to_root(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// The AND-of-ORs recipe of a leaf in terms of original design columns:
    /// outer list = AND members, inner lists = columns joined by OR.
    pub fn leaf_terms(&self, tree: &FeatureTree, leaf: usize) -> Vec<Vec<usize>> {
        match &self.nodes[leaf].kind {
            ExpNodeKind::Native { orig } => {
                vec![vec![tree.column_of(*orig).expect("native leaf bound")]]
            }
            ExpNodeKind::Derived { members, .. } => members
                .iter()
                .map(|&m| {
                    tree.leaves_under(m)
                        .expect("member exists")
                        .iter()
                        .map(|&l| tree.column_of(l).expect("leaf bound"))
                        .collect()
                })
                .collect(),
        }
    }

    /// Rebuild the surviving design columns from a new original design with
    /// the same leaf binding (used to score held-out data).
    pub fn design_for(&self, tree: &FeatureTree, x0: &BinaryMatrix) -> Result<BinaryMatrix> {
        if x0.n_cols() != tree.leaves().len() {
            return Err(Error::Invalid(format!(
                "design has {} columns but the tree has {} leaves",
                x0.n_cols(),
                tree.leaves().len()
            )));
        }
        let or_cols = all_or_columns(tree, x0)?;
        let mut x = BinaryMatrix::new(x0.n_rows(), 0);
        for &leaf in &self.leaves {
            match &self.nodes[leaf].kind {
                ExpNodeKind::Native { orig } => x.push_col(or_cols[*orig].clone()),
                ExpNodeKind::Derived { members, .. } => {
                    let mut acc = or_cols[members[0]].clone();
                    for &m in &members[1..] {
                        if acc.is_empty() {
                            break;
                        }
                        acc = intersect_sorted(&acc, &or_cols[m]);
                    }
                    x.push_col(acc);
                }
            }
        }
        Ok(x)
    }
}
