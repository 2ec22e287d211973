//! The original feature hierarchy: a rooted tree whose leaves are binary
//! features and whose internal nodes are categories.
//!
//! Trees arrive in two shapes: nested JSON (`{"label": ..., "children": [...]}`,
//! the canonical serialization) or a TSV edge list with one `child<TAB>parent`
//! line per edge. Leaf order is fixed by first appearance in the file so the
//! binding of leaves to data columns is deterministic.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub label: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// A validated feature hierarchy. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FeatureTree {
    nodes: Vec<TreeNode>,
    root: usize,
    /// Leaf node ids in column order.
    leaves: Vec<usize>,
    /// node id -> column index, for leaves.
    leaf_col: Vec<Option<usize>>,
}

/// Summary numbers of a hierarchy: leaf count, height, max child count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeStats {
    pub n_leaves: usize,
    pub height: usize,
    pub max_children: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<JsonNode>,
}

impl FeatureTree {
    /// Parse either format, sniffing JSON by a leading `{`.
    pub fn parse(text: &str) -> Result<FeatureTree> {
        if text.trim_start().starts_with('{') {
            Self::parse_json(text)
        } else {
            Self::parse_tsv(text)
        }
    }

    pub fn parse_json(text: &str) -> Result<FeatureTree> {
        let root: JsonNode = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("tree json: {e}")))?;
        let mut labels: Vec<(Option<String>, Option<usize>)> = Vec::new();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        fn walk(
            node: &JsonNode,
            parent: Option<usize>,
            labels: &mut Vec<(Option<String>, Option<usize>)>,
            edges: &mut Vec<(usize, usize)>,
        ) {
            let id = labels.len();
            labels.push((node.label.clone(), parent));
            if let Some(p) = parent {
                edges.push((id, p));
            }
            for child in &node.children {
                walk(child, Some(id), labels, edges);
            }
        }
        walk(&root, None, &mut labels, &mut edges);

        // Auto-name unlabeled nodes, skipping names already taken.
        let taken: std::collections::HashSet<&str> = labels
            .iter()
            .filter_map(|(l, _)| l.as_deref())
            .collect();
        let mut counter = 0usize;
        let named: Vec<String> = labels
            .iter()
            .map(|(l, _)| match l {
                Some(s) => s.clone(),
                None => loop {
                    counter += 1;
                    let candidate = format!("n{counter}");
                    if !taken.contains(candidate.as_str()) {
                        break candidate;
                    }
                },
            })
            .collect();
        let parents: Vec<Option<usize>> = labels.iter().map(|(_, p)| *p).collect();
        Self::assemble(named, parents)
    }

    /// TSV edge list: `child<TAB>parent` per line. A line without a tab
    /// declares a bare node, which is how a single-node tree is written.
    pub fn parse_tsv(text: &str) -> Result<FeatureTree> {
        let mut order: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let intern = |label: &str, order: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            if let Some(&id) = index.get(label) {
                id
            } else {
                let id = order.len();
                order.push(label.to_string());
                index.insert(label.to_string(), id);
                id
            }
        };
        let mut parent_of: Vec<Option<usize>> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let child = fields.next().unwrap().trim();
            let parent = fields.next().map(str::trim);
            if fields.next().is_some() {
                return Err(Error::Parse(format!(
                    "tree tsv line {}: expected 'child\\tparent'",
                    lineno + 1
                )));
            }
            if child.is_empty() {
                return Err(Error::Parse(format!("tree tsv line {}: empty child label", lineno + 1)));
            }
            let c = intern(child, &mut order, &mut index);
            parent_of.resize(order.len(), None);
            if let Some(p_label) = parent {
                if p_label.is_empty() {
                    return Err(Error::Parse(format!(
                        "tree tsv line {}: empty parent label",
                        lineno + 1
                    )));
                }
                let p = intern(p_label, &mut order, &mut index);
                parent_of.resize(order.len(), None);
                if c == p {
                    return Err(Error::Parse(format!("node '{child}' is its own parent")));
                }
                if let Some(existing) = parent_of[c] {
                    if existing != p {
                        return Err(Error::Parse(format!("node '{child}' has two parents")));
                    }
                } else {
                    parent_of[c] = Some(p);
                }
            }
        }
        if order.is_empty() {
            return Err(Error::Parse("tree tsv: no nodes".into()));
        }
        Self::assemble(order, parent_of)
    }

    /// Validate labels/edges and build the indexed tree. Leaf columns follow
    /// first-appearance order of the input node list.
    fn assemble(labels: Vec<String>, parents: Vec<Option<usize>>) -> Result<FeatureTree> {
        let n = labels.len();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (id, label) in labels.iter().enumerate() {
            if let Some(first) = seen.insert(label.as_str(), id) {
                let _ = first;
                return Err(Error::Parse(format!("duplicate node label '{label}'")));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Parse(format!(
                "tree must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, parent) in parents.iter().enumerate() {
            if let Some(p) = parent {
                children[*p].push(i);
            }
        }
        // Depths via walk from the root; a cycle or disconnected part never
        // gets visited.
        let mut depth = vec![usize::MAX; n];
        let mut stack = vec![root];
        depth[root] = 0;
        let mut visited = 1usize;
        while let Some(u) = stack.pop() {
            for &c in &children[u] {
                if depth[c] != usize::MAX {
                    return Err(Error::Parse("cycle detected in tree edges".into()));
                }
                depth[c] = depth[u] + 1;
                visited += 1;
                stack.push(c);
            }
        }
        if visited != n {
            let missing = (0..n).find(|&i| depth[i] == usize::MAX).unwrap();
            return Err(Error::Parse(format!(
                "cycle detected or disconnected node '{}'",
                labels[missing]
            )));
        }

        let nodes: Vec<TreeNode> = (0..n)
            .map(|i| TreeNode {
                label: labels[i].clone(),
                parent: parents[i],
                children: children[i].clone(),
                depth: depth[i],
            })
            .collect();
        let leaves: Vec<usize> = (0..n).filter(|&i| nodes[i].children.is_empty()).collect();
        let mut leaf_col = vec![None; n];
        for (col, &leaf) in leaves.iter().enumerate() {
            leaf_col[leaf] = Some(col);
        }
        Ok(FeatureTree { nodes, root, leaves, leaf_col })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    pub fn node_by_label(&self, label: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.label == label)
            .ok_or_else(|| Error::Invalid(format!("unknown node '{label}'")))
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Leaf ids in column order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Column index of a leaf node.
    pub fn column_of(&self, leaf: usize) -> Option<usize> {
        self.leaf_col.get(leaf).copied().flatten()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves.iter().map(|&l| self.nodes[l].label.clone()).collect()
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("unknown node id {id}")))
        }
    }

    /// Native leaf ids under `id` (the node itself when it is a leaf).
    pub fn leaves_under(&self, id: usize) -> Result<Vec<usize>> {
        self.check_id(id)?;
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(u) = stack.pop() {
            if self.nodes[u].children.is_empty() {
                out.push(u);
            } else {
                for &c in self.nodes[u].children.iter().rev() {
                    stack.push(c);
                }
            }
        }
        Ok(out)
    }

    /// Path from `id` to the root, excluding `id` itself.
    pub fn ancestors(&self, id: usize) -> Result<Vec<usize>> {
        self.check_id(id)?;
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        Ok(out)
    }

    /// All strict descendants of `id`.
    pub fn descendants(&self, id: usize) -> Result<Vec<usize>> {
        self.check_id(id)?;
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.nodes[id].children.clone();
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.nodes[u].children.iter().copied());
        }
        Ok(out)
    }

    pub fn stats(&self) -> TreeStats {
        let n_leaves = self.leaves.len();
        let height = self.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        let max_children = self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0);
        TreeStats { n_leaves, height, max_children }
    }

    fn min_leaf_col(&self, id: usize) -> usize {
        self.leaves_under(id)
            .expect("valid id")
            .iter()
            .map(|&l| self.leaf_col[l].expect("leaf bound"))
            .min()
            .expect("non-empty subtree")
    }

    /// Canonical nested-JSON serialization. Children are ordered by their
    /// subtree's first column so that re-parsing reproduces the leaf binding
    /// whenever the column order nests into the tree (a TSV edge list can
    /// interleave subtrees; such orders have no nested representation and
    /// come back in canonical order instead).
    pub fn to_json(&self) -> String {
        fn build(tree: &FeatureTree, id: usize) -> JsonNode {
            let mut children = tree.nodes[id].children.clone();
            children.sort_by_key(|&c| tree.min_leaf_col(c));
            JsonNode {
                label: Some(tree.nodes[id].label.clone()),
                children: children.into_iter().map(|c| build(tree, c)).collect(),
            }
        }
        serde_json::to_string_pretty(&build(self, self.root)).expect("tree json")
    }

    /// TSV edge list: the root-to-leaf path of every leaf in column order,
    /// each edge once. First appearance then matches the column binding, so
    /// parsing the output reproduces this tree exactly.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if self.nodes.len() == 1 {
            out.push_str(&self.nodes[self.root].label);
            out.push('\n');
            return out;
        }
        let mut emitted = vec![false; self.nodes.len()];
        for &leaf in &self.leaves {
            let mut path = vec![leaf];
            path.extend(self.ancestors(leaf).expect("valid leaf"));
            for &node in path.iter().rev() {
                if let Some(p) = self.nodes[node].parent {
                    if !emitted[node] {
                        emitted[node] = true;
                        out.push_str(&self.nodes[node].label);
                        out.push('\t');
                        out.push_str(&self.nodes[p].label);
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    /// FNV-1a hash of the canonical JSON form, for tagging model outputs.
    pub fn digest(&self) -> String {
        crate::model::fnv1a_hex(self.to_json().as_bytes())
    }
}
