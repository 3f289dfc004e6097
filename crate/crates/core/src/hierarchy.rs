//! Class hierarchies: leaf spans, sampling eligibility, split cuts and the
//! lowest-common-ancestor height used to measure fine-grainedness.
//!
//! All algorithms are exact. Leaf spans are materialized once per DAG as
//! sorted vectors of leaf ordinals, merged bottom-up in topological order.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::catalog::Split;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("hierarchy contains a cycle")]
    Cycle,
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} is not a leaf")]
    NotLeaf(String),
    #[error("node {0:?} is a leaf, an internal node is required")]
    NotInternal(String),
    #[error("leaf {0:?} is reachable from both split roots")]
    OverlappingRoots(String),
    #[error("leaves {0:?} and {1:?} have no common ancestor")]
    NoCommonAncestor(String, String),
    #[error("lca height needs two distinct leaves, got {0:?} twice")]
    SameLeaf(String),
    #[error("leaf {leaf:?} is not spanned by any internal node with at least {min_span} leaves")]
    Uncoverable { leaf: String, min_span: usize },
    #[error("invalid eligibility bounds [{0}, {1}]")]
    BadBounds(usize, usize),
}

/// Inclusive bounds on the leaf-span size of nodes that may seed an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EligibilityBounds {
    pub min_span: usize,
    pub max_span: usize,
}

impl Default for EligibilityBounds {
    fn default() -> Self {
        Self {
            min_span: 5,
            max_span: 392,
        }
    }
}

impl EligibilityBounds {
    pub fn new(min_span: usize, max_span: usize) -> Result<Self, HierarchyError> {
        if min_span < 1 || min_span > max_span {
            return Err(HierarchyError::BadBounds(min_span, max_span));
        }
        Ok(Self { min_span, max_span })
    }

    pub fn contains(&self, span: usize) -> bool {
        (self.min_span..=self.max_span).contains(&span)
    }
}

pub type NodeIx = usize;

#[derive(Debug, Clone)]
pub struct ClassDag {
    ids: Vec<String>,
    index: HashMap<String, NodeIx>,
    children: Vec<Vec<NodeIx>>,
    parents: Vec<Vec<NodeIx>>,
    /// Parents before children.
    topo: Vec<NodeIx>,
    leaves: Vec<NodeIx>,
    leaf_ordinal: Vec<Option<u32>>,
    spans: Vec<Vec<u32>>,
}

impl ClassDag {
    /// Builds a DAG from `(parent, child)` pairs. Nodes are created on first
    /// mention; duplicate edges are ignored.
    pub fn from_edges<'a, I>(edges: I) -> Result<Self, HierarchyError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, NodeIx> = HashMap::new();
        let mut intern = |id: &str, ids: &mut Vec<String>| -> NodeIx {
            if let Some(&i) = index.get(id) {
                return i;
            }
            let i = ids.len();
            ids.push(id.to_string());
            index.insert(id.to_string(), i);
            i
        };
        let mut pairs = Vec::new();
        for (p, c) in edges {
            let p = intern(p, &mut ids);
            let c = intern(c, &mut ids);
            pairs.push((p, c));
        }
        let n = ids.len();
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for (p, c) in pairs {
            if !children[p].contains(&c) {
                children[p].push(c);
                parents[c].push(p);
            }
        }
        Self::assemble(ids, children, parents)
    }

    fn assemble(
        ids: Vec<String>,
        children: Vec<Vec<NodeIx>>,
        parents: Vec<Vec<NodeIx>>,
    ) -> Result<Self, HierarchyError> {
        let n = ids.len();
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

        // Kahn's algorithm; leftover nodes mean a cycle.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: Vec<NodeIx> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            topo.push(v);
            for &c in children[v].iter().rev() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        if topo.len() != n {
            return Err(HierarchyError::Cycle);
        }

        let leaves: Vec<NodeIx> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let mut leaf_ordinal = vec![None; n];
        for (k, &l) in leaves.iter().enumerate() {
            leaf_ordinal[l] = Some(k as u32);
        }

        let mut spans: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &v in topo.iter().rev() {
            if let Some(k) = leaf_ordinal[v] {
                spans[v] = vec![k];
                continue;
            }
            let mut merged: Vec<u32> = Vec::new();
            for &c in &children[v] {
                merged = merge_sorted(&merged, &spans[c]);
            }
            spans[v] = merged;
        }

        Ok(Self {
            ids,
            index,
            children,
            parents,
            topo,
            leaves,
            leaf_ordinal,
            spans,
        })
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn node_ix(&self, id: &str) -> Result<NodeIx, HierarchyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| HierarchyError::UnknownNode(id.to_string()))
    }

    pub fn node_id(&self, ix: NodeIx) -> &str {
        &self.ids[ix]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn children(&self, ix: NodeIx) -> &[NodeIx] {
        &self.children[ix]
    }

    pub fn parents(&self, ix: NodeIx) -> &[NodeIx] {
        &self.parents[ix]
    }

    pub fn is_leaf(&self, ix: NodeIx) -> bool {
        self.children[ix].is_empty()
    }

    pub fn is_leaf_id(&self, id: &str) -> bool {
        self.index.get(id).is_some_and(|&i| self.is_leaf(i))
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|&l| self.ids[l].as_str())
    }

    /// Node id of the leaf with the given ordinal.
    pub fn leaf_by_ordinal(&self, ordinal: u32) -> &str {
        &self.ids[self.leaves[ordinal as usize]]
    }

    pub fn topological_order(&self) -> &[NodeIx] {
        &self.topo
    }

    /// Leaf ordinals spanned by a node, ascending.
    pub fn span(&self, ix: NodeIx) -> &[u32] {
        &self.spans[ix]
    }

    /// Ids of the leaves reachable from `node` (a leaf spans itself).
    pub fn leaves_spanned(&self, node: &str) -> Result<Vec<&str>, HierarchyError> {
        let ix = self.node_ix(node)?;
        Ok(self.spans[ix].iter().map(|&k| self.leaf_by_ordinal(k)).collect())
    }

    /// Internal nodes whose span size lies within `bounds`, in node order.
    pub fn eligible_nodes(&self, bounds: EligibilityBounds) -> Vec<NodeIx> {
        (0..self.node_count())
            .filter(|&v| !self.is_leaf(v) && bounds.contains(self.spans[v].len()))
            .collect()
    }

    pub fn eligible_internal_nodes(&self, bounds: EligibilityBounds) -> Vec<&str> {
        self.eligible_nodes(bounds)
            .into_iter()
            .map(|v| self.ids[v].as_str())
            .collect()
    }

    /// Smallest `max_span` for which the eligible internal nodes (span at
    /// least `min_span`) collectively span every leaf.
    ///
    /// Each leaf needs some covering ancestor; the cheapest one for a leaf is
    /// the internal ancestor with the smallest span that still reaches
    /// `min_span`. The cap is the largest of those per-leaf minima.
    pub fn smallest_cover_cap(&self, min_span: usize) -> Result<usize, HierarchyError> {
        let mut best = vec![usize::MAX; self.leaves.len()];
        for v in 0..self.node_count() {
            let size = self.spans[v].len();
            if self.is_leaf(v) || size < min_span {
                continue;
            }
            for &k in &self.spans[v] {
                let b = &mut best[k as usize];
                *b = (*b).min(size);
            }
        }
        let mut cap = 0;
        for (k, &b) in best.iter().enumerate() {
            if b == usize::MAX {
                return Err(HierarchyError::Uncoverable {
                    leaf: self.leaf_by_ordinal(k as u32).to_string(),
                    min_span,
                });
            }
            cap = cap.max(b);
        }
        Ok(cap)
    }

    /// Splits the leaves by reachability from two roots: leaves under
    /// `valid_root` go to valid, under `test_root` to test, the rest to train.
    pub fn cut_splits(&self, valid_root: &str, test_root: &str) -> Result<BTreeMap<String, Split>, HierarchyError> {
        let v = self.node_ix(valid_root)?;
        let t = self.node_ix(test_root)?;
        for (ix, id) in [(v, valid_root), (t, test_root)] {
            if self.is_leaf(ix) {
                return Err(HierarchyError::NotInternal(id.to_string()));
            }
        }
        let mut out: BTreeMap<String, Split> = self
            .leaf_ids()
            .map(|id| (id.to_string(), Split::Train))
            .collect();
        for &k in &self.spans[v] {
            out.insert(self.leaf_by_ordinal(k).to_string(), Split::Valid);
        }
        for &k in &self.spans[t] {
            let id = self.leaf_by_ordinal(k);
            if out[id] == Split::Valid {
                return Err(HierarchyError::OverlappingRoots(id.to_string()));
            }
            out.insert(id.to_string(), Split::Test);
        }
        Ok(out)
    }

    /// Sub-DAG whose leaves are exactly `keep` (ids not present are ignored):
    /// retains every ancestor of a kept leaf and the edges among retained
    /// nodes. Nothing is collapsed.
    pub fn induce<'a, I>(&self, keep: I) -> ClassDag
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut marked = vec![false; self.node_count()];
        let mut stack: Vec<NodeIx> = keep
            .into_iter()
            .filter_map(|id| self.index.get(id).copied())
            .filter(|&ix| self.is_leaf(ix))
            .collect();
        while let Some(v) = stack.pop() {
            if marked[v] {
                continue;
            }
            marked[v] = true;
            stack.extend(self.parents[v].iter().copied().filter(|&p| !marked[p]));
        }
        let old_to_new: Vec<Option<NodeIx>> = {
            let mut next = 0;
            marked
                .iter()
                .map(|&m| {
                    m.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let ids: Vec<String> = (0..self.node_count())
            .filter(|&v| marked[v])
            .map(|v| self.ids[v].clone())
            .collect();
        let mut children = vec![Vec::new(); ids.len()];
        let mut parents = vec![Vec::new(); ids.len()];
        for v in 0..self.node_count() {
            let Some(nv) = old_to_new[v] else { continue };
            for &c in &self.children[v] {
                if let Some(nc) = old_to_new[c] {
                    children[nv].push(nc);
                    parents[nc].push(nv);
                }
            }
        }
        Self::assemble(ids, children, parents).expect("sub-DAG of an acyclic graph is acyclic")
    }

    /// Longest path length from every node to `leaf`; `None` where the leaf
    /// is unreachable.
    fn longest_to(&self, leaf: NodeIx) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        dist[leaf] = Some(0);
        for &v in self.topo.iter().rev() {
            if v == leaf {
                continue;
            }
            dist[v] = self.children[v]
                .iter()
                .filter_map(|&c| dist[c])
                .max()
                .map(|d| d + 1);
        }
        dist
    }

    /// Height of the lowest common ancestor of two distinct leaves.
    ///
    /// A common ancestor's height is the longest path from it to either leaf;
    /// the ancestor minimizing that height is the "lowest" one.
    pub fn lca_height(&self, leaf_a: &str, leaf_b: &str) -> Result<usize, HierarchyError> {
        let a = self.node_ix(leaf_a)?;
        let b = self.node_ix(leaf_b)?;
        for (ix, id) in [(a, leaf_a), (b, leaf_b)] {
            if !self.is_leaf(ix) {
                return Err(HierarchyError::NotLeaf(id.to_string()));
            }
        }
        if a == b {
            return Err(HierarchyError::SameLeaf(leaf_a.to_string()));
        }
        let da = self.longest_to(a);
        let db = self.longest_to(b);
        da.iter()
            .zip(&db)
            .filter_map(|(x, y)| Some((*x)?.max((*y)?)))
            .min()
            .ok_or_else(|| HierarchyError::NoCommonAncestor(leaf_a.to_string(), leaf_b.to_string()))
    }

    pub fn leaf_ordinal(&self, ix: NodeIx) -> Option<u32> {
        self.leaf_ordinal[ix]
    }
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
