//! Rooted tree topologies and the selection operator.
//!
//! Nodes are renumbered in preorder with the root at index 0. Every non-root
//! node `t` owns exactly one branch `t|s`, and branch `d` is node `d + 1`.
//! Leaves appear in the same preorder, so the leaves under any node form a
//! contiguous range `first_leaf(s) .. first_leaf(s) + leaves_under(s)`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    leaves: Vec<usize>,
    leaf_of_node: Vec<Option<usize>>,
    first_leaf: Vec<usize>,
    leaves_under: Vec<usize>,
    internal: Vec<usize>,
}

/// Validates `(child, parent)` edges and builds the preorder topology.
pub fn build_topology<S: AsRef<str>>(edges: &[(S, S)]) -> Result<TreeTopology> {
    TreeTopology::from_edges(edges)
}

impl TreeTopology {
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyTree);
        }

        // Raw ids in first-appearance order so the build is deterministic.
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut raw_names: Vec<&str> = Vec::new();
        for (c, p) in edges {
            for name in [c.as_ref(), p.as_ref()] {
                if !ids.contains_key(name) {
                    ids.insert(name, raw_names.len());
                    raw_names.push(name);
                }
            }
        }

        let n = raw_names.len();
        let mut raw_parent: Vec<Option<usize>> = vec![None; n];
        let mut raw_children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (c, p) in edges {
            let (c, p) = (ids[c.as_ref()], ids[p.as_ref()]);
            if raw_parent[c].is_some() {
                return Err(Error::MultipleParents {
                    node: raw_names[c].to_string(),
                });
            }
            if c == p {
                return Err(Error::CycleDetected {
                    node: raw_names[c].to_string(),
                });
            }
            raw_parent[c] = Some(p);
            raw_children[p].push(c);
        }

        let mut roots = (0..n).filter(|&i| raw_parent[i].is_none());
        let root = match (roots.next(), roots.next()) {
            (Some(r), None) => r,
            (Some(a), Some(b)) => {
                return Err(Error::MultipleRoots {
                    first: raw_names[a].to_string(),
                    second: raw_names[b].to_string(),
                })
            }
            // Every node has a parent, so following parents must loop.
            (None, _) => {
                return Err(Error::CycleDetected {
                    node: raw_names[0].to_string(),
                })
            }
        };

        let mut order = Vec::with_capacity(n);
        let mut new_id = vec![usize::MAX; n];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            new_id[v] = order.len();
            order.push(v);
            stack.extend(raw_children[v].iter().rev());
        }
        // With one root and one parent per node, an unreached node sits on a cycle.
        if let Some(v) = (0..n).find(|&v| new_id[v] == usize::MAX) {
            return Err(Error::CycleDetected {
                node: raw_names[v].to_string(),
            });
        }

        let names: Vec<String> = order.iter().map(|&v| raw_names[v].to_string()).collect();
        let parent: Vec<Option<usize>> = order
            .iter()
            .map(|&v| raw_parent[v].map(|p| new_id[p]))
            .collect();
        let children: Vec<Vec<usize>> = order
            .iter()
            .map(|&v| raw_children[v].iter().map(|&c| new_id[c]).collect())
            .collect();

        for (s, ch) in children.iter().enumerate() {
            if ch.len() == 1 {
                return Err(Error::TooFewChildren {
                    node: names[s].clone(),
                    count: 1,
                });
            }
        }

        let mut leaves = Vec::new();
        let mut leaf_of_node = vec![None; n];
        let mut internal = Vec::new();
        for s in 0..n {
            if children[s].is_empty() {
                leaf_of_node[s] = Some(leaves.len());
                leaves.push(s);
            } else {
                internal.push(s);
            }
        }

        // Reverse preorder visits children before parents.
        let mut leaves_under = vec![0usize; n];
        let mut first_leaf = vec![0usize; n];
        for s in (0..n).rev() {
            if let Some(k) = leaf_of_node[s] {
                leaves_under[s] = 1;
                first_leaf[s] = k;
            } else {
                leaves_under[s] = children[s].iter().map(|&t| leaves_under[t]).sum();
                first_leaf[s] = first_leaf[children[s][0]];
            }
        }

        Ok(TreeTopology {
            names,
            parent,
            children,
            leaves,
            leaf_of_node,
            first_leaf,
            leaves_under,
            internal,
        })
    }

    /// A root with `k` leaf children named `t1..tk`.
    pub fn flat(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument("a tree needs at least two leaves"));
        }
        let edges: Vec<(String, String)> = (1..=k)
            .map(|i| (alloc::format!("t{i}"), String::from("root")))
            .collect();
        Self::from_edges(&edges)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    /// Number of branches `D`, one per non-root node.
    pub fn branch_count(&self) -> usize {
        self.names.len() - 1
    }

    /// Number of leaves `K`.
    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn node_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// `c(s)`.
    pub fn child_count(&self, node: usize) -> usize {
        self.children[node].len()
    }

    /// `l(s)`: leaves in the subtree of `node`.
    pub fn leaves_under(&self, node: usize) -> usize {
        self.leaves_under[node]
    }

    pub fn leaf_range(&self, node: usize) -> Range<usize> {
        self.first_leaf[node]..self.first_leaf[node] + self.leaves_under[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Leaf node ids in topic order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_node(&self, k: usize) -> usize {
        self.leaves[k]
    }

    pub fn leaf_index(&self, node: usize) -> Option<usize> {
        self.leaf_of_node[node]
    }

    /// Internal node ids in preorder; the root comes first.
    pub fn internal_nodes(&self) -> &[usize] {
        &self.internal
    }

    #[inline]
    pub fn branch_node(&self, d: usize) -> usize {
        d + 1
    }

    /// Branch owned by a non-root node.
    #[inline]
    pub fn node_branch(&self, node: usize) -> usize {
        debug_assert!(node > 0, "the root owns no branch");
        node - 1
    }

    /// The node `s` of branch `t|s`.
    #[inline]
    pub fn branch_parent(&self, d: usize) -> usize {
        self.parent[d + 1].expect("non-root node has a parent")
    }

    pub fn branch_is_leaf(&self, d: usize) -> bool {
        self.is_leaf(d + 1)
    }

    /// Branches `t|s` for the children `t` of `s`, in declaration order.
    pub fn child_branches(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.children[node].iter().map(|&t| t - 1)
    }

    /// `(child, parent)` names in branch order; feeding them back to
    /// [`build_topology`] reproduces this topology exactly.
    pub fn edges(&self) -> Vec<(String, String)> {
        (0..self.branch_count())
            .map(|d| {
                (
                    self.names[d + 1].clone(),
                    self.names[self.branch_parent(d)].clone(),
                )
            })
            .collect()
    }

    /// Root-to-leaf branch list of leaf `k`.
    pub fn leaf_path(&self, k: usize) -> Result<Vec<usize>> {
        if k >= self.leaf_count() {
            return Err(Error::LeafIndexOutOfRange {
                index: k,
                leaf_count: self.leaf_count(),
            });
        }
        let mut path = Vec::new();
        let mut v = self.leaves[k];
        while v != 0 {
            path.push(v - 1);
            v = self.parent[v].expect("non-root node has a parent");
        }
        path.reverse();
        Ok(path)
    }

    /// Branch pseudo-counts `Σ_ω n_ω δ_{t|s}(ω)`: each branch gets the sum of `n`
    /// over the leaves below its child node.
    pub fn select(&self, n: &[f64]) -> Vec<f64> {
        debug_assert_eq!(n.len(), self.leaf_count());
        let mut mass = vec![0.0; self.node_count()];
        for (k, &node) in self.leaves.iter().enumerate() {
            mass[node] = n[k];
        }
        for s in (0..self.node_count()).rev() {
            if !self.is_leaf(s) {
                mass[s] = self.children[s].iter().map(|&t| mass[t]).sum();
            }
        }
        mass.remove(0);
        mass
    }

    /// Transpose of [`select`](Self::select): each leaf gets the sum of `u` along its path.
    pub fn path_sum(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.branch_count());
        let mut acc = vec![0.0; self.node_count()];
        for v in 1..self.node_count() {
            // Preorder guarantees the parent is already filled.
            acc[v] = acc[self.parent[v].unwrap()] + u[v - 1];
        }
        self.leaves.iter().map(|&v| acc[v]).collect()
    }
}

/// Explicit `D × K` binary matrix with entry `(d, k) = 1` iff branch `d` lies
/// on the path of leaf `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionOperator {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

pub fn selection_operator(topo: &TreeTopology) -> SelectionOperator {
    SelectionOperator::new(topo)
}

impl SelectionOperator {
    pub fn new(topo: &TreeTopology) -> Self {
        let (rows, cols) = (topo.branch_count(), topo.leaf_count());
        let mut entries = vec![0u8; rows * cols];
        for d in 0..rows {
            for k in topo.leaf_range(d + 1) {
                entries[d * cols + k] = 1;
            }
        }
        SelectionOperator {
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, d: usize, k: usize) -> bool {
        self.entries[d * self.cols + k] == 1
    }

    pub fn row(&self, d: usize) -> &[u8] {
        &self.entries[d * self.cols..(d + 1) * self.cols]
    }

    pub fn apply(&self, n: &[f64]) -> Result<Vec<f64>> {
        if n.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "leaf counts",
                expected: self.cols,
                found: n.len(),
            });
        }
        Ok((0..self.rows)
            .map(|d| {
                self.row(d)
                    .iter()
                    .zip(n)
                    .filter(|(&e, _)| e == 1)
                    .map(|(_, x)| x)
                    .sum()
            })
            .collect())
    }

    pub fn apply_transpose(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "branch vector",
                expected: self.rows,
                found: u.len(),
            });
        }
        Ok((0..self.cols)
            .map(|k| {
                (0..self.rows)
                    .filter(|&d| self.entry(d, k))
                    .map(|d| u[d])
                    .sum()
            })
            .collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random tree of depth ≤ 3 with 2..=max_k leaves, built by splitting leaves.
    pub(crate) fn random_tree(seed: u64, max_k: usize) -> TreeTopology {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rng.random_range(2..=max_k);
        // (name, depth) of current leaves; edges accumulate.
        let mut edges: Vec<(String, String)> = Vec::new();
        let mut leaves: Vec<(String, usize)> = vec![(String::from("r"), 0)];
        let mut next = 0;
        let mut count = 1;
        while count < target {
            let open: Vec<usize> = (0..leaves.len()).filter(|&i| leaves[i].1 < 3).collect();
            let i = open[rng.random_range(0..open.len())];
            let (name, depth) = leaves.swap_remove(i);
            let c = rng.random_range(2..=3).min(target - count + 1);
            for _ in 0..c {
                let child = format!("n{next}");
                next += 1;
                edges.push((child.clone(), name.clone()));
                leaves.push((child, depth + 1));
            }
            count += c - 1;
        }
        TreeTopology::from_edges(&edges).unwrap()
    }

    fn two_level() -> TreeTopology {
        build_topology(&[
            ("l1", "r"),
            ("l2", "r"),
            ("x", "l1"),
            ("y", "l1"),
            ("u", "l2"),
            ("v", "l2"),
            ("w", "l2"),
        ])
        .unwrap()
    }

    #[test]
    fn flat_two_leaf_tree() {
        let t = build_topology(&[("a", "r"), ("b", "r")]).unwrap();
        assert_eq!((t.leaf_count(), t.branch_count()), (2, 2));
        assert!(t.branch_is_leaf(0) && t.branch_is_leaf(1));
    }

    #[test]
    fn two_level_counts() {
        let t = two_level();
        assert_eq!((t.leaf_count(), t.branch_count()), (5, 7));
        let l = |n: &str| t.leaves_under(t.node_by_name(n).unwrap());
        assert_eq!(l("r"), 5);
        assert_eq!(l("r"), 2 + (l("l1") - 1) + (l("l2") - 1));
        let leaf_names: Vec<&str> = t.leaves().iter().map(|&v| t.name(v)).collect();
        assert_eq!(leaf_names, ["x", "y", "u", "v", "w"]);
    }

    #[test]
    fn rejects_malformed_edges() {
        assert!(matches!(
            build_topology(&[("a", "r"), ("a", "b")]),
            Err(Error::MultipleParents { .. })
        ));
        assert!(matches!(
            build_topology(&[("a", "r"), ("b", "q")]),
            Err(Error::MultipleRoots { .. })
        ));
        assert!(matches!(
            build_topology(&[("a", "r"), ("b", "r"), ("c", "d"), ("d", "c")]),
            Err(Error::CycleDetected { .. })
        ));
        assert!(matches!(
            build_topology(&[("a", "b"), ("b", "a")]),
            Err(Error::CycleDetected { .. })
        ));
        assert!(matches!(
            build_topology(&[("a", "r"), ("b", "r"), ("c", "a")]),
            Err(Error::TooFewChildren { count: 1, .. })
        ));
        let none: [(&str, &str); 0] = [];
        assert_eq!(build_topology(&none), Err(Error::EmptyTree));
    }

    #[test]
    fn flat_selection_is_identity() {
        let t = TreeTopology::flat(3).unwrap();
        let op = selection_operator(&t);
        assert_eq!(op.apply(&[1.0, 0.0, 2.0]).unwrap(), [1.0, 0.0, 2.0]);
        assert_eq!(t.select(&[0.0; 3]), [0.0; 3]);
    }

    #[test]
    fn cascade_selection_gives_suffix_sums() {
        // Leaf k and the "rest" node at each level; last level holds leaves 2 and 3.
        let t = build_topology(&[("k1", "g1"), ("g2", "g1"), ("k2", "g2"), ("k3", "g2")]).unwrap();
        let n = [3.0, 5.0, 7.0];
        let b = t.select(&n);
        let at = |name: &str| b[t.node_branch(t.node_by_name(name).unwrap())];
        assert_eq!((at("k1"), at("k2"), at("k3")), (3.0, 5.0, 7.0));
        assert_eq!(at("g2"), 12.0);
    }

    #[test]
    fn leaf_path_examples() {
        let t = TreeTopology::flat(3).unwrap();
        assert_eq!(t.leaf_path(1).unwrap(), [1]);
        let t = two_level();
        let u = t.leaf_index(t.node_by_name("u").unwrap()).unwrap();
        let names: Vec<&str> = t
            .leaf_path(u)
            .unwrap()
            .iter()
            .map(|&d| t.name(t.branch_node(d)))
            .collect();
        assert_eq!(names, ["l2", "u"]);
        assert!(matches!(
            t.leaf_path(5),
            Err(Error::LeafIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn edges_roundtrip() {
        let t = two_level();
        assert_eq!(TreeTopology::from_edges(&t.edges()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn leaf_count_recursion_at_every_internal_node(seed in any::<u64>()) {
            let t = random_tree(seed, 8);
            prop_assert_eq!(t.leaves_under(t.root()), t.leaf_count());
            for &s in t.internal_nodes() {
                let rhs = t.child_count(s)
                    + t.children(s).iter().map(|&c| t.leaves_under(c) - 1).sum::<usize>();
                prop_assert_eq!(t.leaves_under(s), rhs);
            }
            for &w in t.leaves() {
                prop_assert_eq!(t.leaves_under(w), 1);
            }
        }

        #[test]
        fn selection_rows_and_columns(seed in any::<u64>()) {
            let t = random_tree(seed, 8);
            let op = selection_operator(&t);
            for d in 0..t.branch_count() {
                let row_sum: usize = op.row(d).iter().map(|&e| e as usize).sum();
                prop_assert_eq!(row_sum, t.leaves_under(t.branch_node(d)));
            }
            for k in 0..t.leaf_count() {
                let mut onehot = vec![0.0; t.leaf_count()];
                onehot[k] = 1.0;
                let sel = op.apply(&onehot).unwrap();
                let path = t.leaf_path(k).unwrap();
                for d in 0..t.branch_count() {
                    let expected = if path.contains(&d) { 1.0 } else { 0.0 };
                    prop_assert_eq!(sel[d], expected);
                    prop_assert_eq!(op.entry(d, k), path.contains(&d));
                }
            }
            // Child rows sum to the parent's row (all ones at the root).
            for &s in t.internal_nodes() {
                for k in 0..t.leaf_count() {
                    let total: u8 = t.child_branches(s).map(|d| op.row(d)[k]).sum();
                    let expected = if s == 0 { 1 } else { op.row(s - 1)[k] };
                    prop_assert_eq!(total, expected);
                }
            }
        }

        #[test]
        fn fast_paths_match_dense_operator(seed in any::<u64>(), scale in 0.1f64..10.0) {
            let t = random_tree(seed, 8);
            let op = selection_operator(&t);
            let n: Vec<f64> = (0..t.leaf_count()).map(|k| scale * (k as f64 + 0.5)).collect();
            let u: Vec<f64> = (0..t.branch_count()).map(|d| -scale / (d as f64 + 1.0)).collect();
            let dense = op.apply(&n).unwrap();
            for (a, b) in t.select(&n).iter().zip(&dense) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let dense_t = op.apply_transpose(&u).unwrap();
            for (a, b) in t.path_sum(&u).iter().zip(&dense_t) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn rebuild_is_deterministic(seed in any::<u64>()) {
            let t = random_tree(seed, 8);
            prop_assert_eq!(TreeTopology::from_edges(&t.edges()).unwrap(), t);
        }
    }
}
