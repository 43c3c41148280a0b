//! Distinct prefix-length index and the binary search trees that steer the
//! guided search.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Smallest window width whose index space holds `count` nonzero lengths,
/// with index 0 (default route) and the all-ones sentinel both reserved.
pub fn auto_n_bits(count: usize) -> u32 {
    let mut n = 1;
    while (1usize << n) - 2 < count {
        n += 1;
    }
    n
}

/// Ascending distinct prefix lengths; index 0 is always the default route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthIndex {
    plens: Vec<u8>,
    n_bits: u32,
}

impl LengthIndex {
    /// Deduplicate and sort `lengths`, prepending 0.
    pub fn build<I: IntoIterator<Item = u8>>(lengths: I, n_bits: u32) -> Result<Self> {
        if n_bits == 0 || n_bits > 16 {
            return Err(Error::invalid(format!("index width {n_bits} outside 1..=16")));
        }
        let mut plens: Vec<u8> = lengths.into_iter().filter(|&l| l > 0).collect();
        plens.sort_unstable();
        plens.dedup();
        let capacity = (1usize << n_bits) - 2;
        if plens.len() > capacity {
            return Err(Error::Capacity(format!(
                "{} distinct prefix lengths exceed the {capacity} indexable with n_bits = {n_bits}",
                plens.len()
            )));
        }
        plens.insert(0, 0);
        Ok(LengthIndex { plens, n_bits })
    }

    /// All entries, starting with the reserved 0.
    pub fn plens(&self) -> &[u8] {
        &self.plens
    }

    pub fn nonzero(&self) -> &[u8] {
        &self.plens[1..]
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    /// The all-ones window value.
    pub fn sentinel(&self) -> u32 {
        (1u32 << self.n_bits) - 1
    }

    pub fn index_of(&self, plen: u8) -> Option<u32> {
        self.plens.binary_search(&plen).ok().map(|i| i as u32)
    }

    pub fn len_at(&self, ix: u32) -> Option<u8> {
        self.plens.get(ix as usize).copied()
    }
}

/// Convenience wrapper over [`LengthIndex::build`] for a prefix list.
pub fn build_length_index(prefixes: &[crate::addr::Prefix], n_bits: u32) -> Result<LengthIndex> {
    LengthIndex::build(prefixes.iter().map(|p| p.len()), n_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub plen: u8,
    pub left: Option<u32>,
    pub right: Option<u32>,
}

/// Binary search tree over the nonzero prefix lengths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LengthTree {
    nodes: Vec<TreeNode>,
    root: Option<u32>,
}

impl LengthTree {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Classic binary search shape: root at `floor((lo + hi) / 2)`.
    pub fn balanced(idx: &LengthIndex) -> Result<Self> {
        let lens = idx.nonzero();
        if lens.is_empty() {
            return Err(Error::invalid("no nonzero prefix lengths to build a tree from"));
        }
        let mut tree = LengthTree::empty();
        tree.root = tree.build_range(lens, &mut |lo, hi| (lo + hi) / 2, 0, lens.len() as isize - 1);
        Ok(tree)
    }

    /// Tree minimising `sum(w_i * depth_i)` (root depth 1), computed with
    /// Knuth's O(n^2) dynamic program. Ties pick the smaller root.
    pub fn optimal(idx: &LengthIndex, weights: &[f64]) -> Result<Self> {
        let lens = idx.nonzero();
        if lens.is_empty() {
            return Err(Error::invalid("no nonzero prefix lengths to build a tree from"));
        }
        if weights.len() != lens.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} prefix lengths",
                weights.len(),
                lens.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("weights are all zero"));
        }
        let roots = knuth_roots(weights);
        let mut tree = LengthTree::empty();
        tree.root = tree.build_range(
            lens,
            &mut |lo, hi| roots[lo as usize][hi as usize] as isize,
            0,
            lens.len() as isize - 1,
        );
        Ok(tree)
    }

    /// Rebuild a tree from its preorder sequence of lengths.
    pub fn from_preorder(order: &[u8]) -> Result<Self> {
        let mut tree = LengthTree::empty();
        for &plen in order {
            let id = tree.nodes.len() as u32;
            tree.nodes.push(TreeNode {
                plen,
                left: None,
                right: None,
            });
            let Some(mut cur) = tree.root else {
                tree.root = Some(id);
                continue;
            };
            loop {
                let node = tree.nodes[cur as usize];
                let slot = match plen.cmp(&node.plen) {
                    std::cmp::Ordering::Less => &mut tree.nodes[cur as usize].left,
                    std::cmp::Ordering::Greater => &mut tree.nodes[cur as usize].right,
                    std::cmp::Ordering::Equal => {
                        return Err(Error::invalid(format!("duplicate length {plen} in tree")))
                    }
                };
                match *slot {
                    Some(next) => cur = next,
                    None => {
                        *slot = Some(id);
                        break;
                    }
                }
            }
        }
        Ok(tree)
    }

    fn build_range(
        &mut self,
        lens: &[u8],
        pick: &mut dyn FnMut(isize, isize) -> isize,
        lo: isize,
        hi: isize,
    ) -> Option<u32> {
        if lo > hi {
            return None;
        }
        let mid = pick(lo, hi);
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode {
            plen: lens[mid as usize],
            left: None,
            right: None,
        });
        let left = self.build_range(lens, pick, lo, mid - 1);
        let right = self.build_range(lens, pick, mid + 1, hi);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        Some(id)
    }

    pub fn root(&self) -> Option<u32> {
        self.root
    }

    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Maximum node count on a root-to-leaf path.
    pub fn height(&self) -> u32 {
        fn h(t: &LengthTree, n: Option<u32>) -> u32 {
            n.map_or(0, |id| {
                let node = t.node(id);
                1 + h(t, node.left).max(h(t, node.right))
            })
        }
        h(self, self.root)
    }

    pub fn in_order(&self) -> Vec<u8> {
        fn walk(t: &LengthTree, n: Option<u32>, out: &mut Vec<u8>) {
            if let Some(id) = n {
                let node = t.node(id);
                walk(t, node.left, out);
                out.push(node.plen);
                walk(t, node.right, out);
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, self.root, &mut out);
        out
    }

    pub fn preorder(&self) -> Vec<u8> {
        fn walk(t: &LengthTree, n: Option<u32>, out: &mut Vec<u8>) {
            if let Some(id) = n {
                let node = t.node(id);
                out.push(node.plen);
                walk(t, node.left, out);
                walk(t, node.right, out);
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, self.root, &mut out);
        out
    }

    /// Depth (root = 1) of every length, in ascending length order.
    pub fn depths(&self) -> Vec<(u8, u32)> {
        fn walk(t: &LengthTree, n: Option<u32>, d: u32, out: &mut Vec<(u8, u32)>) {
            if let Some(id) = n {
                let node = t.node(id);
                walk(t, node.left, d + 1, out);
                out.push((node.plen, d));
                walk(t, node.right, d + 1, out);
            }
        }
        let mut out = Vec::new();
        walk(self, self.root, 1, &mut out);
        out
    }

    /// `sum(w_i * depth_i)` with weights given in ascending length order.
    pub fn weighted_cost(&self, weights: &[f64]) -> f64 {
        self.depths()
            .iter()
            .zip(weights)
            .map(|(&(_, d), w)| w * f64::from(d))
            .sum()
    }

    /// Indented text rendering, right subtree first so the tree reads
    /// top-down when rotated.
    pub fn render_text(&self) -> String {
        fn walk(t: &LengthTree, n: Option<u32>, depth: usize, tag: &str, out: &mut String) {
            if let Some(id) = n {
                let node = t.node(id);
                walk(t, node.right, depth + 1, "R", out);
                let _ = writeln!(out, "{}{tag} /{}", "    ".repeat(depth), node.plen);
                walk(t, node.left, depth + 1, "L", out);
            }
        }
        let mut out = String::new();
        walk(self, self.root, 0, "*", &mut out);
        out
    }

    pub fn render_dot(&self) -> String {
        let mut out = String::from("digraph lengths {\n    node [shape=circle];\n");
        for node in &self.nodes {
            let _ = writeln!(out, "    n{0} [label=\"/{0}\"];", node.plen);
        }
        for node in &self.nodes {
            for (child, label) in [(node.left, "miss"), (node.right, "hit")] {
                if let Some(c) = child {
                    let _ = writeln!(
                        out,
                        "    n{} -> n{} [label=\"{label}\"];",
                        node.plen,
                        self.node(c).plen
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Knuth DP over keys only: `root[i][j]` is the chosen root for keys i..=j.
fn knuth_roots(w: &[f64]) -> Vec<Vec<usize>> {
    let n = w.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + w[i];
    }
    // cost[i][j] over half-open [i, j)
    let mut cost = vec![vec![0.0f64; n + 1]; n + 1];
    let mut root = vec![vec![0usize; n + 1]; n + 1];
    for i in 0..n {
        cost[i][i + 1] = w[i];
        root[i][i + 1] = i;
    }
    for span in 2..=n {
        for i in 0..=n - span {
            let j = i + span;
            let lo = root[i][j - 1];
            let hi = root[i + 1][j];
            let mut best = f64::INFINITY;
            let mut best_r = lo;
            for r in lo..=hi {
                let c = cost[i][r] + cost[r + 1][j];
                if c < best {
                    best = c;
                    best_r = r;
                }
            }
            cost[i][j] = best + (prefix[j] - prefix[i]);
            root[i][j] = best_r;
        }
    }
    // re-index to inclusive bounds
    let mut out = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in i..n {
            out[i][j] = root[i][j + 1];
        }
    }
    out
}

/// Optimal expected cost `sum(w_i * depth_i)` from the Knuth DP.
pub fn optimal_cost(weights: &[f64]) -> f64 {
    let n = weights.len();
    if n == 0 {
        return 0.0;
    }
    let lens: Vec<u8> = (1..=n as u8).collect();
    let idx = LengthIndex {
        plens: std::iter::once(0).chain(lens).collect(),
        n_bits: 16,
    };
    LengthTree::optimal(&idx, weights)
        .map(|t| t.weighted_cost(weights))
        .unwrap_or(0.0)
}

/// Blend traffic shares with a uniform prior:
/// `w_i = alpha * share_i + (1 - alpha) / N`.
pub fn blend_weights(shares: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let total: f64 = shares.iter().sum();
    if shares.iter().any(|s| *s < 0.0) || !total.is_finite() {
        return Err(Error::invalid("traffic shares must be nonnegative"));
    }
    let n = shares.len() as f64;
    Ok(shares
        .iter()
        .map(|s| {
            let share = if total > 0.0 { s / total } else { 0.0 };
            alpha * share + (1.0 - alpha) / n
        })
        .collect())
}
