//! Branch permutations that linearize a tree: descending zyx sort, 3D
//! Hilbert-curve sort, and depth-/breadth-first traversal of the tree graph.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tree::{build_tree_graph, TreeGraph, TreeSkeleton};

pub const DEFAULT_HILBERT_BITS: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderStrategy {
    Zyx,
    Hilbert,
    #[default]
    Dfs,
    Bfs,
}

impl fmt::Display for OrderStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderStrategy::Zyx => "zyx",
            OrderStrategy::Hilbert => "hilbert",
            OrderStrategy::Dfs => "dfs",
            OrderStrategy::Bfs => "bfs",
        })
    }
}

impl FromStr for OrderStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zyx" => Ok(Self::Zyx),
            "hilbert" => Ok(Self::Hilbert),
            "dfs" => Ok(Self::Dfs),
            "bfs" => Ok(Self::Bfs),
            other => Err(Error::Usage(format!(
                "unknown ordering '{other}' (expected zyx|hilbert|dfs|bfs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchPermutation {
    pub order: Vec<usize>,
    pub strategy: OrderStrategy,
}

impl BranchPermutation {
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.order.len()];
        self.order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
    }

    /// `position[b]` is where branch `b` lands in the sequence.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &b) in self.order.iter().enumerate() {
            pos[b] = p;
        }
        pos
    }

    pub fn apply(&self, tree: &TreeSkeleton) -> TreeSkeleton {
        TreeSkeleton {
            branches: self.order.iter().map(|&i| tree.branches[i]).collect(),
            species: tree.species.clone(),
        }
    }
}

/// Descending by (s.z, s.y, s.x); ties by ascending index.
pub fn order_zyx(tree: &TreeSkeleton) -> BranchPermutation {
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&tree.branches[a].s, &tree.branches[b].s);
        pb.z.total_cmp(&pa.z)
            .then(pb.y.total_cmp(&pa.y))
            .then(pb.x.total_cmp(&pa.x))
            .then(a.cmp(&b))
    });
    BranchPermutation {
        order,
        strategy: OrderStrategy::Zyx,
    }
}

/// Hilbert index of grid cell `(x, y, z)` on a `2^bits` grid per axis.
///
/// Transposed-form encoding followed by bit interleaving, x most significant.
pub fn hilbert_index_3d(cell: [u32; 3], bits: u32) -> u64 {
    assert!((1..=21).contains(&bits), "bits must be in 1..=21");
    let mut x = cell;
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in &mut x {
        *v ^= t;
    }
    let mut h = 0u64;
    for j in (0..bits).rev() {
        for v in x {
            h = (h << 1) | u64::from((v >> j) & 1);
        }
    }
    h
}

fn grid_cell(v: f64, bits: u32) -> u32 {
    let cells = 1u32 << bits;
    let c = ((v + 1.0) / 2.0 * f64::from(cells)).floor();
    c.clamp(0.0, f64::from(cells - 1)) as u32
}

/// Ascending Hilbert index of each branch's start point on a `2^bits` grid
/// over [-1, 1]^3; ties by index.
pub fn order_hilbert(tree: &TreeSkeleton, bits: u32) -> Result<BranchPermutation> {
    if !(1..=10).contains(&bits) {
        return Err(Error::InvalidParams(format!("hilbert bits {bits} outside 1..=10")));
    }
    let keys: Vec<u64> = tree
        .branches
        .iter()
        .map(|b| hilbert_index_3d([grid_cell(b.s.x, bits), grid_cell(b.s.y, bits), grid_cell(b.s.z, bits)], bits))
        .collect();
    let mut order: Vec<usize> = (0..tree.len()).collect();
    order.sort_by_key(|&i| (keys[i], i));
    Ok(BranchPermutation {
        order,
        strategy: OrderStrategy::Hilbert,
    })
}

/// Preorder traversal from the root in canonical child order.
pub fn order_dfs(graph: &TreeGraph) -> BranchPermutation {
    let mut order = Vec::with_capacity(graph.len());
    let mut stack = vec![graph.root];
    while let Some(b) = stack.pop() {
        order.push(b);
        stack.extend(graph.children[b].iter().rev());
    }
    BranchPermutation {
        order,
        strategy: OrderStrategy::Dfs,
    }
}

/// Level-order traversal from the root in canonical child order.
pub fn order_bfs(graph: &TreeGraph) -> BranchPermutation {
    let mut order = Vec::with_capacity(graph.len());
    let mut queue = VecDeque::from([graph.root]);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        queue.extend(graph.children[b].iter().copied());
    }
    BranchPermutation {
        order,
        strategy: OrderStrategy::Bfs,
    }
}

/// Applies `strategy`, building the tree graph when the traversal needs one.
pub fn order_tree(
    tree: &TreeSkeleton,
    strategy: OrderStrategy,
    eps_connect: f64,
) -> Result<BranchPermutation> {
    match strategy {
        OrderStrategy::Zyx => Ok(order_zyx(tree)),
        OrderStrategy::Hilbert => order_hilbert(tree, DEFAULT_HILBERT_BITS),
        OrderStrategy::Dfs => Ok(order_dfs(&build_tree_graph(tree, eps_connect)?)),
        OrderStrategy::Bfs => Ok(order_bfs(&build_tree_graph(tree, eps_connect)?)),
    }
}
