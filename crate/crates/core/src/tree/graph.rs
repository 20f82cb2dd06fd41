use std::cmp::Ordering;
use std::collections::VecDeque;

use super::TreeSkeleton;
use crate::error::{Error, Result};

/// Endpoint coincidence tolerance for procedural data in normalized units.
pub const DEFAULT_EPS_CONNECT: f64 = 1e-6;

/// Rooted parent/child structure over branch indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGraph {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Children in canonical order: (t.z, t.y, t.x) descending, then index.
    pub children: Vec<Vec<usize>>,
}

impl TreeGraph {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Depth of every branch; the root has depth 0.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.len()];
        let mut queue = VecDeque::from([self.root]);
        while let Some(b) = queue.pop_front() {
            for &c in &self.children[b] {
                depth[c] = depth[b] + 1;
                queue.push_back(c);
            }
        }
        depth
    }
}

fn canonical_child_cmp(tree: &TreeSkeleton, a: usize, b: usize) -> Ordering {
    let (ta, tb) = (&tree.branches[a].t, &tree.branches[b].t);
    tb.z.total_cmp(&ta.z)
        .then(tb.y.total_cmp(&ta.y))
        .then(tb.x.total_cmp(&ta.x))
        .then(a.cmp(&b))
}

/// Infers the parent of every branch as the branch whose distal end is
/// nearest to its proximal end (within `eps_connect`), then validates that
/// the result is a single rooted tree.
pub fn build_tree_graph(tree: &TreeSkeleton, eps_connect: f64) -> Result<TreeGraph> {
    let n = tree.len();
    if n == 0 {
        return Err(Error::InvalidParams("cannot build a graph of an empty tree".into()));
    }
    let mut parent = vec![None; n];
    for (bi, b) in tree.branches.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (ai, a) in tree.branches.iter().enumerate() {
            if ai == bi {
                continue;
            }
            let d = b.s.dist(&a.t);
            if d <= eps_connect && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, ai));
            }
        }
        parent[bi] = best.map(|(_, ai)| ai);
    }

    let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
    if roots.len() > 1 {
        return Err(Error::NotATree {
            reason: format!("{} parentless branches", roots.len()),
            branches: roots,
        });
    }
    let Some(&root) = roots.first() else {
        return Err(Error::NotATree {
            reason: "no parentless branch (cycle)".into(),
            branches: (0..n).collect(),
        });
    };

    let mut children = vec![Vec::new(); n];
    for (c, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(c);
        }
    }
    for list in &mut children {
        list.sort_by(|&a, &b| canonical_child_cmp(tree, a, b));
    }

    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(b) = queue.pop_front() {
        for &c in &children[b] {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    let unreachable: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    if !unreachable.is_empty() {
        return Err(Error::NotATree {
            reason: "cycle: branches unreachable from the root".into(),
            branches: unreachable,
        });
    }

    Ok(TreeGraph {
        root,
        parent,
        children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Branch, BranchPoint};

    fn b(s: [f64; 3], t: [f64; 3]) -> Branch {
        Branch::new(
            BranchPoint::new(s[0], s[1], s[2], 0.1),
            BranchPoint::new(t[0], t[1], t[2], 0.05),
        )
        .unwrap()
    }

    fn fork() -> TreeSkeleton {
        TreeSkeleton::new(vec![
            b([0.5, 0.0, 1.0], [1.0, 0.0, 2.0]),
            b([0.0, 0.0, 0.0], [0.5, 0.0, 1.0]),
            b([0.5, 0.0, 1.0], [0.0, 0.0, 2.5]),
        ])
    }

    #[test]
    fn trunk_with_two_children() {
        let g = build_tree_graph(&fork(), DEFAULT_EPS_CONNECT).unwrap();
        assert_eq!(g.root, 1);
        // child 2 ends higher (t.z = 2.5) so it comes first
        assert_eq!(g.children[1], vec![2, 0]);
        assert_eq!(g.parent, vec![Some(1), None, Some(1)]);
        assert_eq!(g.depths(), vec![1, 0, 1]);
    }

    #[test]
    fn single_branch_is_root() {
        let t = TreeSkeleton::new(vec![b([0.0; 3], [0.0, 0.0, 1.0])]);
        let g = build_tree_graph(&t, DEFAULT_EPS_CONNECT).unwrap();
        assert_eq!(g.root, 0);
        assert!(g.children[0].is_empty());
    }

    #[test]
    fn perturbed_child_is_detached() {
        let mut t = fork();
        t.branches[2].s.x += 2.0 * DEFAULT_EPS_CONNECT;
        match build_tree_graph(&t, DEFAULT_EPS_CONNECT) {
            Err(Error::NotATree { branches, .. }) => assert_eq!(branches, vec![1, 2]),
            other => panic!("expected NotATree, got {other:?}"),
        }
    }

    #[test]
    fn two_cycle_is_rejected() {
        let t = TreeSkeleton::new(vec![
            b([0.0; 3], [0.0, 0.0, 1.0]),
            b([0.0, 0.0, 1.0], [0.0, 0.0, 0.0]),
            b([5.0, 0.0, 0.0], [5.0, 0.0, 1.0]),
        ]);
        assert!(matches!(
            build_tree_graph(&t, DEFAULT_EPS_CONNECT),
            Err(Error::NotATree { .. })
        ));
    }
}
