use hgtree::ordering::*;
use hgtree::tree::*;
use proptest::prelude::*;

fn corpus(seed: u64, n: usize) -> Vec<TreeSkeleton> {
    generate_corpus(&ProceduralParams::elm(0), seed, n, 200)
        .unwrap()
        .iter()
        .map(|t| normalize(t).unwrap().0)
        .collect()
}

/// Parent before child, and each subtree occupies a contiguous block.
fn check_dfs(g: &TreeGraph, order: &[usize]) {
    let pos: Vec<usize> = {
        let mut p = vec![0; order.len()];
        for (i, &b) in order.iter().enumerate() {
            p[b] = i;
        }
        p
    };
    for (b, par) in g.parent.iter().enumerate() {
        if let Some(p) = par {
            assert!(pos[*p] < pos[b]);
        }
    }
    fn size(g: &TreeGraph, b: usize) -> usize {
        1 + g.children[b].iter().map(|&c| size(g, c)).sum::<usize>()
    }
    for b in 0..g.len() {
        let n = size(g, b);
        let block = &order[pos[b]..pos[b] + n];
        // Every member of the block descends from b.
        for &m in block {
            let mut cur = Some(m);
            while let Some(c) = cur {
                if c == b {
                    break;
                }
                cur = g.parent[c];
            }
            assert_eq!(cur, Some(b), "subtree of {b} not contiguous");
        }
    }
}

#[test]
fn strategies_on_procedural_corpus() {
    for t in corpus(0, 100) {
        let g = build_tree_graph(&t, DEFAULT_EPS_CONNECT).unwrap();
        for s in [OrderStrategy::Zyx, OrderStrategy::Hilbert, OrderStrategy::Dfs, OrderStrategy::Bfs] {
            let p = order_tree(&t, s, DEFAULT_EPS_CONNECT).unwrap();
            assert_eq!(p.order.len(), t.len());
            assert!(p.is_permutation());
        }
        check_dfs(&g, &order_dfs(&g).order);
        let depth = g.depths();
        let bfs = order_bfs(&g).order;
        assert!(bfs.windows(2).all(|w| depth[w[0]] <= depth[w[1]]));
        assert_eq!(bfs[0], g.root);
    }
}

/// Reference: stable sort of (−z, −y, −x) keys on the start point.
#[test]
fn zyx_matches_reference_sort() {
    for t in corpus(500, 50) {
        let mut keys: Vec<(usize, [f64; 3])> =
            t.branches.iter().enumerate().map(|(i, b)| (i, [-b.s.z, -b.s.y, -b.s.x])).collect();
        keys.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let want: Vec<usize> = keys.iter().map(|k| k.0).collect();
        assert_eq!(order_zyx(&t).order, want);
    }
}

#[test]
fn hilbert_exhaustive_small_grids() {
    for bits in 1..=4u32 {
        let side = 1u32 << bits;
        let total = (side as usize).pow(3);
        let mut cells = vec![[0u32; 3]; total];
        let mut seen = vec![false; total];
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let h = hilbert_index_3d([x, y, z], bits) as usize;
                    assert!(h < total && !seen[h], "bits {bits}: collision at {h}");
                    seen[h] = true;
                    cells[h] = [x, y, z];
                }
            }
        }
        // Consecutive indices are grid neighbours.
        for w in cells.windows(2) {
            let d: u32 = (0..3).map(|k| w[0][k].abs_diff(w[1][k])).sum();
            assert_eq!(d, 1, "bits {bits}");
        }
    }
}

proptest! {
    #[test]
    fn orderings_are_bijective(seed in 0u64..100_000) {
        let t = corpus(seed, 1).remove(0);
        for s in [OrderStrategy::Zyx, OrderStrategy::Hilbert, OrderStrategy::Dfs, OrderStrategy::Bfs] {
            let p = order_tree(&t, s, DEFAULT_EPS_CONNECT).unwrap();
            prop_assert!(p.is_permutation() && p.order.len() == t.len());
            let applied = p.apply(&t);
            let mut a = applied.flat_values();
            let mut b = t.flat_values();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
