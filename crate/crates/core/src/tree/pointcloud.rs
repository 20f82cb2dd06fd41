use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Branch, TreeSkeleton};

pub type Point3 = [f64; 3];

/// Lateral surface area of the truncated cone spanned by a branch.
fn lateral_area(b: &Branch) -> f64 {
    let h = b.length();
    let dr = b.s.r - b.t.r;
    std::f64::consts::PI * (b.s.r + b.t.r) * (h * h + dr * dr).sqrt()
}

/// Draws `n_points` points uniformly by area over the union of branch
/// surfaces (open truncated cones). Branches with zero area are never hit.
pub fn sample_point_cloud(tree: &TreeSkeleton, n_points: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(tree.len());
    let mut total = 0.0;
    for b in &tree.branches {
        total += lateral_area(b);
        cumulative.push(total);
    }
    if tree.is_empty() || !(total > 0.0) {
        return Vec::new();
    }
    (0..n_points)
        .map(|_| {
            let a = rng.random_range(0.0..total);
            let bi = cumulative.partition_point(|&c| c <= a).min(tree.len() - 1);
            sample_on_branch(&tree.branches[bi], &mut rng)
        })
        .collect()
}

fn sample_on_branch(b: &Branch, rng: &mut impl Rng) -> Point3 {
    let (r0, r1) = (b.s.r, b.t.r);
    // area density along the axis is proportional to r(u) = r0 + (r1 - r0) u
    let w: f64 = rng.random_range(0.0..1.0);
    let dr = r1 - r0;
    let u = if dr.abs() < 1e-12 * r0.max(r1) {
        w
    } else {
        let target = w * (r0 + r1) / 2.0;
        ((-r0 + (r0 * r0 + 2.0 * dr * target).sqrt()) / dr).clamp(0.0, 1.0)
    };
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = b.s.pos();
    let t = b.t.pos();
    let len = b.length();
    let d = [(t[0] - s[0]) / len, (t[1] - s[1]) / len, (t[2] - s[2]) / len];
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut e1 = [
        d[1] * helper[2] - d[2] * helper[1],
        d[2] * helper[0] - d[0] * helper[2],
        d[0] * helper[1] - d[1] * helper[0],
    ];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|v| *v /= n1);
    let e2 = [
        d[1] * e1[2] - d[2] * e1[1],
        d[2] * e1[0] - d[0] * e1[2],
        d[0] * e1[1] - d[1] * e1[0],
    ];
    let r = r0 + dr * u;
    let (sp, cp) = phi.sin_cos();
    std::array::from_fn(|k| s[k] + (t[k] - s[k]) * u + r * (cp * e1[k] + sp * e2[k]))
}
