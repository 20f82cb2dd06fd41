//! Geometric evaluation of generated tree sets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Channel, Quantizer, VALUE_BINS};
use crate::tree::{sample_point_cloud, Point3, TreeSkeleton, DEFAULT_EPS_CONNECT};

pub const DEFAULT_JSD_GRID: usize = 32;
pub const DEFAULT_EVAL_POINTS: usize = 512;

fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn mean_nearest(a: &[Point3], b: &[Point3]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Symmetric Chamfer distance with squared nearest-neighbour distances.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParams("chamfer distance of an empty point set".into()));
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// One cloud per tree, seeded by `seed + index`.
pub fn sample_clouds(trees: &[TreeSkeleton], n_points: usize, seed: u64) -> Vec<Vec<Point3>> {
    trees
        .iter()
        .enumerate()
        .map(|(i, t)| sample_point_cloud(t, n_points, seed.wrapping_add(i as u64)))
        .collect()
}

/// `d[i][j] = chamfer(a[i], b[j])`.
pub fn chamfer_matrix(a: &[Vec<Point3>], b: &[Vec<Point3>]) -> Result<Vec<Vec<f64>>> {
    a.iter().map(|x| b.iter().map(|y| chamfer(x, y)).collect()).collect()
}

/// MMD-CD (mean over references of the closest generated distance) and
/// COV-CD (fraction of references that are some generated cloud's nearest).
pub fn mmd_cov(gen: &[Vec<Point3>], reference: &[Vec<Point3>]) -> Result<(f64, f64)> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::InvalidParams("mmd/cov need nonempty sets".into()));
    }
    let d = chamfer_matrix(gen, reference)?;
    let mmd = (0..reference.len())
        .map(|r| d.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / reference.len() as f64;
    let mut covered = vec![false; reference.len()];
    for row in &d {
        let best = (0..row.len()).min_by(|&i, &j| row[i].total_cmp(&row[j])).expect("nonempty");
        covered[best] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 / reference.len() as f64;
    Ok((mmd, cov))
}

/// Normalized occupancy histogram over a `grid^3` partition of [-1, 1]^3;
/// points outside are clamped to the border cells.
pub fn occupancy(clouds: &[Vec<Point3>], grid: usize) -> Vec<f64> {
    let mut h = vec![0.0; grid * grid * grid];
    let cell = |v: f64| (((v + 1.0) / 2.0 * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    let mut n = 0.0;
    for p in clouds.iter().flatten() {
        h[(cell(p[0]) * grid + cell(p[1])) * grid + cell(p[2])] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        h.iter_mut().for_each(|v| *v /= n);
    }
    h
}

/// Jensen-Shannon divergence (natural log) of two distributions.
pub fn jsd_hist(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * kl(a, m) + 0.5 * kl(b, m)
        })
        .sum::<f64>()
        .max(0.0)
}

/// JSD between pooled occupancy histograms of two cloud sets.
pub fn jsd(gen: &[Vec<Point3>], reference: &[Vec<Point3>], grid: usize) -> f64 {
    jsd_hist(&occupancy(gen, grid), &occupancy(reference, grid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectScore {
    pub score: f64,
    pub empty: bool,
}

/// Default connection tolerance: the widest coordinate bin's diagonal plus
/// the graph tolerance.
pub fn default_connect_eps(q: &Quantizer) -> f64 {
    let w = (0..VALUE_BINS).map(|k| q.bin_width(Channel::Coord, k)).fold(0.0, f64::max);
    w * 3f64.sqrt() + DEFAULT_EPS_CONNECT
}

/// Fraction of non-root branches (in stored order) whose start lies within
/// `eps` of an earlier branch's end.
pub fn connect_score(tree: &TreeSkeleton, eps: f64) -> ConnectScore {
    let n = tree.len();
    if n == 0 {
        return ConnectScore { score: 0.0, empty: true };
    }
    if n == 1 {
        return ConnectScore { score: 1.0, empty: false };
    }
    let eps2 = eps * eps;
    let b = &tree.branches;
    let connected = (1..n)
        .filter(|&i| b[..i].iter().any(|e| sq_dist(&b[i].s.pos(), &e.t.pos()) <= eps2))
        .count();
    ConnectScore { score: connected as f64 / (n - 1) as f64, empty: false }
}

/// 1st percentile of each training cloud's nearest Chamfer distance to the
/// other training clouds.
pub fn default_delta(train: &[Vec<Point3>]) -> Result<f64> {
    if train.len() < 2 {
        return Err(Error::InvalidParams("need at least two training clouds for delta".into()));
    }
    let d = chamfer_matrix(train, train)?;
    let mut nearest: Vec<f64> = (0..train.len())
        .map(|i| (0..train.len()).filter(|&j| j != i).map(|j| d[i][j]).fold(f64::INFINITY, f64::min))
        .collect();
    nearest.sort_by(f64::total_cmp);
    let idx = ((nearest.len() - 1) as f64 * 0.01).round() as usize;
    Ok(nearest[idx])
}

/// `novel`: fraction of generated clouds farther than `delta` from every
/// training cloud. `unique`: number of representatives kept by a greedy pass
/// (a cloud is kept if farther than `delta` from all kept ones) over the
/// generated count, so an all-identical set scores `1 / n`.
pub fn novelty_uniqueness(gen: &[Vec<Point3>], train: &[Vec<Point3>], delta: f64) -> Result<(f64, f64)> {
    if gen.is_empty() || train.is_empty() {
        return Err(Error::InvalidParams("novelty needs nonempty sets".into()));
    }
    let mut novel = 0;
    for g in gen {
        let mut min = f64::INFINITY;
        for t in train {
            min = min.min(chamfer(g, t)?);
        }
        if min > delta {
            novel += 1;
        }
    }
    let mut reps: Vec<&Vec<Point3>> = Vec::new();
    for g in gen {
        let mut far = true;
        for r in &reps {
            if chamfer(g, r)? <= delta {
                far = false;
                break;
            }
        }
        if far {
            reps.push(g);
        }
    }
    let n = gen.len() as f64;
    Ok((novel as f64 / n, reps.len() as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub connect: f64,
    pub novel: f64,
    pub unique: f64,
    pub mmd_cd: f64,
    pub cov_cd: f64,
    pub jsd: f64,
    pub mean_nll: Option<f64>,
    pub exp_mean_nll: Option<f64>,
    pub n_generated: usize,
    pub n_reference: usize,
    pub n_train: usize,
    pub empty_generated: usize,
    pub connect_eps: f64,
    pub delta: f64,
    pub jsd_grid: usize,
    pub points_per_tree: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub points_per_tree: usize,
    pub jsd_grid: usize,
    pub connect_eps: f64,
    /// Novelty threshold; derived from the training set when absent.
    pub delta: Option<f64>,
    pub seed: u64,
}

/// Full report for a generated set against reference and training sets.
pub fn evaluate(
    gen: &[TreeSkeleton],
    reference: &[TreeSkeleton],
    train: &[TreeSkeleton],
    s: &EvalSettings,
) -> Result<EvalReport> {
    let nonempty: Vec<TreeSkeleton> = gen.iter().filter(|t| !t.is_empty()).cloned().collect();
    let empty = gen.len() - nonempty.len();
    let connect = if gen.is_empty() {
        0.0
    } else {
        gen.iter().map(|t| connect_score(t, s.connect_eps).score).sum::<f64>() / gen.len() as f64
    };
    let gen_c = sample_clouds(&nonempty, s.points_per_tree, s.seed);
    let ref_c = sample_clouds(reference, s.points_per_tree, s.seed.wrapping_add(1 << 32));
    let train_c = sample_clouds(train, s.points_per_tree, s.seed.wrapping_add(2 << 32));
    let delta = match s.delta {
        Some(d) => d,
        None => default_delta(&train_c)?,
    };
    let (mmd_cd, cov_cd) = mmd_cov(&gen_c, &ref_c)?;
    let (novel, unique) = novelty_uniqueness(&gen_c, &train_c, delta)?;
    Ok(EvalReport {
        connect,
        novel,
        unique,
        mmd_cd,
        cov_cd,
        jsd: jsd(&gen_c, &ref_c, s.jsd_grid),
        mean_nll: None,
        exp_mean_nll: None,
        n_generated: gen.len(),
        n_reference: reference.len(),
        n_train: train.len(),
        empty_generated: empty,
        connect_eps: s.connect_eps,
        delta,
        jsd_grid: s.jsd_grid,
        points_per_tree: s.points_per_tree,
        seed: s.seed,
    })
}

impl EvalReport {
    fn fields(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        vec![
            ("connect", format!("{:.6}", self.connect)),
            ("novel", format!("{:.6}", self.novel)),
            ("unique", format!("{:.6}", self.unique)),
            ("mmd_cd", format!("{:.6e}", self.mmd_cd)),
            ("cov_cd", format!("{:.6}", self.cov_cd)),
            ("jsd", format!("{:.6}", self.jsd)),
            ("mean_nll", opt(self.mean_nll)),
            ("exp_mean_nll", opt(self.exp_mean_nll)),
            ("n_generated", self.n_generated.to_string()),
            ("n_reference", self.n_reference.to_string()),
            ("n_train", self.n_train.to_string()),
            ("empty_generated", self.empty_generated.to_string()),
            ("connect_eps", format!("{:.6e}", self.connect_eps)),
            ("delta", format!("{:.6e}", self.delta)),
            ("jsd_grid", self.jsd_grid.to_string()),
            ("points_per_tree", self.points_per_tree.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Header line plus one value line.
    pub fn to_csv(&self) -> String {
        let f = self.fields();
        let head: Vec<&str> = f.iter().map(|(k, _)| *k).collect();
        let vals: Vec<&str> = f.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", head.join(","), vals.join(","))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.fields() {
            writeln!(f, "{k:>16}  {v}")?;
        }
        Ok(())
    }
}
