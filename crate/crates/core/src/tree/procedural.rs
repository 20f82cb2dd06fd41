//! Stochastic recursive branching generator with radius decay and upward
//! tropism. Each branch gets a birth stage, so one generation run yields ten
//! nested growth snapshots.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Branch, BranchPoint, GrowthSequence, TreeSkeleton};
use crate::error::{Error, Result};

pub const GROWTH_STAGES: usize = 10;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProceduralParams {
    pub species: String,
    /// Inclusive range of recursion depth; depth 1 is a bare trunk.
    pub depth_min: u32,
    pub depth_max: u32,
    /// Inclusive range of children spawned by each non-terminal branch.
    pub children_min: u32,
    pub children_max: u32,
    pub trunk_length: f64,
    pub trunk_radius: f64,
    /// Child length relative to its parent, in (0, 1).
    pub length_decay: f64,
    /// Child base radius relative to the parent's tip radius, in (0, 1).
    pub radius_decay: f64,
    /// Tip radius relative to base radius along one branch, in (0, 1].
    pub taper: f64,
    /// Branching angle range in degrees.
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    /// Upward pull blended into every child direction, in [0, 1).
    pub tropism: f64,
    pub seed: u64,
}

impl Default for ProceduralParams {
    fn default() -> Self {
        Self::elm(0)
    }
}

impl ProceduralParams {
    /// Small broadleaf profile, capped at 200 branches.
    pub fn elm(seed: u64) -> Self {
        Self {
            species: "elm".into(),
            depth_min: 3,
            depth_max: 4,
            children_min: 2,
            children_max: 3,
            trunk_length: 1.0,
            trunk_radius: 0.08,
            length_decay: 0.72,
            radius_decay: 0.8,
            taper: 0.8,
            angle_min_deg: 25.0,
            angle_max_deg: 55.0,
            tropism: 0.25,
            seed,
        }
    }

    /// Denser conifer-like profile, capped at 1000 branches.
    pub fn pine(seed: u64) -> Self {
        Self {
            species: "pine".into(),
            depth_min: 4,
            depth_max: 6,
            children_min: 2,
            children_max: 4,
            trunk_length: 1.4,
            trunk_radius: 0.1,
            length_decay: 0.65,
            radius_decay: 0.75,
            taper: 0.85,
            angle_min_deg: 50.0,
            angle_max_deg: 80.0,
            tropism: 0.1,
            seed,
        }
    }

    /// A few branches per tree; used for quick experiments and tests.
    pub fn sapling(seed: u64) -> Self {
        Self {
            species: "sapling".into(),
            depth_min: 2,
            depth_max: 3,
            children_min: 1,
            children_max: 2,
            ..Self::elm(seed)
        }
    }

    /// Default branch cap for the species profile.
    pub fn default_n_max(&self) -> usize {
        match self.species.as_str() {
            "elm" | "sapling" => 200,
            _ => 1000,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.depth_min == 0 || self.depth_min > self.depth_max {
            return bad("depth range must satisfy 1 <= depth_min <= depth_max");
        }
        if self.children_min > self.children_max {
            return bad("children_min > children_max");
        }
        if self.depth_max > 16 || self.children_max > 16 {
            return bad("depth and children are bounded by 16");
        }
        if !(self.trunk_length > 0.0 && self.trunk_length.is_finite()) {
            return bad("trunk_length must be positive");
        }
        if !(self.trunk_radius > 0.0 && self.trunk_radius.is_finite()) {
            return bad("trunk_radius must be positive");
        }
        for (name, v) in [("length_decay", self.length_decay), ("radius_decay", self.radius_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParams(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.taper > 0.0 && self.taper <= 1.0) {
            return bad("taper must lie in (0, 1]");
        }
        if !(0.0..=180.0).contains(&self.angle_min_deg) || self.angle_min_deg > self.angle_max_deg
            || self.angle_max_deg > 180.0
        {
            return bad("angle range must satisfy 0 <= min <= max <= 180");
        }
        if !(0.0..1.0).contains(&self.tropism) {
            return bad("tropism must lie in [0, 1)");
        }
        Ok(())
    }
}

struct Node {
    branch: Branch,
    dir: [f64; 3],
    length: f64,
    depth: u32,
    birth: usize,
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Any unit vector orthogonal to `d`.
fn orthogonal(d: [f64; 3]) -> [f64; 3] {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    normalize3(cross(d, helper))
}

/// Radius growth factor for a branch that has existed for `age` stages.
fn age_factor(age: usize) -> f64 {
    0.25 + 0.75 * ((age + 1) as f64 / GROWTH_STAGES as f64)
}

/// Generates one tree with ten nested growth snapshots; the last stage has at
/// most `n_max` branches. Coordinates are in generator units (trunk base at
/// the origin); normalize before tokenizing.
pub fn generate_procedural(params: &ProceduralParams, n_max: usize) -> Result<GrowthSequence> {
    params.validate()?;
    if n_max == 0 {
        return Err(Error::InvalidParams("n_max must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let max_depth = rng.random_range(params.depth_min..=params.depth_max);
    let stage_span = GROWTH_STAGES as f64 / max_depth as f64;

    let trunk_dir = normalize3([rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), 1.0]);
    let trunk_len = params.trunk_length * rng.random_range(0.85..1.15);
    let root = BranchPoint::new(0.0, 0.0, 0.0, params.trunk_radius);
    let tip = BranchPoint::new(
        trunk_dir[0] * trunk_len,
        trunk_dir[1] * trunk_len,
        trunk_dir[2] * trunk_len,
        params.trunk_radius * params.taper,
    );
    let min_len = 0.08 * trunk_len;

    let mut nodes = vec![Node {
        branch: Branch { s: root, t: tip },
        dir: trunk_dir,
        length: trunk_len,
        depth: 1,
        birth: 0,
    }];
    // breadth-first expansion so the n_max cap prunes whole outer layers
    let mut frontier = VecDeque::from([0usize]);
    'grow: while let Some(pi) = frontier.pop_front() {
        if nodes[pi].depth >= max_depth {
            continue;
        }
        let n_children = rng.random_range(params.children_min..=params.children_max);
        let azimuth0 = rng.random_range(0.0..2.0 * PI);
        for ci in 0..n_children {
            if nodes.len() >= n_max {
                break 'grow;
            }
            let parent = &nodes[pi];
            let mut angle = rng
                .random_range(params.angle_min_deg..=params.angle_max_deg)
                .to_radians();
            if ci == 0 {
                // leader continues roughly along the parent
                angle *= 0.35;
            }
            let azimuth = azimuth0 + ci as f64 * GOLDEN_ANGLE + rng.random_range(-0.3..0.3);
            let u = orthogonal(parent.dir);
            let v = cross(parent.dir, u);
            let (sa, ca) = angle.sin_cos();
            let (sz, cz) = azimuth.sin_cos();
            let mut dir = [0.0; 3];
            for k in 0..3 {
                dir[k] = ca * parent.dir[k] + sa * (cz * u[k] + sz * v[k]);
            }
            dir[2] += params.tropism;
            let dir = normalize3(dir);
            let length = (parent.length * params.length_decay * rng.random_range(0.8..1.2)).max(min_len);
            let s = parent.branch.t;
            let r_s = s.r * params.radius_decay;
            let t = BranchPoint::new(
                s.x + dir[0] * length,
                s.y + dir[1] * length,
                s.z + dir[2] * length,
                r_s * params.taper,
            );
            let depth = parent.depth + 1;
            let jitter: f64 = rng.random_range(0.0..1.0);
            let birth = (((depth - 1) as f64 + jitter) * stage_span).floor() as usize;
            let birth = birth.clamp(parent.birth, GROWTH_STAGES - 1);
            nodes.push(Node {
                branch: Branch {
                    s: BranchPoint { r: r_s, ..s },
                    t,
                },
                dir,
                length,
                depth,
                birth,
            });
            frontier.push_back(nodes.len() - 1);
        }
    }

    let stages = (0..GROWTH_STAGES)
        .map(|k| {
            let branches = nodes
                .iter()
                .filter(|n| n.birth <= k)
                .map(|n| {
                    let f = age_factor(k - n.birth);
                    let mut b = n.branch;
                    b.s.r *= f;
                    b.t.r *= f;
                    b
                })
                .collect();
            TreeSkeleton::new(branches).with_species(params.species.clone())
        })
        .collect();
    GrowthSequence::new(stages)
}

/// Final-stage trees for seeds `first_seed..first_seed + count`.
pub fn generate_corpus(
    params: &ProceduralParams,
    first_seed: u64,
    count: usize,
    n_max: usize,
) -> Result<Vec<TreeSkeleton>> {
    (0..count as u64)
        .map(|i| {
            let p = params.clone().with_seed(first_seed + i);
            generate_procedural(&p, n_max).map(|g| g.final_stage().clone())
        })
        .collect()
}
