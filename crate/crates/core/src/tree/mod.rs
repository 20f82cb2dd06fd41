//! Continuous tree representation: branch endpoints with radii, the
//! parent/child graph over branches, procedural corpus generation and the
//! geometric transforms used for normalization and augmentation.

mod dataset;
mod graph;
mod pointcloud;
mod procedural;
mod transform;

pub use dataset::{
    read_growth_dataset, read_tree_dataset, write_growth_dataset, write_tree_dataset, GrowthRecord,
    StageRecord, TreeRecord,
};
pub use graph::{build_tree_graph, TreeGraph, DEFAULT_EPS_CONNECT};
pub use pointcloud::{sample_point_cloud, Point3};
pub use procedural::{generate_procedural, generate_corpus, ProceduralParams, GROWTH_STAGES};
pub use transform::{augment, augment_isometry, normalize, NormalizationTransform};

use crate::error::{Error, Result};

/// One branch endpoint: position plus the branch radius at that point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

impl BranchPoint {
    pub const fn new(x: f64, y: f64, z: f64, r: f64) -> Self {
        Self { x, y, z, r }
    }

    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dist(&self, other: &BranchPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// A tapered cylinder from the proximal endpoint `s` to the distal endpoint `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub s: BranchPoint,
    pub t: BranchPoint,
}

impl Branch {
    /// Checked constructor: nonzero length and positive radii.
    pub fn new(s: BranchPoint, t: BranchPoint) -> Result<Self> {
        let b = Self { s, t };
        b.validate()?;
        Ok(b)
    }

    pub fn length(&self) -> f64 {
        self.s.dist(&self.t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length() > 0.0) {
            return Err(Error::DegenerateGeometry("zero-length branch".into()));
        }
        if !(self.s.r > 0.0 && self.t.r > 0.0) {
            return Err(Error::DegenerateGeometry("non-positive branch radius".into()));
        }
        Ok(())
    }

    /// The eight scalar channels in token order: s.x s.y s.z s.r t.x t.y t.z t.r.
    pub fn to_values(&self) -> [f64; 8] {
        [
            self.s.x, self.s.y, self.s.z, self.s.r, self.t.x, self.t.y, self.t.z, self.t.r,
        ]
    }

    pub fn from_values(v: &[f64; 8]) -> Self {
        Self {
            s: BranchPoint::new(v[0], v[1], v[2], v[3]),
            t: BranchPoint::new(v[4], v[5], v[6], v[7]),
        }
    }
}

/// An unordered set of branches. Storage order carries no meaning; token
/// orderings are applied as explicit permutations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TreeSkeleton {
    pub branches: Vec<Branch>,
    pub species: Option<String>,
}

impl TreeSkeleton {
    pub fn new(branches: Vec<Branch>) -> Self {
        Self {
            branches,
            species: None,
        }
    }

    pub fn with_species(mut self, tag: impl Into<String>) -> Self {
        self.species = Some(tag.into());
        self
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Checks the branch-count bound and per-branch validity.
    pub fn validate(&self, n_max: usize) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::InvalidParams("tree has no branches".into()));
        }
        if self.branches.len() > n_max {
            return Err(Error::Capacity(format!(
                "{} branches exceeds n_max = {n_max}",
                self.branches.len()
            )));
        }
        self.branches.iter().try_for_each(Branch::validate)
    }

    /// All 2n endpoints, s then t per branch.
    pub fn endpoints(&self) -> impl Iterator<Item = &BranchPoint> {
        self.branches.iter().flat_map(|b| [&b.s, &b.t])
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.branches.iter().flat_map(|b| b.to_values()).collect()
    }

    pub fn from_flat_values(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(8) {
            return Err(Error::Format(format!(
                "flat branch array has {} values, not a multiple of 8",
                values.len()
            )));
        }
        let branches = values
            .chunks_exact(8)
            .map(|c| Branch::from_values(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self::new(branches))
    }
}

/// Ten chronological snapshots of one growing tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSequence {
    pub stages: Vec<TreeSkeleton>,
}

impl GrowthSequence {
    pub fn new(stages: Vec<TreeSkeleton>) -> Result<Self> {
        if stages.len() != GROWTH_STAGES {
            return Err(Error::InvalidParams(format!(
                "growth sequence needs {GROWTH_STAGES} stages, got {}",
                stages.len()
            )));
        }
        Ok(Self { stages })
    }

    pub fn final_stage(&self) -> &TreeSkeleton {
        self.stages.last().expect("ten stages")
    }

    /// Branch counts never decrease from one stage to the next.
    pub fn is_monotone(&self) -> bool {
        self.stages.windows(2).all(|w| w[0].len() <= w[1].len())
    }

    /// Every branch of stage k reappears in stage k+1 with identical
    /// endpoints and a radius at least as large.
    pub fn is_nested(&self) -> bool {
        self.stages.windows(2).all(|w| {
            w[0].branches.iter().all(|a| {
                w[1].branches.iter().any(|b| {
                    a.s.pos() == b.s.pos()
                        && a.t.pos() == b.t.pos()
                        && b.s.r >= a.s.r
                        && b.t.r >= a.t.r
                })
            })
        })
    }
}
