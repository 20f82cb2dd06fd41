use super::{BranchPoint, TreeSkeleton};
use crate::error::{Error, Result};

/// Uniform scale plus translation: `p' = (p - center) * scale`, radii scaled
/// by the same factor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizationTransform {
    pub const IDENTITY: Self = Self {
        center: [0.0; 3],
        scale: 1.0,
    };

    /// Fits the bounding box of all endpoints into [-1, 1]^3, centered.
    pub fn fit(tree: &TreeSkeleton) -> Result<Self> {
        if tree.is_empty() {
            return Err(Error::InvalidParams("cannot normalize an empty tree".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in tree.endpoints() {
            for (k, v) in p.pos().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let half = (0..3).map(|k| (hi[k] - lo[k]) / 2.0).fold(0.0, f64::max);
        if !(half > 0.0) {
            return Err(Error::DegenerateGeometry(
                "all endpoints coincide; bounding box has zero extent".into(),
            ));
        }
        Ok(Self {
            center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0],
            scale: 1.0 / half,
        })
    }

    pub fn apply_point(&self, p: &BranchPoint) -> BranchPoint {
        BranchPoint {
            x: (p.x - self.center[0]) * self.scale,
            y: (p.y - self.center[1]) * self.scale,
            z: (p.z - self.center[2]) * self.scale,
            r: p.r * self.scale,
        }
    }

    pub fn invert_point(&self, p: &BranchPoint) -> BranchPoint {
        BranchPoint {
            x: p.x / self.scale + self.center[0],
            y: p.y / self.scale + self.center[1],
            z: p.z / self.scale + self.center[2],
            r: p.r / self.scale,
        }
    }

    pub fn apply(&self, tree: &TreeSkeleton) -> TreeSkeleton {
        self.map(tree, |p| self.apply_point(p))
    }

    pub fn invert(&self, tree: &TreeSkeleton) -> TreeSkeleton {
        self.map(tree, |p| self.invert_point(p))
    }

    fn map(&self, tree: &TreeSkeleton, f: impl Fn(&BranchPoint) -> BranchPoint) -> TreeSkeleton {
        let mut out = tree.clone();
        for b in &mut out.branches {
            b.s = f(&b.s);
            b.t = f(&b.t);
        }
        out
    }
}

/// Maps the tree into [-1, 1]^3 and returns the transform used.
pub fn normalize(tree: &TreeSkeleton) -> Result<(TreeSkeleton, NormalizationTransform)> {
    let tf = NormalizationTransform::fit(tree)?;
    Ok((tf.apply(tree), tf))
}

/// Rotation about the z axis by `theta_z`, preceded by the reflection
/// x -> -x when `mirror` is set. Radii are untouched.
pub fn augment_isometry(tree: &TreeSkeleton, theta_z: f64, mirror: bool) -> TreeSkeleton {
    let (s, c) = theta_z.sin_cos();
    let f = |p: &BranchPoint| {
        let x = if mirror { -p.x } else { p.x };
        BranchPoint {
            x: c * x - s * p.y,
            y: s * x + c * p.y,
            ..*p
        }
    };
    let mut out = tree.clone();
    for b in &mut out.branches {
        b.s = f(&b.s);
        b.t = f(&b.t);
    }
    out
}

/// Training-time augmentation. The result is re-normalized only when the
/// rotation pushed an endpoint outside [-1, 1]^3.
pub fn augment(tree: &TreeSkeleton, theta_z: f64, mirror: bool) -> TreeSkeleton {
    let out = augment_isometry(tree, theta_z, mirror);
    let outside = out
        .endpoints()
        .any(|p| p.pos().iter().any(|v| v.abs() > 1.0 + 1e-12));
    if outside {
        // bounding box is nonzero because the input was a valid tree
        normalize(&out).map(|(t, _)| t).unwrap_or(out)
    } else {
        out
    }
}
