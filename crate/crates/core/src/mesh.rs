//! Tube tessellation of a skeleton and Wavefront OBJ text output.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tree::TreeSkeleton;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based vertex indices, counter-clockwise seen from outside.
    pub triangles: Vec<[usize; 3]>,
    /// Branches dropped for having zero length.
    pub skipped: usize,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// One open truncated cone per branch with `sides` segments: ring at `s`
/// (radius `s.r`) then ring at `t` (radius `t.r`), two triangles per segment.
pub fn export_mesh(tree: &TreeSkeleton, sides: usize) -> Result<TriMesh> {
    if sides < 3 {
        return Err(Error::InvalidParams(format!("mesh needs at least 3 sides, got {sides}")));
    }
    let mut m = TriMesh::default();
    for b in &tree.branches {
        let (s, t) = (b.s.pos(), b.t.pos());
        let axis = sub(t, s);
        if axis.iter().all(|&v| v == 0.0) {
            m.skipped += 1;
            continue;
        }
        let d = unit(axis);
        // Seed the frame with the world axis least aligned with the branch.
        let k = (0..3).min_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs())).expect("three axes");
        let mut e = [0.0; 3];
        e[k] = 1.0;
        let u = unit(cross(d, e));
        let v = cross(d, u);
        let base = m.vertices.len();
        for (c, r) in [(s, b.s.r), (t, b.t.r)] {
            for i in 0..sides {
                let a = std::f64::consts::TAU * i as f64 / sides as f64;
                let (sa, ca) = a.sin_cos();
                m.vertices.push(std::array::from_fn(|x| c[x] + r * (ca * u[x] + sa * v[x])));
            }
        }
        for i in 0..sides {
            let j = (i + 1) % sides;
            let (s0, s1, t0, t1) = (base + i, base + j, base + sides + i, base + sides + j);
            m.triangles.push([s0, s1, t1]);
            m.triangles.push([s0, t1, t0]);
        }
    }
    Ok(m)
}

impl TriMesh {
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(40 * (self.vertices.len() + self.triangles.len()));
        for p in &self.vertices {
            let _ = writeln!(out, "v {:.9} {:.9} {:.9}", p[0], p[1], p[2]);
        }
        for f in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Parses the subset of OBJ written by [`TriMesh::to_obj`].
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = || Error::Format(format!("obj line {}: {line:?}", ln + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.map(|x| x.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    m.vertices.push(c.try_into().map_err(|_| bad())?);
                }
                Some("f") => {
                    let c: Vec<usize> = it
                        .map(|x| x.parse::<usize>().ok().filter(|&i| i >= 1).map(|i| i - 1).ok_or_else(bad))
                        .collect::<Result<_>>()?;
                    m.triangles.push(c.try_into().map_err(|_| bad())?);
                }
                None => {}
                Some(_) if line.starts_with('#') => {}
                Some(_) => return Err(bad()),
            }
        }
        if m.triangles.iter().flatten().any(|&i| i >= m.vertices.len()) {
            return Err(Error::Format("obj face references a missing vertex".into()));
        }
        Ok(m)
    }
}
