//! Line-delimited JSON datasets, one tree (or one growth sequence) per line.
//!
//! Static record: `{"species": "elm", "n": 2, "values": [16 numbers]}` where
//! `values` holds `s.x s.y s.z s.r t.x t.y t.z t.r` per branch.
//!
//! Growth record: `{"species": "elm", "stages": [{"stage": 0, "n": 1,
//! "values": [...]}, ...]}` with ten stages in chronological order.
//!
//! Numbers are written with shortest round-trip formatting, which is exact.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GrowthSequence, TreeSkeleton};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeRecord {
    pub species: Option<String>,
    pub n: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub species: Option<String>,
    pub stages: Vec<StageRecord>,
}

impl From<&TreeSkeleton> for TreeRecord {
    fn from(t: &TreeSkeleton) -> Self {
        Self {
            species: t.species.clone(),
            n: t.len(),
            values: t.flat_values(),
        }
    }
}

impl TryFrom<TreeRecord> for TreeSkeleton {
    type Error = Error;

    fn try_from(r: TreeRecord) -> Result<Self> {
        if r.values.len() != 8 * r.n {
            return Err(Error::Format(format!(
                "record declares n = {} but carries {} values",
                r.n,
                r.values.len()
            )));
        }
        let mut t = TreeSkeleton::from_flat_values(&r.values)?;
        t.species = r.species;
        Ok(t)
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::Format(e.to_string()))?;
        buf.write_all(b"\n")?;
    }
    write_atomic(path, &buf)
}

pub fn write_tree_dataset(path: &Path, trees: &[TreeSkeleton]) -> Result<()> {
    let recs: Vec<TreeRecord> = trees.iter().map(TreeRecord::from).collect();
    write_lines(path, &recs)
}

pub fn read_tree_dataset(path: &Path) -> Result<Vec<TreeSkeleton>> {
    read_lines::<TreeRecord>(path)?
        .into_iter()
        .map(TreeSkeleton::try_from)
        .collect()
}

pub fn write_growth_dataset(path: &Path, seqs: &[GrowthSequence]) -> Result<()> {
    let recs: Vec<GrowthRecord> = seqs
        .iter()
        .map(|g| GrowthRecord {
            species: g.final_stage().species.clone(),
            stages: g
                .stages
                .iter()
                .enumerate()
                .map(|(k, s)| StageRecord {
                    stage: k,
                    n: s.len(),
                    values: s.flat_values(),
                })
                .collect(),
        })
        .collect();
    write_lines(path, &recs)
}

pub fn read_growth_dataset(path: &Path) -> Result<Vec<GrowthSequence>> {
    read_lines::<GrowthRecord>(path)?
        .into_iter()
        .map(|mut r| {
            r.stages.sort_by_key(|s| s.stage);
            let stages = r
                .stages
                .into_iter()
                .map(|s| {
                    TreeSkeleton::try_from(TreeRecord {
                        species: r.species.clone(),
                        n: s.n,
                        values: s.values,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            GrowthSequence::new(stages)
        })
        .collect()
}
