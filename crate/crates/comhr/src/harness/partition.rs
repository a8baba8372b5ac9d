//! Subgroup partitioning: hypergraph reasoning runs over at most
//! `max_n` persons per pass, keeping total cost linear in crowd size.

use crate::nodeinit::{pelvis_depth, EncoderConfig};
use crate::scenegen::Scene;

pub const DEFAULT_MAX_SUBGROUP: usize = 8;

/// Indices of one reasoning pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgroup {
    pub persons: Vec<usize>,
}

/// Splits a scene into depth-ordered subgroups of at most `max_n` persons.
///
/// Persons are sorted by anchor depth (nearest first), then crop center x,
/// then id, and chunked greedily, so each pass reasons over people at
/// similar depths.
pub fn partition_subgroups(scene: &Scene, cfg: &EncoderConfig, max_n: usize) -> Vec<Subgroup> {
    assert!(max_n > 0);
    let mut keyed: Vec<(f64, f64, usize)> = scene
        .persons
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (tz, _) = pelvis_depth(&p.joints2d, &p.depth_patch, &p.bbox, cfg);
            (tz + p.tz_bias, p.bbox.cx, i)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0
            .total_cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    keyed
        .chunks(max_n)
        .map(|chunk| Subgroup {
            persons: chunk.iter().map(|&(_, _, i)| i).collect(),
        })
        .collect()
}
