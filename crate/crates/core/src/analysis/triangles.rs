use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Triple};
use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::RelationGeometry;

/// Entity triples `(x, y, z)` with `(x, r1, y)`, `(y, r2, z)` and `(x, r3, z)` all in
/// the training split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleSet {
    pub relations: (u32, u32, u32),
    /// Sorted, without duplicates.
    pub triangles: Vec<(u32, u32, u32)>,
}

impl TriangleSet {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Distinct heads `x`, ascending.
    pub fn heads(&self) -> Vec<u32> {
        self.triangles
            .iter()
            .map(|t| t.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// True when every triangle is backed by three training triples.
    pub fn verify(&self, ds: &Dataset) -> bool {
        let train: HashSet<&Triple> = ds.train.iter().collect();
        let (r1, r2, r3) = self.relations;
        self.triangles.iter().all(|&(x, y, z)| {
            train.contains(&Triple::new(x, r1, y))
                && train.contains(&Triple::new(y, r2, z))
                && train.contains(&Triple::new(x, r3, z))
        })
    }
}

/// Joins the `r1` and `r2` adjacency lists on the shared entity and keeps the
/// endpoints linked by `r3`.
pub fn mine_triangles(ds: &Dataset, r1: u32, r2: u32, r3: u32) -> TriangleSet {
    let mut out_r2: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut r1_pairs = BTreeSet::new();
    let mut r3_pairs = HashSet::new();
    for t in &ds.train {
        if t.relation == r1 {
            r1_pairs.insert((t.head, t.tail));
        }
        if t.relation == r2 {
            out_r2.entry(t.head).or_default().push(t.tail);
        }
        if t.relation == r3 {
            r3_pairs.insert((t.head, t.tail));
        }
    }
    let mut found = BTreeSet::new();
    for &(x, y) in &r1_pairs {
        if let Some(zs) = out_r2.get(&y) {
            for &z in zs {
                if r3_pairs.contains(&(x, z)) {
                    found.insert((x, y, z));
                }
            }
        }
    }
    TriangleSet {
        relations: (r1, r2, r3),
        triangles: found.into_iter().collect(),
    }
}

/// Polar-angle differences between `r1`'s rotation axes and the head entities'
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignment {
    /// `(head, unit index, θ(axis) − θ(entity unit))`.
    pub entries: Vec<(u32, usize, f64)>,
    pub skipped_zero_units: usize,
    pub skipped_degenerate_axes: usize,
}

impl AxisAlignment {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.2).collect()
    }
}

/// Below this norm an entity unit has no direction.
pub const ENTITY_UNIT_EPSILON: f64 = 1e-12;

pub fn entity_axis_alignment(
    params: &ModelParams,
    geometry: &RelationGeometry,
    triangles: &TriangleSet,
) -> Result<AxisAlignment> {
    if triangles.is_empty() {
        return Err(Error::EmptyData("no triangles to align".into()));
    }
    if geometry.k() != params.k() {
        return Err(Error::Shape(format!(
            "geometry has {} units, model has {}",
            geometry.k(),
            params.k()
        )));
    }
    let mut out = AxisAlignment {
        entries: Vec::new(),
        skipped_zero_units: 0,
        skipped_degenerate_axes: 0,
    };
    for x in triangles.heads() {
        params.check_entity(x)?;
        for i in 0..params.k() {
            if geometry.degenerate[i] {
                out.skipped_degenerate_axes += 1;
                continue;
            }
            let w = params.entity_unit(x, i);
            let n = w.norm();
            if n < ENTITY_UNIT_EPSILON {
                out.skipped_zero_units += 1;
                continue;
            }
            let theta = (w.z / n).clamp(-1.0, 1.0).acos();
            out.entries.push((x, i, geometry.theta[i] - theta));
        }
    }
    if out.entries.is_empty() {
        log::warn!(
            "entity/axis alignment is empty ({} zero units, {} undefined axes)",
            out.skipped_zero_units,
            out.skipped_degenerate_axes
        );
    }
    Ok(out)
}
