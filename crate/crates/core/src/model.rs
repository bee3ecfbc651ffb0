//! Embedding tables, initialization and the score function.
//!
//! Entity `e` owns `k` units of [`Vec3`], stored as `3k` contiguous reals. Relation
//! `r` owns `k` quaternion units, stored as `4k` contiguous reals. The score of
//! `(h, r, t)` is
//!
//! ```text
//! f = −½ (‖O(r)h − t‖ + ‖O(r)⁻¹t − h‖)
//! ```
//!
//! with both norms taken over the full `3k`-dimensional concatenation.

use rand::Rng;

use crate::dataio::Side;
use crate::error::{Error, Result};
use crate::rot3::{quadratic_form, Mat3, Quaternion, Vec3};

/// Minimum per-unit relation norm, re-applied after initialization and every update.
pub const RELATION_NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    num_entities: usize,
    num_relations: usize,
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
    /// Relation units are projected to unit norm in the forward pass (no scaling).
    pub rotation_only: bool,
    /// The relation table holds `2R` rows: base relations then their reversed copies.
    pub reciprocal: bool,
}

impl ModelParams {
    /// All-zero entity table and identity relation units.
    pub fn zeros(num_entities: usize, num_relations: usize, k: usize) -> Self {
        let mut relations = vec![0.0; num_relations * k * 4];
        relations.chunks_exact_mut(4).for_each(|u| u[0] = 1.0);
        Self {
            k,
            num_entities,
            num_relations,
            entities: vec![0.0; num_entities * k * 3],
            relations,
            rotation_only: false,
            reciprocal: false,
        }
    }

    pub fn from_tables(
        k: usize,
        num_entities: usize,
        num_relations: usize,
        entities: Vec<f64>,
        relations: Vec<f64>,
    ) -> Result<Self> {
        if entities.len() != num_entities * k * 3 || relations.len() != num_relations * k * 4 {
            return Err(Error::Shape(format!(
                "tables of length {}/{} do not match E={num_entities}, R={num_relations}, k={k}",
                entities.len(),
                relations.len()
            )));
        }
        Ok(Self {
            k,
            num_entities,
            num_relations,
            entities,
            relations,
            rotation_only: false,
            reciprocal: false,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// `E·3k + R′·4k`.
    pub fn num_parameters(&self) -> usize {
        self.entities.len() + self.relations.len()
    }

    pub fn entity(&self, e: u32) -> &[f64] {
        let w = 3 * self.k;
        &self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn entity_mut(&mut self, e: u32) -> &mut [f64] {
        let w = 3 * self.k;
        &mut self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation(&self, r: u32) -> &[f64] {
        let w = 4 * self.k;
        &self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn relation_mut(&mut self, r: u32) -> &mut [f64] {
        let w = 4 * self.k;
        &mut self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn entity_unit(&self, e: u32, i: usize) -> Vec3 {
        Vec3::from_slice(&self.entity(e)[3 * i..3 * i + 3])
    }

    pub fn relation_unit(&self, r: u32, i: usize) -> Quaternion {
        Quaternion::from_slice(&self.relation(r)[4 * i..4 * i + 4])
    }

    pub fn set_entity_unit(&mut self, e: u32, i: usize, w: Vec3) {
        self.entity_mut(e)[3 * i..3 * i + 3].copy_from_slice(&w.to_array());
    }

    pub fn set_relation_unit(&mut self, r: u32, i: usize, q: Quaternion) {
        self.relation_mut(r)[4 * i..4 * i + 4].copy_from_slice(&q.to_array());
    }

    pub fn check_entity(&self, e: u32) -> Result<()> {
        if (e as usize) < self.num_entities {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: "entity",
                index: e as usize,
                size: self.num_entities,
            })
        }
    }

    pub fn check_relation(&self, r: u32) -> Result<()> {
        if (r as usize) < self.num_relations {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: "relation",
                index: r as usize,
                size: self.num_relations,
            })
        }
    }

    /// Raises every relation unit of `r` to at least [`RELATION_NORM_FLOOR`].
    pub fn floor_relation(&mut self, r: u32) {
        for unit in self.relation_mut(r).chunks_exact_mut(4) {
            floor_unit(unit);
        }
    }

    pub fn floor_all_relations(&mut self) {
        for unit in self.relations.chunks_exact_mut(4) {
            floor_unit(unit);
        }
    }

    /// Operator for relation `r` as used in the forward pass.
    pub fn operator(&self, r: u32) -> Result<RelationOperator> {
        self.check_relation(r)?;
        RelationOperator::new(self.relation(r), self.rotation_only)
    }
}

fn floor_unit(unit: &mut [f64]) {
    let n = unit.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n >= RELATION_NORM_FLOOR {
        return;
    }
    if n == 0.0 || !n.is_finite() {
        unit.copy_from_slice(&[RELATION_NORM_FLOOR, 0.0, 0.0, 0.0]);
    } else {
        let s = RELATION_NORM_FLOOR / n;
        unit.iter_mut().for_each(|v| *v *= s);
    }
}

/// Uniform initialization on `[−1/√(2k), 1/√(2k)]`.
pub fn init_params<R: Rng + ?Sized>(
    num_entities: usize,
    num_relations: usize,
    k: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    if num_entities == 0 || num_relations == 0 || k == 0 {
        return Err(Error::Config(format!(
            "model sizes must be positive (E={num_entities}, R={num_relations}, k={k})"
        )));
    }
    let bound = init_bound(k);
    let mut p = ModelParams::zeros(num_entities, num_relations, k);
    p.entities
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-bound..=bound));
    p.relations
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-bound..=bound));
    p.floor_all_relations();
    Ok(p)
}

pub fn init_bound(k: usize) -> f64 {
    1.0 / ((2 * k) as f64).sqrt()
}

/// Per-unit forward and inverse matrices of one relation.
///
/// For the effective unit `e` (the stored unit, or its normalization when scaling
/// is disabled) the forward matrix is `M(e)/|e|` and the inverse pass applies
/// `M(e)ᵀ/|e|³`, where `M` is [`quadratic_form`].
#[derive(Debug, Clone)]
pub struct RelationOperator {
    pub(crate) raw: Vec<Quaternion>,
    pub(crate) units: Vec<Quaternion>,
    pub(crate) quad: Vec<Mat3>,
    pub(crate) forward: Vec<Mat3>,
    pub(crate) inverse: Vec<Mat3>,
    pub(crate) norms: Vec<f64>,
    pub(crate) rotation_only: bool,
}

impl RelationOperator {
    pub fn new(relation: &[f64], rotation_only: bool) -> Result<Self> {
        let k = relation.len() / 4;
        let mut op = Self {
            raw: Vec::with_capacity(k),
            units: Vec::with_capacity(k),
            quad: Vec::with_capacity(k),
            forward: Vec::with_capacity(k),
            inverse: Vec::with_capacity(k),
            norms: Vec::with_capacity(k),
            rotation_only,
        };
        for chunk in relation.chunks_exact(4) {
            let raw = Quaternion::from_slice(chunk);
            let raw_norm = raw.norm();
            if raw_norm == 0.0 {
                return Err(Error::InvalidOperator);
            }
            let unit = if rotation_only {
                raw.scaled(1.0 / raw_norm)
            } else {
                raw
            };
            let n = unit.norm();
            let m = quadratic_form(unit);
            op.raw.push(raw);
            op.units.push(unit);
            op.quad.push(m);
            op.forward.push(m.scaled(1.0 / n));
            op.inverse.push(m.scaled(1.0 / (n * n * n)));
            op.norms.push(n);
        }
        Ok(op)
    }

    pub fn k(&self) -> usize {
        self.units.len()
    }

    /// Effective quaternion units used by the forward pass.
    pub fn units(&self) -> &[Quaternion] {
        &self.units
    }

    /// `O(r)h` for every unit, concatenated.
    pub fn apply_forward(&self, h: &[f64], out: &mut [f64]) {
        for (i, m) in self.forward.iter().enumerate() {
            let v = m.mul_vec(Vec3::from_slice(&h[3 * i..3 * i + 3]));
            out[3 * i..3 * i + 3].copy_from_slice(&v.to_array());
        }
    }

    /// `O(r)⁻¹t` for every unit, concatenated.
    pub fn apply_inverse(&self, t: &[f64], out: &mut [f64]) {
        for (i, m) in self.inverse.iter().enumerate() {
            let v = m.mul_vec_transposed(Vec3::from_slice(&t[3 * i..3 * i + 3]));
            out[3 * i..3 * i + 3].copy_from_slice(&v.to_array());
        }
    }

    /// `(‖O(r)h − t‖, ‖O(r)⁻¹t − h‖)`.
    pub fn distances(&self, h: &[f64], t: &[f64]) -> (f64, f64) {
        let k3 = 3 * self.k();
        let mut fh = vec![0.0; k3];
        let mut bt = vec![0.0; k3];
        self.apply_forward(h, &mut fh);
        self.apply_inverse(t, &mut bt);
        (euclid_diff(&fh, t), euclid_diff(&bt, h))
    }

    pub fn score(&self, h: &[f64], t: &[f64]) -> f64 {
        let (d1, d2) = self.distances(h, t);
        -0.5 * (d1 + d2)
    }
}

pub(crate) fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Score of the triple `(h, r, t)`; always `≤ 0`.
pub fn score(params: &ModelParams, h: u32, r: u32, t: u32) -> Result<f64> {
    params.check_entity(h)?;
    params.check_entity(t)?;
    let op = params.operator(r)?;
    Ok(op.score(params.entity(h), params.entity(t)))
}

/// Scores of every entity placed on `side`, with `fixed` on the other side.
///
/// Entry `e` is bit-identical to `score(params, ·)` with `e` substituted.
pub fn score_against_all(params: &ModelParams, fixed: u32, r: u32, side: Side) -> Result<Vec<f64>> {
    params.check_entity(fixed)?;
    let op = params.operator(r)?;
    Ok(score_against_all_with(params, &op, fixed, side))
}

pub(crate) fn score_against_all_with(
    params: &ModelParams,
    op: &RelationOperator,
    fixed: u32,
    side: Side,
) -> Vec<f64> {
    let k3 = 3 * params.k();
    let anchor = params.entity(fixed);
    let mut pre = vec![0.0; k3];
    let mut tmp = vec![0.0; k3];
    let n = params.num_entities();
    let mut out = Vec::with_capacity(n);
    match side {
        Side::Tail => {
            op.apply_forward(anchor, &mut pre);
            for e in 0..n as u32 {
                let t = params.entity(e);
                op.apply_inverse(t, &mut tmp);
                let d1 = euclid_diff(&pre, t);
                let d2 = euclid_diff(&tmp, anchor);
                out.push(-0.5 * (d1 + d2));
            }
        }
        Side::Head => {
            op.apply_inverse(anchor, &mut pre);
            for e in 0..n as u32 {
                let h = params.entity(e);
                op.apply_forward(h, &mut tmp);
                let d1 = euclid_diff(&tmp, anchor);
                let d2 = euclid_diff(&pre, h);
                out.push(-0.5 * (d1 + d2));
            }
        }
    }
    out
}
