//! Geometric reading of trained relations: per-unit scale and rotation, relation
//! pattern statistics, triangle mining and entity/axis collinearity.
//!
//! Pairwise comparisons align the second unit's axis with the first: `(ψ, v)` and
//! `(−ψ, −v)` describe the same quaternion, so when the axes point in opposite
//! hemispheres the second unit is re-expressed with the flipped axis before angles
//! are compared. Units with an undefined axis take part in scale and ψ comparisons
//! but not in θ/φ ones.

mod export;
mod triangles;

pub use export::{
    export_histogram, histogram, write_columns, write_histogram, Bin, Manifest, ManifestEntry,
};
pub use triangles::{entity_axis_alignment, mine_triangles, AxisAlignment, TriangleSet};

use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rot3::{decompose, hamilton, wrap_angle, AxisAngleScaling, Quaternion};

/// Per-unit decomposition of one relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationGeometry {
    pub relation: u32,
    pub scale: Vec<f64>,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl RelationGeometry {
    pub fn from_units(relation: u32, units: &[Quaternion]) -> Result<Self> {
        let mut g = RelationGeometry {
            relation,
            scale: Vec::with_capacity(units.len()),
            psi: Vec::with_capacity(units.len()),
            theta: Vec::with_capacity(units.len()),
            phi: Vec::with_capacity(units.len()),
            degenerate: Vec::with_capacity(units.len()),
        };
        for &q in units {
            let d = decompose(q)?;
            g.scale.push(d.scale);
            g.psi.push(d.psi);
            g.theta.push(d.theta);
            g.phi.push(d.phi);
            g.degenerate.push(d.degenerate);
        }
        Ok(g)
    }

    pub fn k(&self) -> usize {
        self.scale.len()
    }

    pub fn unit(&self, i: usize) -> AxisAngleScaling {
        AxisAngleScaling {
            scale: self.scale[i],
            psi: self.psi[i],
            theta: self.theta[i],
            phi: self.phi[i],
            degenerate: self.degenerate[i],
        }
    }
}

/// Decomposes every unit of relation `r` as the forward pass uses it.
pub fn relation_geometry(params: &ModelParams, r: u32) -> Result<RelationGeometry> {
    let op = params.operator(r)?;
    RelationGeometry::from_units(r, op.units())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryDeviation {
    /// `| |Q| − 1 |`
    pub scale_dev: Vec<f64>,
    /// Distance of ψ from the nearest of {0, π}.
    pub angle_dev: Vec<f64>,
}

pub fn symmetry_deviation(g: &RelationGeometry) -> SymmetryDeviation {
    SymmetryDeviation {
        scale_dev: g.scale.iter().map(|s| (s - 1.0).abs()).collect(),
        angle_dev: g
            .psi
            .iter()
            .map(|&p| wrap_angle(p).abs().min(wrap_angle(p - PI).abs()))
            .collect(),
    }
}

/// `other` re-expressed with its axis in the same hemisphere as `reference`.
/// The flag is false when either axis is undefined.
fn align(reference: &AxisAngleScaling, other: &AxisAngleScaling) -> (AxisAngleScaling, bool) {
    if reference.degenerate || other.degenerate {
        return (*other, false);
    }
    if reference.axis().dot(other.axis()) >= 0.0 {
        return (*other, true);
    }
    let flipped = AxisAngleScaling {
        psi: -other.psi,
        theta: PI - other.theta,
        phi: (other.phi + PI).rem_euclid(TAU),
        ..*other
    };
    (flipped, true)
}

fn require_same_k(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("relations have {a} and {b} units")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseAlignment {
    /// `ψ₁ + ψ₂` wrapped to `(−π, π]`.
    pub psi_sum: Vec<f64>,
    pub psi_sum_raw: Vec<f64>,
    pub scale_prod: Vec<f64>,
    /// `None` where an axis is undefined.
    pub theta_diff: Vec<Option<f64>>,
    pub phi_diff: Vec<Option<f64>>,
    pub excluded_axes: usize,
}

pub fn inverse_alignment(g1: &RelationGeometry, g2: &RelationGeometry) -> Result<InverseAlignment> {
    require_same_k(g1.k(), g2.k())?;
    let mut out = InverseAlignment {
        psi_sum: Vec::new(),
        psi_sum_raw: Vec::new(),
        scale_prod: Vec::new(),
        theta_diff: Vec::new(),
        phi_diff: Vec::new(),
        excluded_axes: 0,
    };
    for i in 0..g1.k() {
        let a = g1.unit(i);
        let (b, axes) = align(&a, &g2.unit(i));
        let raw = a.psi + b.psi;
        out.psi_sum_raw.push(raw);
        out.psi_sum.push(wrap_angle(raw));
        out.scale_prod.push(a.scale * b.scale);
        if axes {
            out.theta_diff.push(Some(wrap_angle(a.theta - b.theta)));
            out.phi_diff.push(Some(wrap_angle(a.phi - b.phi)));
        } else {
            out.theta_diff.push(None);
            out.phi_diff.push(None);
            out.excluded_axes += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositionVariant {
    /// Composed `r₂∘r₁` against `r₃`.
    CompareToR3,
    /// Composed `r₂∘r₁` against `r₁`.
    CompareToR1,
    /// Composed `r₂∘r₁` against `r₂`.
    CompareToR2,
    /// `|r₃| − |r₁|²` (with the angle columns of [`CompositionVariant::DoubleAngle`]).
    ScaleSquare,
    /// `ψ(r₃) − 2ψ(r₁)` (with the scale column of [`CompositionVariant::ScaleSquare`]).
    DoubleAngle,
}

impl CompositionVariant {
    pub const ALL: [CompositionVariant; 5] = [
        CompositionVariant::CompareToR3,
        CompositionVariant::CompareToR1,
        CompositionVariant::CompareToR2,
        CompositionVariant::ScaleSquare,
        CompositionVariant::DoubleAngle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompositionVariant::CompareToR3 => "compare-to-r3",
            CompositionVariant::CompareToR1 => "compare-to-r1",
            CompositionVariant::CompareToR2 => "compare-to-r2",
            CompositionVariant::ScaleSquare => "scale-square",
            CompositionVariant::DoubleAngle => "double-angle",
        }
    }
}

impl FromStr for CompositionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CompositionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = CompositionVariant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown composition variant `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionAlignment {
    pub variant: CompositionVariant,
    pub scale_diff: Vec<f64>,
    /// Wrapped to `(−π, π]`.
    pub psi_diff: Vec<f64>,
    pub psi_diff_raw: Vec<f64>,
    pub theta_diff: Vec<Option<f64>>,
    pub phi_diff: Vec<Option<f64>>,
    pub excluded_axes: usize,
}

/// Per-unit comparison of the composition `r₂∘r₁` (or of `r₁` applied twice for the
/// square variants) against the selected relation.
pub fn composition_alignment(
    params: &ModelParams,
    r1: u32,
    r2: u32,
    r3: u32,
    variant: CompositionVariant,
) -> Result<CompositionAlignment> {
    let u1 = params.operator(r1)?.units().to_vec();
    let u2 = params.operator(r2)?.units().to_vec();
    let u3 = params.operator(r3)?.units().to_vec();
    let mut out = CompositionAlignment {
        variant,
        scale_diff: Vec::new(),
        psi_diff: Vec::new(),
        psi_diff_raw: Vec::new(),
        theta_diff: Vec::new(),
        phi_diff: Vec::new(),
        excluded_axes: 0,
    };
    for i in 0..u1.len() {
        let (reference, target, factor) = match variant {
            CompositionVariant::ScaleSquare | CompositionVariant::DoubleAngle => {
                (u3[i], u1[i], 2.0)
            }
            other => {
                let composed = hamilton(u2[i], u1[i]);
                let target = match other {
                    CompositionVariant::CompareToR3 => u3[i],
                    CompositionVariant::CompareToR1 => u1[i],
                    _ => u2[i],
                };
                (composed, target, 1.0)
            }
        };
        let a = decompose(reference)?;
        let (b, axes) = align(&a, &decompose(target)?);
        let scale_diff = if factor == 2.0 {
            a.scale - b.scale * b.scale
        } else {
            a.scale - b.scale
        };
        let raw = a.psi - factor * b.psi;
        out.scale_diff.push(scale_diff);
        out.psi_diff_raw.push(raw);
        out.psi_diff.push(wrap_angle(raw));
        if axes {
            out.theta_diff.push(Some(wrap_angle(a.theta - b.theta)));
            out.phi_diff.push(Some(wrap_angle(a.phi - b.phi)));
        } else {
            out.theta_diff.push(None);
            out.phi_diff.push(None);
            out.excluded_axes += 1;
        }
    }
    Ok(out)
}

/// Median of the finite values, or `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rot3::{quat_inverse, unit_quat};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with(units: &[Vec<Quaternion>]) -> ModelParams {
        let k = units[0].len();
        let mut p = ModelParams::zeros(1, units.len(), k);
        for (r, row) in units.iter().enumerate() {
            for (i, q) in row.iter().enumerate() {
                p.set_relation_unit(r as u32, i, *q);
            }
        }
        p
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn identity_geometry() {
        let p = ModelParams::zeros(1, 1, 4);
        let g = relation_geometry(&p, 0).unwrap();
        assert!(g.scale.iter().all(|s| *s == 1.0));
        assert!(g.psi.iter().all(|s| *s == 0.0));
        assert!(g.degenerate.iter().all(|d| *d));
    }

    #[test]
    fn geometry_recovers_construction() {
        let q = unit_quat(PI / 2.0, PI / 3.0, PI / 4.0).scaled(2.0);
        let g = relation_geometry(&params_with(&[vec![q]]), 0).unwrap();
        assert!((g.scale[0] - 2.0).abs() < 1e-9);
        assert!((g.psi[0] - PI / 2.0).abs() < 1e-9);
        assert!((g.theta[0] - PI / 3.0).abs() < 1e-9);
        assert!((g.phi[0] - PI / 4.0).abs() < 1e-9);
    }

    #[test]
    fn symmetry_examples() {
        let g = RelationGeometry {
            relation: 0,
            scale: vec![1.0, 2.0, 1.0, 1.0],
            psi: vec![PI, PI / 2.0, 2.0 * PI - 0.01, 0.0],
            theta: vec![0.0; 4],
            phi: vec![0.0; 4],
            degenerate: vec![false; 4],
        };
        let d = symmetry_deviation(&g);
        assert_eq!(d.scale_dev, vec![0.0, 1.0, 0.0, 0.0]);
        assert!(d.angle_dev[0].abs() < 1e-15);
        assert!((d.angle_dev[1] - PI / 2.0).abs() < 1e-15);
        assert!((d.angle_dev[2] - 0.01).abs() < 1e-12);
        assert_eq!(d.angle_dev[3], 0.0);
    }

    #[test]
    fn psi_sum_wraps() {
        let mk = |psi: f64| RelationGeometry {
            relation: 0,
            scale: vec![1.0],
            psi: vec![psi],
            theta: vec![0.7],
            phi: vec![1.0],
            degenerate: vec![false],
        };
        let a = inverse_alignment(&mk(0.3), &mk(2.0 * PI - 0.3)).unwrap();
        assert!(a.psi_sum[0].abs() < 1e-12);
        assert!((a.psi_sum_raw[0] - 2.0 * PI).abs() < 1e-12);
        let short = RelationGeometry::from_units(1, &[Quaternion::IDENTITY; 2]).unwrap();
        assert!(matches!(
            inverse_alignment(&mk(0.3), &short),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn situation_two_construction() {
        let r1 = unit_quat(0.4, 0.0, 0.0).scaled(1.2);
        let r3 = unit_quat(0.8, 0.0, 0.0).scaled(1.44);
        // Tilted axes exercise the non-degenerate axis path.
        let s1 = unit_quat(0.4, 1.1, 2.0).scaled(1.2);
        let s3 = unit_quat(0.8, 1.1, 2.0).scaled(1.44);
        let p = params_with(&[vec![r1, s1], vec![Quaternion::IDENTITY; 2], vec![r3, s3]]);
        for v in [
            CompositionVariant::ScaleSquare,
            CompositionVariant::DoubleAngle,
        ] {
            let c = composition_alignment(&p, 0, 1, 2, v).unwrap();
            assert!(c
                .scale_diff
                .iter()
                .chain(&c.psi_diff)
                .all(|d| d.abs() < 1e-9));
            assert!(c
                .theta_diff
                .iter()
                .chain(&c.phi_diff)
                .flatten()
                .all(|d| d.abs() < 1e-9));
        }
        let c = composition_alignment(&p, 0, 0, 2, CompositionVariant::CompareToR3).unwrap();
        assert!(c
            .scale_diff
            .iter()
            .chain(&c.psi_diff)
            .all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn identity_composition_is_zero() {
        let p = ModelParams::zeros(1, 3, 5);
        for v in CompositionVariant::ALL {
            let c = composition_alignment(&p, 0, 1, 2, v).unwrap();
            assert!(c.scale_diff.iter().chain(&c.psi_diff).all(|d| *d == 0.0));
            assert_eq!(c.excluded_axes, 5);
        }
    }

    #[test]
    fn unrelated_target_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<Quaternion>> = (0..3)
            .map(|_| (0..6).map(|_| random_unit(&mut rng)).collect())
            .collect();
        let p = params_with(&rows);
        let c = composition_alignment(&p, 0, 1, 2, CompositionVariant::CompareToR3).unwrap();
        assert!(c.scale_diff.iter().any(|d| d.abs() > 1e-3));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in CompositionVariant::ALL {
            assert_eq!(v.name().parse::<CompositionVariant>().unwrap(), v);
        }
        assert!(matches!(
            "sideways".parse::<CompositionVariant>(),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn exact_inverse_aligns(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let units: Vec<Quaternion> = (0..4).map(|_| random_unit(&mut rng)).collect();
            let inverse: Vec<Quaternion> = units.iter().map(|q| quat_inverse(*q).unwrap()).collect();
            let p = params_with(&[units, inverse]);
            let a = inverse_alignment(&relation_geometry(&p, 0).unwrap(), &relation_geometry(&p, 1).unwrap()).unwrap();
            for i in 0..4 {
                prop_assert!(a.psi_sum[i].abs() < 1e-9);
                prop_assert!((a.scale_prod[i] - 1.0).abs() < 1e-9);
                prop_assert!(a.theta_diff[i].unwrap().abs() < 1e-9);
                prop_assert!(a.phi_diff[i].unwrap().abs() < 1e-9);
            }
        }

        #[test]
        fn identity_r2_compare_to_r1_is_zero(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1: Vec<Quaternion> = (0..4).map(|_| random_unit(&mut rng)).collect();
            let r3: Vec<Quaternion> = (0..4).map(|_| random_unit(&mut rng)).collect();
            let p = params_with(&[r1, vec![Quaternion::IDENTITY; 4], r3]);
            let c = composition_alignment(&p, 0, 1, 2, CompositionVariant::CompareToR1).unwrap();
            for i in 0..4 {
                prop_assert!(c.scale_diff[i].abs() < 1e-12);
                prop_assert!(c.psi_diff[i].abs() < 1e-9);
                prop_assert!(c.theta_diff[i].unwrap().abs() < 1e-9);
            }
        }

        #[test]
        fn wrapped_outputs_in_range(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<Quaternion>> = (0..3).map(|_| (0..4).map(|_| random_unit(&mut rng)).collect()).collect();
            let p = params_with(&rows);
            let in_range = |x: f64| x > -PI && x <= PI;
            for v in CompositionVariant::ALL {
                let c = composition_alignment(&p, 0, 1, 2, v).unwrap();
                prop_assert!(c.psi_diff.iter().all(|x| in_range(*x)));
                prop_assert!(c.theta_diff.iter().chain(&c.phi_diff).flatten().all(|x| in_range(*x)));
            }
            let a = inverse_alignment(&relation_geometry(&p, 0).unwrap(), &relation_geometry(&p, 1).unwrap()).unwrap();
            prop_assert!(a.psi_sum.iter().all(|x| in_range(*x)));
        }
    }
}
