//! Self-adversarial negative-sampling loss and its analytic gradient.
//!
//! For a positive triple with score `f` and negatives with scores `f_j`:
//!
//! ```text
//! L = −log σ(γ + f) − Σ_j p_j log σ(−(γ + f_j)),   p = softmax(α f_neg)
//! ```
//!
//! The weights `p` are treated as constants when differentiating.

use crate::dataio::{NegativeBatch, Triple};
use crate::error::Result;
use crate::model::{euclid_diff, ModelParams, RelationOperator};
use crate::rot3::{Quaternion, Vec3};

use super::TrainingConfig;

/// Guard for the `u/‖u‖` factor of a distance gradient.
pub const DISTANCE_EPSILON: f64 = 1e-12;

/// `−log σ(x)`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `alpha · scores`.
pub fn adversarial_weights(neg_scores: &[f64], alpha: f64) -> Vec<f64> {
    let max = neg_scores
        .iter()
        .map(|s| alpha * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = neg_scores.iter().map(|s| (alpha * s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Weights used for `batch` under `cfg` (uniform when adversarial weighting is off).
pub fn negative_weights(
    params: &ModelParams,
    batch: &NegativeBatch,
    cfg: &TrainingConfig,
) -> Result<Vec<f64>> {
    if !cfg.ablations.adversarial {
        return Ok(uniform_weights(batch.len()));
    }
    let op = params.operator(batch.positive.relation)?;
    let scores = negative_scores(params, &op, batch);
    Ok(adversarial_weights(&scores, cfg.adv_temperature))
}

fn triple_score(params: &ModelParams, op: &RelationOperator, t: Triple) -> f64 {
    op.score(params.entity(t.head), params.entity(t.tail))
}

fn negative_scores(params: &ModelParams, op: &RelationOperator, batch: &NegativeBatch) -> Vec<f64> {
    (0..batch.len())
        .map(|j| triple_score(params, op, batch.triple(j)))
        .collect()
}

fn check_batch(params: &ModelParams, batch: &NegativeBatch) -> Result<()> {
    let p = batch.positive;
    params.check_entity(p.head)?;
    params.check_entity(p.tail)?;
    params.check_relation(p.relation)?;
    for &e in &batch.corrupted {
        params.check_entity(e)?;
    }
    Ok(())
}

/// Loss of one positive and its negatives.
pub fn loss(params: &ModelParams, batch: &NegativeBatch, cfg: &TrainingConfig) -> Result<f64> {
    let weights = negative_weights(params, batch, cfg)?;
    loss_with_weights(params, batch, cfg, &weights)
}

/// Loss with caller-supplied negative weights.
pub fn loss_with_weights(
    params: &ModelParams,
    batch: &NegativeBatch,
    cfg: &TrainingConfig,
    weights: &[f64],
) -> Result<f64> {
    check_batch(params, batch)?;
    let op = params.operator(batch.positive.relation)?;
    let pos = triple_score(params, &op, batch.positive);
    let negs = negative_scores(params, &op, batch);
    Ok(loss_from_scores(pos, &negs, weights, cfg.gamma))
}

fn loss_from_scores(pos: f64, negs: &[f64], weights: &[f64], gamma: f64) -> f64 {
    neg_log_sigmoid(gamma + pos)
        + negs
            .iter()
            .zip(weights)
            .map(|(f, p)| p * neg_log_sigmoid(-(gamma + f)))
            .sum::<f64>()
}

/// Dense gradient buffers shaped like [`ModelParams`] with a record of touched rows.
#[derive(Debug, Clone)]
pub struct Gradients {
    k: usize,
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
    entity_touched: Vec<bool>,
    relation_touched: Vec<bool>,
    touched_entities: Vec<u32>,
    touched_relations: Vec<u32>,
}

impl Gradients {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            k: params.k(),
            entities: vec![0.0; params.entities.len()],
            relations: vec![0.0; params.relations.len()],
            entity_touched: vec![false; params.num_entities()],
            relation_touched: vec![false; params.num_relations()],
            touched_entities: Vec::new(),
            touched_relations: Vec::new(),
        }
    }

    pub fn entity(&self, e: u32) -> &[f64] {
        let w = 3 * self.k;
        &self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation(&self, r: u32) -> &[f64] {
        let w = 4 * self.k;
        &self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn entity_mut(&mut self, e: u32) -> &mut [f64] {
        if !self.entity_touched[e as usize] {
            self.entity_touched[e as usize] = true;
            self.touched_entities.push(e);
        }
        let w = 3 * self.k;
        &mut self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation_mut(&mut self, r: u32) -> &mut [f64] {
        if !self.relation_touched[r as usize] {
            self.relation_touched[r as usize] = true;
            self.touched_relations.push(r);
        }
        let w = 4 * self.k;
        &mut self.relations[r as usize * w..(r as usize + 1) * w]
    }

    pub fn touched_entities(&self) -> &[u32] {
        &self.touched_entities
    }

    pub fn touched_relations(&self) -> &[u32] {
        &self.touched_relations
    }

    /// Zeroes touched rows only.
    pub fn clear(&mut self) {
        let (w3, w4) = (3 * self.k, 4 * self.k);
        for &e in &self.touched_entities {
            let e = e as usize;
            self.entities[e * w3..(e + 1) * w3].fill(0.0);
            self.entity_touched[e] = false;
        }
        for &r in &self.touched_relations {
            let r = r as usize;
            self.relations[r * w4..(r + 1) * w4].fill(0.0);
            self.relation_touched[r] = false;
        }
        self.touched_entities.clear();
        self.touched_relations.clear();
    }

    /// Adds the touched rows of `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for &e in other.touched_entities() {
            let src = other.entity(e);
            self.entity_mut(e)
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d += s);
        }
        for &r in other.touched_relations() {
            let src = other.relation(r);
            self.relation_mut(r)
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d += s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        let (w3, w4) = (3 * self.k, 4 * self.k);
        for &e in &self.touched_entities {
            let e = e as usize;
            self.entities[e * w3..(e + 1) * w3]
                .iter_mut()
                .for_each(|v| *v *= s);
        }
        for &r in &self.touched_relations {
            let r = r as usize;
            self.relations[r * w4..(r + 1) * w4]
                .iter_mut()
                .for_each(|v| *v *= s);
        }
    }
}

/// Gradient of the loss of one positive and its negatives, added to `grads` after
/// multiplying by `scale`. Returns the loss.
pub fn accumulate_gradient(
    params: &ModelParams,
    batch: &NegativeBatch,
    cfg: &TrainingConfig,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    check_batch(params, batch)?;
    let r = batch.positive.relation;
    let op = params.operator(r)?;
    let pos = triple_score(params, &op, batch.positive);
    let negs = negative_scores(params, &op, batch);
    let weights = if cfg.ablations.adversarial {
        adversarial_weights(&negs, cfg.adv_temperature)
    } else {
        uniform_weights(negs.len())
    };
    let loss = loss_from_scores(pos, &negs, &weights, cfg.gamma);

    let k = params.k();
    let mut unit_grad = vec![Quaternion::default(); k];
    let mut scratch = Scratch::new(k);

    let d_pos = -sigmoid(-(cfg.gamma + pos)) * scale;
    score_backward(
        params,
        &op,
        batch.positive,
        d_pos,
        grads,
        &mut unit_grad,
        &mut scratch,
    );
    for (j, (f, p)) in negs.iter().zip(&weights).enumerate() {
        let d_neg = p * sigmoid(cfg.gamma + f) * scale;
        score_backward(
            params,
            &op,
            batch.triple(j),
            d_neg,
            grads,
            &mut unit_grad,
            &mut scratch,
        );
    }

    let row = grads.relation_mut(r);
    for (i, g) in unit_grad.iter().enumerate() {
        let g = if op.rotation_only {
            // Chain through e = Q/|Q|: (I − e eᵀ) g / |Q|.
            let e = op.units[i];
            let n = op.raw[i].norm();
            (*g - e.scaled(g.dot(e))).scaled(1.0 / n)
        } else {
            *g
        };
        for (d, s) in row[4 * i..4 * i + 4].iter_mut().zip(g.to_array()) {
            *d += s;
        }
    }
    Ok(loss)
}

/// Gradient tables for a single positive and its negatives.
pub fn backward(
    params: &ModelParams,
    batch: &NegativeBatch,
    cfg: &TrainingConfig,
) -> Result<Gradients> {
    let mut grads = Gradients::new(params);
    accumulate_gradient(params, batch, cfg, 1.0, &mut grads)?;
    Ok(grads)
}

struct Scratch {
    fh: Vec<f64>,
    bt: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            fh: vec![0.0; 3 * k],
            bt: vec![0.0; 3 * k],
        }
    }
}

/// Backpropagates `d_score · ∂f/∂θ` for the triple `t`.
fn score_backward(
    params: &ModelParams,
    op: &RelationOperator,
    t: Triple,
    d_score: f64,
    grads: &mut Gradients,
    unit_grad: &mut [Quaternion],
    scratch: &mut Scratch,
) {
    if d_score == 0.0 {
        return;
    }
    let h = params.entity(t.head);
    let tl = params.entity(t.tail);
    op.apply_forward(h, &mut scratch.fh);
    op.apply_inverse(tl, &mut scratch.bt);
    let d1 = euclid_diff(&scratch.fh, tl);
    let d2 = euclid_diff(&scratch.bt, h);
    // f = −½(d1 + d2)
    let c1 = -0.5 * d_score / d1.max(DISTANCE_EPSILON);
    let c2 = -0.5 * d_score / d2.max(DISTANCE_EPSILON);

    let k = op.k();
    let mut gh = vec![0.0; 3 * k];
    let mut gt = vec![0.0; 3 * k];
    for i in 0..k {
        let s = 3 * i..3 * i + 3;
        let hv = Vec3::from_slice(&h[s.clone()]);
        let tv = Vec3::from_slice(&tl[s.clone()]);
        let g1 = (Vec3::from_slice(&scratch.fh[s.clone()]) - tv) * c1;
        let g2 = (Vec3::from_slice(&scratch.bt[s.clone()]) - hv) * c2;

        let dh = op.forward[i].mul_vec_transposed(g1) - g2;
        let dt = op.inverse[i].mul_vec(g2) - g1;
        gh[s.clone()]
            .iter_mut()
            .zip(dh.to_array())
            .for_each(|(a, b)| *a += b);
        gt[s]
            .iter_mut()
            .zip(dt.to_array())
            .for_each(|(a, b)| *a += b);

        // g1ᵀ M(e) h / n  and  tᵀ M(e) g2 / n³
        let e = op.units[i];
        let n = op.norms[i];
        let m = &op.quad[i];
        let fwd_val = g1.dot(m.mul_vec(hv));
        let inv_val = tv.dot(m.mul_vec(g2));
        let n2 = n * n;
        let n3 = n2 * n;
        let ge = quadratic_form_gradient(e, g1, hv).scaled(1.0 / n) - e.scaled(fwd_val / n3)
            + quadratic_form_gradient(e, tv, g2).scaled(1.0 / n3)
            - e.scaled(3.0 * inv_val / (n3 * n2));
        unit_grad[i] = unit_grad[i] + ge;
    }
    grads
        .entity_mut(t.head)
        .iter_mut()
        .zip(&gh)
        .for_each(|(a, b)| *a += b);
    grads
        .entity_mut(t.tail)
        .iter_mut()
        .zip(&gt)
        .for_each(|(a, b)| *a += b);
}

/// `∇_Q (lᵀ M(Q) r)` where `M` is the quadratic form of the sandwich product.
fn quadratic_form_gradient(q: Quaternion, l: Vec3, r: Vec3) -> Quaternion {
    let Quaternion { a, b, c, d } = q;
    let bil = |m: [[f64; 3]; 3]| -> f64 {
        let l = l.to_array();
        let r = r.to_array();
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += l[i] * m[i][j] * r[j];
            }
        }
        2.0 * s
    };
    Quaternion::new(
        bil([[a, -d, c], [d, a, -b], [-c, b, a]]),
        bil([[b, c, d], [c, -b, -a], [d, a, -b]]),
        bil([[-c, b, a], [b, c, d], [-a, d, -c]]),
        bil([[-d, -a, b], [a, -d, c], [b, c, d]]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Side;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64, alpha: f64) -> TrainingConfig {
        TrainingConfig {
            gamma,
            adv_temperature: alpha,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn weights_examples() {
        assert_eq!(adversarial_weights(&[-3.0], 0.7), vec![1.0]);
        assert_eq!(
            adversarial_weights(&[-1.0, -5.0, -2.0], 0.0),
            vec![1.0 / 3.0; 3]
        );
        let w = adversarial_weights(&[-1.0, -2.0], 1.0);
        let e1 = (-1.0f64).exp();
        let e2 = (-2.0f64).exp();
        assert!((w[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loss_from_scores_examples() {
        let l = loss_from_scores(0.0, &[-12.0], &[1.0], 6.0);
        assert!((l - 2.0 * (1.0 + (-6.0f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.0049514).abs() < 1e-6);
        let l = loss_from_scores(-6.0, &[-6.0], &[1.0], 6.0);
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0) >= 0.0 && neg_log_sigmoid(800.0) < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    fn toy(seed: u64) -> (ModelParams, NegativeBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(4, 2, 2, &mut rng).unwrap();
        p.entities
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        p.relations
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let batch = NegativeBatch {
            positive: Triple::new(0, 1, 1),
            corrupted: vec![2, 0, 2],
            side: Side::Tail,
        };
        (p, batch)
    }

    #[test]
    fn loss_is_positive_term_plus_convex_combination() {
        let (p, batch) = toy(5);
        let c = cfg(2.0, 0.5);
        let w = negative_weights(&p, &batch, &c).unwrap();
        let op = p.operator(1).unwrap();
        let pos = triple_score(&p, &op, batch.positive);
        let per_neg: Vec<f64> = (0..batch.len())
            .map(|j| neg_log_sigmoid(-(c.gamma + triple_score(&p, &op, batch.triple(j)))))
            .collect();
        let expected = neg_log_sigmoid(c.gamma + pos)
            + per_neg.iter().zip(&w).map(|(l, p)| l * p).sum::<f64>();
        assert!((loss(&p, &batch, &c).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn tiny_temperature_approaches_uniform() {
        let (p, batch) = toy(8);
        let adv = loss(&p, &batch, &cfg(3.0, 1e-9)).unwrap();
        let mut uniform = cfg(3.0, 1e-9);
        uniform.ablations.adversarial = false;
        let uni = loss(&p, &batch, &uniform).unwrap();
        assert!((adv - uni).abs() < 1e-9);
    }

    #[test]
    fn untouched_rows_have_zero_gradient() {
        let (p, batch) = toy(2);
        let g = backward(&p, &batch, &cfg(2.0, 0.5)).unwrap();
        assert!(g.entity(3).iter().all(|v| *v == 0.0));
        assert!(g.relation(0).iter().all(|v| *v == 0.0));
        assert!(g.entity(0).iter().any(|v| *v != 0.0));
        let mut touched = g.touched_entities().to_vec();
        touched.sort();
        assert_eq!(touched, vec![0, 1, 2]);
    }

    #[test]
    fn coincident_points_have_bounded_gradient() {
        let mut p = ModelParams::zeros(3, 1, 2);
        p.entities
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.1 * i as f64);
        let same = p.entity(0).to_vec();
        p.entity_mut(1).copy_from_slice(&same);
        let batch = NegativeBatch {
            positive: Triple::new(0, 0, 1),
            corrupted: vec![2],
            side: Side::Tail,
        };
        let g = backward(&p, &batch, &cfg(2.0, 0.5)).unwrap();
        assert!(g
            .entities
            .iter()
            .chain(&g.relations)
            .all(|v| v.is_finite() && v.abs() < 10.0));
    }

    fn finite_difference_check(rotation_only: bool, adversarial: bool) -> f64 {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let (mut p, batch) = toy(100 + seed);
            p.rotation_only = rotation_only;
            let mut c = cfg(1.5, 0.8);
            c.ablations.adversarial = adversarial;
            let weights = negative_weights(&p, &batch, &c).unwrap();
            let g = backward(&p, &batch, &c).unwrap();
            let h = 1e-6;
            let n_ent = p.entities.len();
            for idx in 0..n_ent + p.relations.len() {
                let analytic = if idx < n_ent {
                    g.entities[idx]
                } else {
                    g.relations[idx - n_ent]
                };
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    if idx < n_ent {
                        q.entities[idx] += delta;
                    } else {
                        q.relations[idx - n_ent] += delta;
                    }
                    loss_with_weights(&q, &batch, &c, &weights).unwrap()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for rotation_only in [false, true] {
            for adversarial in [false, true] {
                let worst = finite_difference_check(rotation_only, adversarial);
                assert!(
                    worst < 1e-5,
                    "rotation_only={rotation_only} adv={adversarial}: {worst}"
                );
            }
        }
    }
}
