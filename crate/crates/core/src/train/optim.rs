//! Sparse Adam and the plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::loss::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Halves the rate when the epoch loss has not strictly improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub patience: usize,
    best: f64,
    stalled: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self {
            lr,
            patience,
            best: f64::INFINITY,
            stalled: 0,
        }
    }

    /// Feeds one epoch loss and returns the (possibly halved) rate.
    pub fn observe(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best {
            self.best = epoch_loss;
            self.stalled = 0;
        } else {
            self.stalled += 1;
            if self.stalled >= self.patience {
                self.lr *= 0.5;
                self.stalled = 0;
            }
        }
        self.lr
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m_entities: Vec<f64>,
    pub v_entities: Vec<f64>,
    pub m_relations: Vec<f64>,
    pub v_relations: Vec<f64>,
    pub step: u64,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64, lr_patience: usize) -> Self {
        Self {
            m_entities: vec![0.0; params.entities.len()],
            v_entities: vec![0.0; params.entities.len()],
            m_relations: vec![0.0; params.relations.len()],
            v_relations: vec![0.0; params.relations.len()],
            step: 0,
            schedule: LrSchedule::new(lr, lr_patience),
        }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr
    }
}

fn check_finite(grads: &Gradients) -> Result<()> {
    for &e in grads.touched_entities() {
        if let Some(pos) = grads.entity(e).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of entity {e}, coordinate {pos} is {}",
                grads.entity(e)[pos]
            )));
        }
    }
    for &r in grads.touched_relations() {
        if let Some(pos) = grads.relation(r).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of relation {r}, coordinate {pos} is {}",
                grads.relation(r)[pos]
            )));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_row(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One Adam step over the touched rows of `grads`. Moments of untouched rows are
/// left as they are; bias correction uses the global step count.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    check_finite(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let lr = state.lr();
    let w3 = 3 * params.k();
    let w4 = 4 * params.k();
    for &e in grads.touched_entities() {
        let s = e as usize * w3..(e as usize + 1) * w3;
        update_row(
            &mut params.entities[s.clone()],
            grads.entity(e),
            &mut state.m_entities[s.clone()],
            &mut state.v_entities[s],
            cfg,
            lr,
            c1,
            c2,
        );
    }
    for &r in grads.touched_relations() {
        let s = r as usize * w4..(r as usize + 1) * w4;
        update_row(
            &mut params.relations[s.clone()],
            grads.relation(r),
            &mut state.m_relations[s.clone()],
            &mut state.v_relations[s],
            cfg,
            lr,
            c1,
            c2,
        );
        params.floor_relation(r);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = ModelParams::zeros(2, 1, 1);
        p.entities
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64);
        let before = p.clone();
        let mut g = Gradients::new(&p);
        g.entity_mut(0);
        g.relation_mut(0);
        let mut st = OptimizerState::new(&p, 0.1, 1000);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::zeros(1, 1, 1);
        let mut g = Gradients::new(&p);
        g.entity_mut(0).copy_from_slice(&[3.0, -0.02, 0.0]);
        let mut st = OptimizerState::new(&p, 0.1, 1000);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert!((p.entities[0] + 0.1).abs() < 1e-8);
        assert!((p.entities[1] - 0.1).abs() < 1e-6);
        assert_eq!(p.entities[2], 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = ModelParams::zeros(1, 1, 1);
        let mut g = Gradients::new(&p);
        g.relation_mut(0)[2] = f64::NAN;
        let mut st = OptimizerState::new(&p, 0.1, 1000);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn relation_floor_after_update() {
        let mut p = ModelParams::zeros(1, 1, 1);
        p.relations.copy_from_slice(&[1e-9, 0.0, 0.0, 0.0]);
        let mut g = Gradients::new(&p);
        g.relation_mut(0)[0] = 1.0;
        let mut st = OptimizerState::new(&p, 1e-9, 1000);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert!(p.relation_unit(0, 0).norm() >= crate::model::RELATION_NORM_FLOOR * (1.0 - 1e-12));
    }

    #[test]
    fn schedule_halves_after_stall() {
        let mut s = LrSchedule::new(0.1, 1000);
        for i in 0..5000 {
            assert_eq!(s.observe(10.0 - i as f64 * 1e-3), 0.1);
        }
        let mut s = LrSchedule::new(0.1, 1000);
        s.observe(1.0);
        for _ in 0..999 {
            assert_eq!(s.observe(1.0), 0.1);
        }
        assert_eq!(s.observe(1.0), 0.05);
        for _ in 0..1000 {
            s.observe(1.0);
        }
        assert_eq!(s.lr, 0.025);
    }
}
