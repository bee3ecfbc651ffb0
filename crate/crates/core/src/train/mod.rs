//! Minibatch training with self-adversarial negative sampling and Adam.

pub mod loss;
pub mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    augment_reciprocal, sample_negatives, Dataset, NegativeBatch, Side, Split, Triple,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{init_params, ModelParams};

pub use loss::{
    accumulate_gradient, adversarial_weights, backward, loss, loss_with_weights, negative_weights,
    Gradients,
};
pub use optim::{adam_step, AdamConfig, LrSchedule, OptimizerState};

/// Model components that can be switched off. `true` means enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Relation units keep their norm (otherwise projected to unit quaternions).
    pub scaling: bool,
    /// Train and rank with a reversed copy of every relation.
    pub reciprocal: bool,
    /// Softmax-weighted negatives (otherwise uniform).
    pub adversarial: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            scaling: true,
            reciprocal: true,
            adversarial: true,
        }
    }
}

/// Hyperparameters. Defaults follow the published WN18RR setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub k: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub negatives: usize,
    pub adv_temperature: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Steps counted as one epoch; `None` means `ceil(|train| / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    /// Epochs between validation runs; 0 disables validation.
    pub eval_every: usize,
    /// Epochs without a lower epoch loss before the rate is halved.
    pub lr_patience: usize,
    /// Consecutive non-improving validations before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Gradient workers; 1 is bit-reproducible, 0 uses all cores.
    pub workers: usize,
    pub ablations: Ablations,
    #[serde(skip)]
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: 200,
            batch_size: 512,
            gamma: 6.0,
            negatives: 512,
            adv_temperature: 0.5,
            learning_rate: 0.1,
            max_steps: 100_000,
            steps_per_epoch: None,
            eval_every: 1000,
            lr_patience: 1000,
            early_stop_patience: 3,
            seed: 0,
            workers: 1,
            ablations: Ablations::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negative sample count must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.adv_temperature >= 0.0 && self.adv_temperature.is_finite()) {
            return bad("adversarial temperature must be non-negative");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps per epoch must be at least 1");
        }
        if self.lr_patience == 0 {
            return bad("learning-rate patience must be at least 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation MRR (the final ones when never validated).
    pub best: ModelParams,
    pub last: ModelParams,
    pub best_valid_mrr: Option<f64>,
    pub log: Vec<LogRecord>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Applies the reciprocal setting to a raw dataset.
pub fn prepare_dataset(ds: &Dataset, cfg: &TrainingConfig) -> Result<Dataset> {
    if cfg.ablations.reciprocal && !ds.is_reciprocal() {
        augment_reciprocal(ds)
    } else if !cfg.ablations.reciprocal && ds.is_reciprocal() {
        Err(Error::Config(
            "dataset is already reciprocal but the reciprocal component is disabled".into(),
        ))
    } else {
        Ok(ds.clone())
    }
}

/// Step-by-step trainer over a prepared dataset.
pub struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: TrainingConfig,
    params: ModelParams,
    state: OptimizerState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
    grads: Gradients,
    worker_grads: Vec<Gradients>,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Trainer<'a> {
    /// `ds` must already carry the reciprocal setting (see [`prepare_dataset`]).
    pub fn new(ds: &'a Dataset, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.train.is_empty() {
            return Err(Error::EmptyData("training split is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = init_params(ds.num_entities(), ds.num_relations(), cfg.k, &mut rng)?;
        params.rotation_only = !cfg.ablations.scaling;
        params.reciprocal = ds.is_reciprocal();
        Self::with_params(ds, cfg, params, rng)
    }

    /// Starts from given parameters instead of a fresh initialization.
    pub fn from_params(ds: &'a Dataset, cfg: &TrainingConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        if ds.train.is_empty() {
            return Err(Error::EmptyData("training split is empty".into()));
        }
        crate::eval::check_compatible(&params, ds)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::with_params(ds, cfg, params, rng)
    }

    fn with_params(
        ds: &'a Dataset,
        cfg: &TrainingConfig,
        params: ModelParams,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        let workers = if cfg.workers == 0 {
            rayon::current_num_threads()
        } else {
            cfg.workers
        };
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(&mut rng);
        let grads = Gradients::new(&params);
        let worker_grads = if workers > 1 {
            vec![grads.clone(); workers]
        } else {
            Vec::new()
        };
        Ok(Self {
            ds,
            state: OptimizerState::new(&params, cfg.learning_rate, cfg.lr_patience),
            cfg: cfg.clone(),
            params,
            rng,
            order,
            cursor: 0,
            step: 0,
            grads,
            worker_grads,
            pool,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.state.lr()
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.state
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| self.ds.train.len().div_ceil(self.cfg.batch_size))
    }

    fn next_positive(&mut self) -> Triple {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let t = self.ds.train[self.order[self.cursor]];
        self.cursor += 1;
        t
    }

    /// Draws the next minibatch: `batch_size` positives, each with its negatives.
    /// The corrupted side alternates between steps.
    pub fn next_batch(&mut self) -> Result<Vec<NegativeBatch>> {
        let side = if self.step % 2 == 0 {
            Side::Tail
        } else {
            Side::Head
        };
        let ne = self.ds.num_entities();
        (0..self.cfg.batch_size)
            .map(|_| {
                let t = self.next_positive();
                sample_negatives(t, self.cfg.negatives, ne, side, &mut self.rng)
            })
            .collect()
    }

    /// One optimizer step; returns the mean loss of the batch.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        let scale = 1.0 / batch.len() as f64;
        self.grads.clear();
        let total = match &self.pool {
            None => {
                let mut sum = 0.0;
                for b in &batch {
                    sum += accumulate_gradient(&self.params, b, &self.cfg, scale, &mut self.grads)?;
                }
                sum
            }
            Some(pool) => {
                let chunk = batch.len().div_ceil(self.worker_grads.len());
                let params = &self.params;
                let cfg = &self.cfg;
                let partial: Vec<f64> = pool.install(|| {
                    batch
                        .par_chunks(chunk)
                        .zip(self.worker_grads.par_iter_mut())
                        .map(|(items, g)| {
                            g.clear();
                            let mut sum = 0.0;
                            for b in items {
                                sum += accumulate_gradient(params, b, cfg, scale, g)?;
                            }
                            Ok(sum)
                        })
                        .collect::<Result<Vec<f64>>>()
                })?;
                for g in &self.worker_grads {
                    self.grads.accumulate(g);
                }
                partial.iter().sum()
            }
        };
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch loss {mean} at step {}",
                self.step
            )));
        }
        adam_step(
            &mut self.params,
            &self.grads,
            &mut self.state,
            &self.cfg.adam,
        )?;
        self.step += 1;
        Ok(mean)
    }

    /// Feeds an epoch loss to the learning-rate schedule.
    pub fn end_epoch(&mut self, epoch_loss: f64) -> f64 {
        self.state.schedule.observe(epoch_loss)
    }
}

/// Trains on `ds`. The reciprocal setting is applied to `ds` first; use
/// [`prepare_dataset`] to obtain the dataset the returned parameters index into.
pub fn train(ds: &Dataset, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    let prepared = prepare_dataset(ds, cfg)?;
    train_prepared(&prepared, cfg)
}

/// Trains on a dataset that already carries the reciprocal setting.
pub fn train_prepared(ds: &Dataset, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(ds, cfg)?;
    let spe = trainer.steps_per_epoch();
    let validate = cfg.eval_every > 0 && !ds.valid.is_empty();
    let eval_opts = EvalOptions {
        filtered: true,
        workers: cfg.workers,
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut bad_evals = 0;
    let mut stopped_early = false;
    let mut epoch = 0;
    let mut epoch_loss = 0.0;
    let mut epoch_steps = 0;

    while trainer.steps_done() < cfg.max_steps {
        epoch_loss += trainer.step()?;
        epoch_steps += 1;
        let finished_epoch = epoch_steps == spe;
        let last_step = trainer.steps_done() == cfg.max_steps;
        if !finished_epoch && !last_step {
            continue;
        }
        let mean = epoch_loss / epoch_steps as f64;
        let lr = trainer.lr();
        if finished_epoch {
            epoch += 1;
            trainer.end_epoch(mean);
        }
        let due = finished_epoch && validate && epoch % cfg.eval_every == 0;
        let valid_mrr = if due || (last_step && validate) {
            let mrr = evaluate(trainer.params(), ds, Split::Valid, &eval_opts)?
                .metrics
                .mrr;
            log::info!(
                "step {} epoch {epoch}: loss {mean:.5}, valid MRR {mrr:.4}",
                trainer.steps_done()
            );
            if best.as_ref().is_none_or(|(b, _)| mrr > *b) {
                best = Some((mrr, trainer.params().clone()));
                bad_evals = 0;
            } else {
                bad_evals += 1;
            }
            Some(mrr)
        } else {
            log::debug!(
                "step {} epoch {epoch}: loss {mean:.5}",
                trainer.steps_done()
            );
            None
        };
        log.push(LogRecord {
            step: trainer.steps_done(),
            epoch,
            loss: mean,
            lr,
            valid_mrr,
        });
        epoch_loss = 0.0;
        epoch_steps = 0;
        if valid_mrr.is_some() && bad_evals >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }

    let steps = trainer.steps_done();
    let last = trainer.into_params();
    let (best_valid_mrr, best) = match best {
        Some((mrr, p)) => (Some(mrr), p),
        None => (None, last.clone()),
    };
    Ok(TrainOutcome {
        best,
        last,
        best_valid_mrr,
        log,
        steps,
        stopped_early,
    })
}
