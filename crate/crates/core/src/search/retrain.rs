use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{abort, check_evaluation, PhaseTimes, SearchConfig, Sgd};
use crate::error::{Error, Result};
use crate::objective::{evaluate, Batch, LossKind, Split, Wants};
use crate::searchspace::{discrete_selections, ArchMatrix, Mixing, SearchSpace, SupernetState};
use crate::tasks::TaskData;

/// Weight training of a fixed discrete architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    /// Full-batch SGD steps.
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            epochs: 200,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            loss: LossKind::SoftmaxCrossEntropy,
        }
    }
}

impl RetrainConfig {
    pub fn from_search(config: &SearchConfig) -> Self {
        RetrainConfig {
            epochs: config.epochs * config.weight_steps,
            lr: config.weight_lr,
            momentum: config.weight_momentum,
            weight_decay: config.weight_decay,
            seed: config.seed,
            loss: config.loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: &str| Err(Error::Config(format!("{field}: {detail}")));
        if self.epochs == 0 {
            return bad("retrain.epochs", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("retrain.lr", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("retrain.momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("retrain.weight_decay", "must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainMetrics {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub weights: SupernetState,
    /// Loss and accuracy seen by the last step, before its update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Operation evaluations per step.
    pub op_calls: usize,
    pub times: PhaseTimes,
}

/// Trains `weights` for `config.epochs` full-batch steps through the discrete
/// architecture `arch` (rows must lie in `C`).
pub fn train_discrete(
    space: &SearchSpace,
    arch: &ArchMatrix,
    mut weights: SupernetState,
    batch: &Batch,
    config: &RetrainConfig,
) -> Result<Trained> {
    config.validate()?;
    let selections = discrete_selections(arch)?;
    let mut sgd = Sgd::new(config.lr, config.momentum, config.weight_decay);
    let mut times = PhaseTimes::default();
    let mut last = None;
    for step in 1..=config.epochs {
        let ev = evaluate(
            space,
            arch,
            &weights,
            Mixing::Discrete(&selections),
            batch,
            config.loss,
            None,
            Wants::WEIGHTS,
        )?;
        check_evaluation(&ev, step, "training")?;
        sgd.step(&mut weights, ev.weight_grads.as_ref().expect("requested"));
        times.weight_forward += ev.forward_secs;
        times.weight_backward += ev.backward_secs;
        last = Some(ev);
    }
    if !weights.is_finite() {
        return Err(abort(config.epochs, "network weights became non-finite"));
    }
    let last = last.expect("at least one step");
    Ok(Trained {
        weights,
        train_loss: last.loss,
        train_accuracy: last.accuracy,
        op_calls: last.op_calls,
        times,
    })
}

/// Reinitializes the weights from `config.seed`, trains `architecture` on the
/// train and validation rows together and reports test metrics.
pub fn retrain_final(
    space: &SearchSpace,
    architecture: &ArchMatrix,
    task: &TaskData,
    config: &RetrainConfig,
) -> Result<RetrainMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = SupernetState::init(space, task.in_dim(), task.classes, &mut rng);
    let trained = train_discrete(space, architecture, init, &task.train_val_batch(), config)?;
    let selections = discrete_selections(architecture)?;
    let test = evaluate(
        space,
        architecture,
        &trained.weights,
        Mixing::Discrete(&selections),
        &task.batch(Split::Test),
        config.loss,
        None,
        Wants::NONE,
    )?;
    Ok(RetrainMetrics {
        train_loss: trained.train_loss,
        train_accuracy: trained.train_accuracy,
        test_loss: test.loss,
        test_accuracy: test.accuracy,
    })
}
