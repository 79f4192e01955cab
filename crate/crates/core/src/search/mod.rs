//! Architecture search algorithms over a shared supernet.
//!
//! Every gradient-based algorithm is a [`Searcher`]: a sequential state
//! machine advanced one epoch at a time by [`Searcher::step`]. An epoch is one
//! architecture update on the validation split followed by
//! `weight_steps` weight updates on the training split.

mod optim;
mod retrain;
mod trace;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::objective::{evaluate, Batch, Evaluation, LossKind, RegularizerSpec, RegularizerTerm, Split, Wants};
use crate::prox::{prox_c, prox_c1, prox_c2};
use crate::searchspace::{
    derive_final_architecture, discrete_selection, discrete_selections, ArchMatrix, Gradients, Mixing, SearchSpace,
    Selection, SupernetState,
};
use crate::tasks::TaskData;

pub use optim::{Adam, Sgd};
pub use retrain::{retrain_final, train_discrete, RetrainConfig, RetrainMetrics, Trained};
pub use trace::{EpochRecord, PhaseTimes, SearchTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Nasp,
    DartsFirstOrder,
    DartsSecondOrder,
    PaStandard,
    PaLazy,
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Nasp,
        Algorithm::DartsFirstOrder,
        Algorithm::DartsSecondOrder,
        Algorithm::PaStandard,
        Algorithm::PaLazy,
        Algorithm::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Nasp => "nasp",
            Algorithm::DartsFirstOrder => "darts-first-order",
            Algorithm::DartsSecondOrder => "darts-second-order",
            Algorithm::PaStandard => "pa-standard",
            Algorithm::PaLazy => "pa-lazy",
            Algorithm::Random => "random",
        }
    }

    fn is_relaxed(self) -> bool {
        matches!(self, Algorithm::DartsFirstOrder | Algorithm::DartsSecondOrder)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Which entries of `∇_Ā F` the proximal searches use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchGradient {
    /// Every entry: unselected operations are forwarded as constants so
    /// `∂F/∂ā_k = ⟨∂F/∂out, O_k(x)⟩` is available for all `k`.
    #[default]
    Full,
    /// Only the selected entry of each row; the forward pass touches one
    /// operation per edge and the rest of the row sees zero gradient.
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DartsOrder {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub algorithm: Algorithm,
    pub epochs: usize,
    /// Rows per update; `None` uses the whole split.
    pub batch_size: Option<usize>,
    /// Weight updates per epoch.
    pub weight_steps: usize,
    pub weight_lr: f64,
    pub weight_momentum: f64,
    pub weight_decay: f64,
    /// Architecture step size `ε`.
    pub arch_lr: f64,
    pub arch_beta1: f64,
    pub arch_beta2: f64,
    pub arch_eps: f64,
    /// Regularizer weight `η`; ignored by the relaxed searches.
    pub eta: f64,
    pub arch_gradient: ArchGradient,
    /// Take the regularizer gradient at the continuous `A` instead of `Ā`.
    pub regularize_continuous: bool,
    /// Clip PA-lazy's continuous iterate to the unit box after each step.
    pub lazy_box_projection: bool,
    /// Half-width of the uniform jitter around 0.5 used to initialize `A`.
    pub init_jitter: f64,
    /// Architectures sampled by random search.
    pub random_budget: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Log a progress line every this many epochs; 0 disables.
    pub log_every: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            algorithm: Algorithm::Nasp,
            epochs: 50,
            batch_size: None,
            weight_steps: 1,
            weight_lr: 0.1,
            weight_momentum: 0.9,
            weight_decay: 0.0,
            arch_lr: 0.01,
            arch_beta1: 0.9,
            arch_beta2: 0.999,
            arch_eps: 1e-8,
            eta: 0.0,
            arch_gradient: ArchGradient::Full,
            regularize_continuous: false,
            lazy_box_projection: false,
            init_jitter: 0.01,
            random_budget: 10,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 0,
            log_every: 0,
        }
    }
}

fn check(ok: bool, field: &str, detail: impl fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {detail}")))
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.epochs >= 1, "epochs", "must be at least 1")?;
        check(self.weight_steps >= 1, "weight_steps", "must be at least 1")?;
        check(self.batch_size != Some(0), "batch_size", "must be positive")?;
        check(
            self.arch_lr > 0.0 && self.arch_lr.is_finite(),
            "arch_lr",
            format!("must be positive and finite, got {}", self.arch_lr),
        )?;
        check(
            self.weight_lr > 0.0 && self.weight_lr.is_finite(),
            "weight_lr",
            format!("must be positive and finite, got {}", self.weight_lr),
        )?;
        check(
            (0.0..1.0).contains(&self.weight_momentum),
            "weight_momentum",
            "must lie in [0, 1)",
        )?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            "must be nonnegative",
        )?;
        check((0.0..1.0).contains(&self.arch_beta1), "arch_beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.arch_beta2), "arch_beta2", "must lie in [0, 1)")?;
        check(self.arch_eps > 0.0, "arch_eps", "must be positive")?;
        check(
            self.eta >= 0.0 && self.eta.is_finite(),
            "eta",
            format!("must be nonnegative and finite, got {}", self.eta),
        )?;
        check(
            (0.0..0.5).contains(&self.init_jitter),
            "init_jitter",
            "must lie in [0, 0.5)",
        )?;
        check(self.random_budget >= 1, "random_budget", "must be at least 1")?;
        Ok(())
    }
}

/// Everything a search needs to continue from the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    /// Completed epochs.
    pub epoch: usize,
    pub arch: ArchMatrix,
    pub discrete: ArchMatrix,
    pub weights: SupernetState,
    pub sgd: Sgd,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub trace: SearchTrace,
    /// Wall-clock seconds spent in completed epochs.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub algorithm: Algorithm,
    /// Final discrete architecture.
    pub architecture: ArchMatrix,
    pub selected: Vec<usize>,
    /// Final continuous architecture parameters.
    pub arch: ArchMatrix,
    pub weights: SupernetState,
    pub trace: SearchTrace,
    pub search_seconds: f64,
    /// Validation metrics of the final discrete architecture with the final
    /// weights.
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Discrete architecture used by `algorithm` for continuous parameters `arch`.
struct Discretized {
    matrix: ArchMatrix,
    selections: Vec<Selection>,
    degenerate: usize,
}

fn discretize(algorithm: Algorithm, arch: &ArchMatrix) -> Result<Discretized> {
    match algorithm {
        Algorithm::Nasp => {
            let matrix = arch.map_rows(prox_c1)?;
            let mut selections = Vec::with_capacity(arch.rows());
            let mut degenerate = 0;
            for e in 0..matrix.rows() {
                let row = matrix.row(e);
                if row.iter().all(|&x| x == 0.0) {
                    log::warn!("row {e} of A is all zeros; evaluating operation 0 with coefficient 0");
                    degenerate += 1;
                    selections.push(Selection {
                        op: 0,
                        coefficient: 0.0,
                    });
                } else {
                    selections.push(discrete_selection(&row).map_err(|err| match err {
                        Error::NotDiscrete { detail, .. } => Error::NotDiscrete { row: e, detail },
                        other => other,
                    })?);
                }
            }
            Ok(Discretized {
                matrix,
                selections,
                degenerate,
            })
        }
        Algorithm::PaStandard | Algorithm::PaLazy => {
            let mut projections = Vec::with_capacity(arch.rows());
            for e in 0..arch.rows() {
                projections.push(prox_c(&arch.row(e))?);
            }
            let rows: Vec<Vec<f64>> = projections.iter().map(|p| p.values.clone()).collect();
            Ok(Discretized {
                matrix: ArchMatrix::from_rows(&rows)?,
                selections: projections
                    .iter()
                    .map(|p| Selection {
                        op: p.index,
                        coefficient: p.coefficient,
                    })
                    .collect(),
                degenerate: projections.iter().filter(|p| p.degenerate).count(),
            })
        }
        Algorithm::DartsFirstOrder | Algorithm::DartsSecondOrder | Algorithm::Random => {
            let matrix = derive_final_architecture(arch);
            let selections = discrete_selections(&matrix)?;
            Ok(Discretized {
                matrix,
                selections,
                degenerate: 0,
            })
        }
    }
}

fn abort(epoch: usize, detail: impl Into<String>) -> Error {
    Error::NumericalAbort {
        epoch,
        detail: detail.into(),
    }
}

fn check_evaluation(ev: &Evaluation, epoch: usize, phase: &str) -> Result<()> {
    if !ev.loss.is_finite() || !ev.objective.is_finite() {
        return Err(abort(epoch, format!("{phase}: non-finite loss {}", ev.loss)));
    }
    if let Some(g) = &ev.arch_grad {
        if !g.iter().all(|x| x.is_finite()) {
            return Err(abort(epoch, format!("{phase}: non-finite architecture gradient")));
        }
    }
    if let Some(grads) = &ev.weight_grads {
        if let Some((key, _)) = grads.iter().find(|(_, g)| !g.iter().all(|x| x.is_finite())) {
            return Err(abort(epoch, format!("{phase}: non-finite gradient for {key:?}")));
        }
    }
    Ok(())
}

fn grad_norm(grads: &Gradients) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// `w + scale·g` over the arrays present in `grads`.
fn shifted(weights: &SupernetState, grads: &Gradients, scale: f64) -> SupernetState {
    let mut out = weights.clone();
    for (key, g) in grads {
        if let Some(p) = out.get_mut(*key) {
            p.scaled_add(scale, g);
        }
    }
    out
}

fn outside_box(arch: &ArchMatrix) -> bool {
    arch.matrix().iter().any(|&x| !(0.0..=1.0).contains(&x))
}

struct ArchOutcome {
    val_loss: f64,
    val_accuracy: f64,
    objective: f64,
    op_calls: usize,
    forward: f64,
    backward: f64,
}

impl ArchOutcome {
    fn from_eval(ev: &Evaluation) -> Self {
        ArchOutcome {
            val_loss: ev.loss,
            val_accuracy: ev.accuracy,
            objective: ev.objective,
            op_calls: ev.op_calls,
            forward: ev.forward_secs,
            backward: ev.backward_secs,
        }
    }

    fn add_cost(&mut self, ev: &Evaluation) {
        self.op_calls += ev.op_calls;
        self.forward += ev.forward_secs;
        self.backward += ev.backward_secs;
    }
}

/// Epoch-by-epoch driver for the gradient-based searches.
pub struct Searcher<'a> {
    config: SearchConfig,
    space: &'a SearchSpace,
    train: Batch,
    val: Batch,
    reg: RegularizerSpec,
    state: SearchState,
}

impl<'a> Searcher<'a> {
    pub fn new(config: SearchConfig, space: &'a SearchSpace, task: &TaskData) -> Result<Self> {
        let state = Self::initial_state(&config, space, task)?;
        Self::from_state(config, space, task, state)
    }

    /// Initial weights are drawn first and `A` second from one seeded stream,
    /// so algorithms sharing a seed start from identical weights.
    pub fn initial_state(
        config: &SearchConfig,
        space: &SearchSpace,
        task: &TaskData,
    ) -> Result<SearchState> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let weights = SupernetState::init(space, task.in_dim(), task.classes, &mut rng);
        let (edges, ops) = (space.edge_count(), space.op_count());
        let arch = if config.algorithm.is_relaxed() {
            ArchMatrix::zeros(edges, ops)
        } else {
            let jitter = config.init_jitter;
            ArchMatrix::from_matrix(Matrix::from_shape_fn((edges, ops), |_| {
                if jitter > 0.0 {
                    0.5 + rng.random_range(-jitter..=jitter)
                } else {
                    0.5
                }
            }))
        };
        let discrete = discretize(config.algorithm, &arch)?.matrix;
        Ok(SearchState {
            epoch: 0,
            discrete,
            sgd: Sgd::new(config.weight_lr, config.weight_momentum, config.weight_decay),
            adam: Adam::new(
                config.arch_lr,
                config.arch_beta1,
                config.arch_beta2,
                config.arch_eps,
                (edges, ops),
            ),
            arch,
            weights,
            rng,
            trace: SearchTrace::default(),
            elapsed: 0.0,
        })
    }

    /// Continues a search from a saved state.
    pub fn from_state(
        config: SearchConfig,
        space: &'a SearchSpace,
        task: &TaskData,
        state: SearchState,
    ) -> Result<Self> {
        config.validate()?;
        if config.algorithm == Algorithm::Random {
            return Err(Error::Config(
                "algorithm: random search is not epoch-driven; use random_search".into(),
            ));
        }
        let shape = (space.edge_count(), space.op_count());
        for (name, m) in [("arch", &state.arch), ("discrete", &state.discrete)] {
            if (m.rows(), m.cols()) != shape {
                return Err(Error::ShapeMismatch {
                    op: if name == "arch" { "search state arch" } else { "search state discrete" },
                    lhs: (m.rows(), m.cols()),
                    rhs: shape,
                });
            }
        }
        let reg = RegularizerSpec::new(config.eta, space.operations.param_counts())?;
        Ok(Searcher {
            train: task.batch(Split::Train),
            val: task.batch(Split::Val),
            config,
            space,
            reg,
            state,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn into_state(self) -> SearchState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn minibatch(&mut self, split: Split) -> Batch {
        let full = match split {
            Split::Val => &self.val,
            _ => &self.train,
        };
        match self.config.batch_size {
            Some(b) if b < full.len() => {
                let idx = rand::seq::index::sample(&mut self.state.rng, full.len(), b).into_vec();
                full.select(&idx)
            }
            _ => full.clone(),
        }
    }

    fn eval(
        &self,
        arch: &ArchMatrix,
        weights: &SupernetState,
        mixing: Mixing<'_>,
        batch: &Batch,
        reg: Option<RegularizerTerm<'_>>,
        wants: Wants,
    ) -> Result<Evaluation> {
        evaluate(self.space, arch, weights, mixing, batch, self.config.loss, reg, wants)
    }

    /// Runs one epoch and appends its record to the trace. On error the
    /// state is left as it was after the last completed epoch.
    pub fn step(&mut self) -> Result<&EpochRecord> {
        let (rng, adam) = (self.state.rng.clone(), self.state.adam.clone());
        if let Err(e) = self.advance() {
            self.state.rng = rng;
            self.state.adam = adam;
            return Err(e);
        }
        Ok(self.state.trace.last().expect("just pushed"))
    }

    fn advance(&mut self) -> Result<()> {
        let epoch = self.state.epoch + 1;
        let start = Instant::now();
        let algorithm = self.config.algorithm;
        let val = self.minibatch(Split::Val);

        let (mut arch, outcome) = if algorithm.is_relaxed() {
            self.relaxed_arch_step(epoch, &val)?
        } else {
            self.proximal_arch_step(epoch, &val)?
        };
        if !arch.is_finite() {
            return Err(abort(epoch, "architecture parameters became non-finite"));
        }
        match algorithm {
            Algorithm::Nasp => arch = arch.map_rows(prox_c2)?,
            Algorithm::PaLazy if self.config.lazy_box_projection => arch = arch.map_rows(prox_c2)?,
            Algorithm::PaStandard => arch = arch.map_rows(|r| Ok(prox_c(r)?.values))?,
            _ => {}
        }
        let next = discretize(algorithm, &arch)?;

        let mut times = PhaseTimes {
            arch_forward: outcome.forward,
            arch_backward: outcome.backward,
            ..PhaseTimes::default()
        };
        let mut weights = self.state.weights.clone();
        let mut sgd = self.state.sgd.clone();
        let mut train_ev = None;
        let mut weight_op_calls = 0;
        for _ in 0..self.config.weight_steps {
            let batch = self.minibatch(Split::Train);
            let mixing = if algorithm.is_relaxed() {
                Mixing::Softmax
            } else {
                Mixing::Discrete(&next.selections)
            };
            let operand = if algorithm.is_relaxed() { &arch } else { &next.matrix };
            let ev = self.eval(operand, &weights, mixing, &batch, None, Wants::WEIGHTS)?;
            check_evaluation(&ev, epoch, "weight update")?;
            sgd.step(&mut weights, ev.weight_grads.as_ref().expect("requested"));
            times.weight_forward += ev.forward_secs;
            times.weight_backward += ev.backward_secs;
            weight_op_calls = ev.op_calls;
            train_ev = Some(ev);
        }
        let train_ev = train_ev.expect("at least one weight step");
        if !weights.is_finite() {
            return Err(abort(epoch, "network weights became non-finite"));
        }

        let discretization_gap = if algorithm.is_relaxed() {
            let relaxed = self.eval(&arch, &weights, Mixing::Softmax, &self.val, None, Wants::NONE)?;
            let derived = self.eval(
                &next.matrix,
                &weights,
                Mixing::Discrete(&next.selections),
                &self.val,
                None,
                Wants::NONE,
            )?;
            Some(derived.loss - relaxed.loss)
        } else {
            None
        };

        times.total = start.elapsed().as_secs_f64();
        let state = &mut self.state;
        if state.trace.first_box_violation.is_none() && outside_box(&arch) {
            state.trace.first_box_violation = Some(epoch);
        }
        state.trace.records.push(EpochRecord {
            epoch,
            arch: arch.matrix().clone(),
            discrete: next.matrix.matrix().clone(),
            selected: next.selections.iter().map(|s| s.op).collect(),
            train_loss: train_ev.loss,
            train_accuracy: train_ev.accuracy,
            val_loss: outcome.val_loss,
            val_accuracy: outcome.val_accuracy,
            objective: outcome.objective,
            discretization_gap,
            arch_op_calls: outcome.op_calls,
            weight_op_calls,
            degenerate_rows: next.degenerate,
            times,
        });
        state.epoch = epoch;
        state.arch = arch;
        state.discrete = next.matrix;
        state.weights = weights;
        state.sgd = sgd;
        state.elapsed += times.total;
        if self.config.log_every > 0 && epoch.is_multiple_of(self.config.log_every) {
            let r = state.trace.last().expect("just pushed");
            log::info!(
                "{algorithm} epoch {epoch}: train {:.4} val {:.4} acc {:.3} ops {:?}",
                r.train_loss,
                r.val_loss,
                r.val_accuracy,
                r.selected
            );
        }
        Ok(())
    }

    /// Gradient step on `A` at its discrete projection (NASP, PA).
    fn proximal_arch_step(&mut self, epoch: usize, val: &Batch) -> Result<(ArchMatrix, ArchOutcome)> {
        let current = discretize(self.config.algorithm, &self.state.arch)?;
        let at = if self.config.regularize_continuous {
            &self.state.arch
        } else {
            &current.matrix
        };
        let term = RegularizerTerm { spec: &self.reg, at };
        let mixing = match self.config.arch_gradient {
            ArchGradient::Full => Mixing::Probed(&current.selections),
            ArchGradient::Selected => Mixing::Discrete(&current.selections),
        };
        let ev = self.eval(
            &current.matrix,
            &self.state.weights,
            mixing,
            val,
            Some(term),
            Wants::ARCH,
        )?;
        check_evaluation(&ev, epoch, "architecture update")?;
        let mut arch = self.state.arch.clone();
        self.state
            .adam
            .step(arch.matrix_mut(), ev.arch_grad.as_ref().expect("requested"));
        Ok((arch, ArchOutcome::from_eval(&ev)))
    }

    /// Gradient step on `A` through the softmax supernet (DARTS).
    fn relaxed_arch_step(&mut self, epoch: usize, val: &Batch) -> Result<(ArchMatrix, ArchOutcome)> {
        let arch = &self.state.arch;
        let weights = &self.state.weights;
        let (grad, outcome) = match self.config.algorithm {
            Algorithm::DartsSecondOrder => {
                let xi = self.config.weight_lr;
                let train = self.train.clone();
                let tr = self.eval(arch, weights, Mixing::Softmax, &train, None, Wants::WEIGHTS)?;
                check_evaluation(&tr, epoch, "unrolled weight step")?;
                let unrolled = shifted(weights, tr.weight_grads.as_ref().expect("requested"), -xi);
                let ev = self.eval(arch, &unrolled, Mixing::Softmax, val, None, Wants::BOTH)?;
                check_evaluation(&ev, epoch, "architecture update")?;
                let g_w = ev.weight_grads.as_ref().expect("requested");
                let mut outcome = ArchOutcome::from_eval(&ev);
                outcome.add_cost(&tr);
                let mut grad = ev.arch_grad.clone().expect("requested");
                let norm = grad_norm(g_w);
                if norm > 0.0 {
                    let delta = 0.01 / norm;
                    let plus = shifted(weights, g_w, delta);
                    let minus = shifted(weights, g_w, -delta);
                    let hp = self.eval(arch, &plus, Mixing::Softmax, &train, None, Wants::ARCH)?;
                    let hm = self.eval(arch, &minus, Mixing::Softmax, &train, None, Wants::ARCH)?;
                    check_evaluation(&hp, epoch, "second-order term")?;
                    check_evaluation(&hm, epoch, "second-order term")?;
                    outcome.add_cost(&hp);
                    outcome.add_cost(&hm);
                    let hvp = (hp.arch_grad.expect("requested") - hm.arch_grad.expect("requested"))
                        / (2.0 * delta);
                    grad.scaled_add(-xi, &hvp);
                }
                (grad, outcome)
            }
            _ => {
                let ev = self.eval(arch, weights, Mixing::Softmax, val, None, Wants::ARCH)?;
                check_evaluation(&ev, epoch, "architecture update")?;
                (ev.arch_grad.clone().expect("requested"), ArchOutcome::from_eval(&ev))
            }
        };
        let mut arch = self.state.arch.clone();
        self.state.adam.step(arch.matrix_mut(), &grad);
        Ok((arch, outcome))
    }

    /// Runs the remaining epochs and returns the result.
    pub fn run(mut self) -> Result<SearchResult> {
        while !self.is_done() {
            self.step()?;
        }
        self.finish()
    }

    /// Final discrete architecture and its validation metrics.
    pub fn finish(self) -> Result<SearchResult> {
        let algorithm = self.config.algorithm;
        let fin = discretize(algorithm, &self.state.arch)?;
        let ev = self.eval(
            &fin.matrix,
            &self.state.weights,
            Mixing::Discrete(&fin.selections),
            &self.val,
            None,
            Wants::NONE,
        )?;
        let state = self.state;
        Ok(SearchResult {
            algorithm,
            selected: fin.selections.iter().map(|s| s.op).collect(),
            architecture: fin.matrix,
            arch: state.arch,
            weights: state.weights,
            trace: state.trace,
            search_seconds: state.elapsed,
            val_loss: ev.loss,
            val_accuracy: ev.accuracy,
        })
    }
}

fn with_algorithm(config: &SearchConfig, algorithm: Algorithm) -> SearchConfig {
    SearchConfig {
        algorithm,
        ..config.clone()
    }
}

/// Runs the search named by `config.algorithm`.
pub fn search(config: &SearchConfig, space: &SearchSpace, task: &TaskData) -> Result<SearchResult> {
    match config.algorithm {
        Algorithm::Random => random_search(config, space, task, config.random_budget),
        _ => Searcher::new(config.clone(), space, task)?.run(),
    }
}

pub fn nasp_search(config: &SearchConfig, space: &SearchSpace, task: &TaskData) -> Result<SearchResult> {
    Searcher::new(with_algorithm(config, Algorithm::Nasp), space, task)?.run()
}

pub fn darts_search(
    config: &SearchConfig,
    space: &SearchSpace,
    task: &TaskData,
    order: DartsOrder,
) -> Result<SearchResult> {
    let algorithm = match order {
        DartsOrder::First => Algorithm::DartsFirstOrder,
        DartsOrder::Second => Algorithm::DartsSecondOrder,
    };
    Searcher::new(with_algorithm(config, algorithm), space, task)?.run()
}

pub fn pa_standard_search(
    config: &SearchConfig,
    space: &SearchSpace,
    task: &TaskData,
) -> Result<SearchResult> {
    Searcher::new(with_algorithm(config, Algorithm::PaStandard), space, task)?.run()
}

pub fn pa_lazy_search(config: &SearchConfig, space: &SearchSpace, task: &TaskData) -> Result<SearchResult> {
    Searcher::new(with_algorithm(config, Algorithm::PaLazy), space, task)?.run()
}

/// Operation indices of architecture number `index` (edge 0 most significant).
pub fn architecture_from_index(space: &SearchSpace, mut index: usize) -> Vec<usize> {
    let k = space.op_count();
    let mut ops = vec![0; space.edge_count()];
    for slot in ops.iter_mut().rev() {
        *slot = index % k;
        index /= k;
    }
    ops
}

/// Samples `budget` distinct discrete architectures (all of them when the
/// budget covers the space), trains each for `epochs × weight_steps` steps
/// from the same seeded initialization and keeps the lowest validation loss.
pub fn random_search(
    config: &SearchConfig,
    space: &SearchSpace,
    task: &TaskData,
    budget: usize,
) -> Result<SearchResult> {
    let config = SearchConfig {
        algorithm: Algorithm::Random,
        random_budget: budget,
        ..config.clone()
    };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = SupernetState::init(space, task.in_dim(), task.classes, &mut rng);
    let total = space.architecture_count();
    let candidates: Vec<usize> = if budget >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng, total, budget).into_vec()
    };
    let train = task.batch(Split::Train);
    let val = task.batch(Split::Val);
    let retrain = RetrainConfig::from_search(&config);
    let mut trace = SearchTrace::default();
    let mut best: Option<(f64, f64, Vec<usize>, SupernetState)> = None;
    let mut elapsed = 0.0;
    for (i, &index) in candidates.iter().enumerate() {
        let start = Instant::now();
        let ops = architecture_from_index(space, index);
        let arch = ArchMatrix::one_hot(&ops, space.op_count());
        let trained = train_discrete(space, &arch, init.clone(), &train, &retrain)?;
        let selections = discrete_selections(&arch)?;
        let ev = evaluate(
            space,
            &arch,
            &trained.weights,
            Mixing::Discrete(&selections),
            &val,
            config.loss,
            None,
            Wants::NONE,
        )?;
        let mut times = trained.times;
        times.total = start.elapsed().as_secs_f64();
        elapsed += times.total;
        trace.records.push(EpochRecord {
            epoch: i + 1,
            arch: arch.matrix().clone(),
            discrete: arch.matrix().clone(),
            selected: ops.clone(),
            train_loss: trained.train_loss,
            train_accuracy: trained.train_accuracy,
            val_loss: ev.loss,
            val_accuracy: ev.accuracy,
            objective: ev.loss,
            discretization_gap: None,
            arch_op_calls: ev.op_calls,
            weight_op_calls: trained.op_calls,
            degenerate_rows: 0,
            times,
        });
        if best.as_ref().is_none_or(|b| ev.loss < b.0) {
            best = Some((ev.loss, ev.accuracy, ops, trained.weights));
        }
    }
    let (val_loss, val_accuracy, ops, weights) = best.expect("budget is at least one");
    let architecture = ArchMatrix::one_hot(&ops, space.op_count());
    Ok(SearchResult {
        algorithm: Algorithm::Random,
        arch: architecture.clone(),
        architecture,
        selected: ops,
        weights,
        trace,
        search_seconds: elapsed,
        val_loss,
        val_accuracy,
    })
}
