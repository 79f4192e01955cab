//! Losses, the parameter-count regularizer and the composite search objective
//! `F(w, A) = L_val(w, A) + η·R(A)`.

use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Var};
use crate::error::{Error, Result};
use crate::searchspace::{
    assemble, with_mixing, ArchMatrix, Gradients, MixMode, Mixing, SearchSpace, Supernet,
    SupernetState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Which loss to compute, and on which split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub split: Split,
}

/// Features and labels of one split (rows are samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `range` of this batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            features: self.features.slice(s![start..end, ..]).to_owned(),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
        }
    }

    /// Rows `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Weight `η` and per-operation parameter counts `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSpec {
    pub eta: f64,
    pub param_counts: Vec<f64>,
}

impl RegularizerSpec {
    pub fn new(eta: f64, param_counts: Vec<f64>) -> Result<Self> {
        let spec = RegularizerSpec { eta, param_counts };
        spec.validate()?;
        Ok(spec)
    }

    pub fn total(&self) -> f64 {
        self.param_counts.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Regularizer(format!(
                "eta must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        if self.eta > 0.0 && !(self.total() > 0.0) {
            return Err(Error::Regularizer(
                "parameter counts sum to zero while eta > 0".into(),
            ));
        }
        Ok(())
    }

    /// Column weights `p_k / p̄`, or all zeros when `p̄ = 0`.
    fn weights(&self, cols: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if cols != self.param_counts.len() {
            return Err(Error::ShapeMismatch {
                op: "regularizer",
                lhs: (0, cols),
                rhs: (0, self.param_counts.len()),
            });
        }
        let total = self.total();
        Ok(self
            .param_counts
            .iter()
            .map(|&p| if total > 0.0 { p / total } else { 0.0 })
            .collect())
    }
}

/// `R(A) = Σ_k (p_k/p̄)·‖A[:,k]‖²`.
pub fn regularizer(arch: &ArchMatrix, spec: &RegularizerSpec) -> Result<f64> {
    let weights = spec.weights(arch.cols())?;
    Ok(arch
        .matrix()
        .columns()
        .into_iter()
        .zip(&weights)
        .map(|(col, w)| w * col.iter().map(|x| x * x).sum::<f64>())
        .sum())
}

/// `∂R/∂A[e,k] = 2·(p_k/p̄)·A[e,k]`.
pub fn regularizer_gradient(arch: &ArchMatrix, spec: &RegularizerSpec) -> Result<Matrix> {
    let weights = spec.weights(arch.cols())?;
    Ok(Array2::from_shape_fn(arch.matrix().dim(), |(e, k)| {
        2.0 * weights[k] * arch.matrix()[[e, k]]
    }))
}

fn attach_loss(net: &mut Supernet, batch: &Batch, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::SoftmaxCrossEntropy => net.tape.softmax_cross_entropy(net.logits, &batch.labels),
        LossKind::MeanSquaredError => {
            let (rows, cols) = net.logits.shape();
            let mut target = Array2::zeros((rows, cols));
            for (r, &l) in batch.labels.iter().enumerate() {
                if l >= cols {
                    return Err(Error::LabelOutOfRange {
                        row: r,
                        label: l,
                        classes: cols,
                    });
                }
                target[[r, l]] = 1.0;
            }
            let t = net.tape.leaf(target);
            net.tape.mean_squared_error(net.logits, t)
        }
    }
}

pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best == label
        })
        .count();
    correct as f64 / labels.len() as f64
}

/// Which gradients [`evaluate`] should return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Wants {
    pub arch: bool,
    pub weights: bool,
}

impl Wants {
    pub const NONE: Wants = Wants {
        arch: false,
        weights: false,
    };
    pub const ARCH: Wants = Wants {
        arch: true,
        weights: false,
    };
    pub const WEIGHTS: Wants = Wants {
        arch: false,
        weights: true,
    };
    pub const BOTH: Wants = Wants {
        arch: true,
        weights: true,
    };
}

/// Regularizer term added to the data loss, and the point `R` is taken at.
#[derive(Debug, Clone, Copy)]
pub struct RegularizerTerm<'a> {
    pub spec: &'a RegularizerSpec,
    pub at: &'a ArchMatrix,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Data loss.
    pub loss: f64,
    /// Data loss plus `η·R`.
    pub objective: f64,
    pub accuracy: f64,
    pub arch_grad: Option<Matrix>,
    pub weight_grads: Option<Gradients>,
    pub op_calls: usize,
    pub forward_secs: f64,
    pub backward_secs: f64,
}

/// One forward (and optionally backward) pass of the supernet on `batch`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate(
    space: &SearchSpace,
    arch: &ArchMatrix,
    weights: &SupernetState,
    mixing: Mixing<'_>,
    batch: &Batch,
    kind: LossKind,
    reg: Option<RegularizerTerm<'_>>,
    wants: Wants,
) -> Result<Evaluation> {
    let start = Instant::now();
    let mut net = assemble(space, arch, weights, mixing, &batch.features)?;
    let loss_var = attach_loss(&mut net, batch, kind)?;
    let loss = net.tape.scalar_value(loss_var);
    let acc = accuracy(net.tape.value(net.logits), &batch.labels);
    let penalty = match reg {
        Some(term) if term.spec.eta > 0.0 => term.spec.eta * regularizer(term.at, term.spec)?,
        _ => 0.0,
    };
    let forward_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut arch_grad = None;
    let mut weight_grads = None;
    if wants.arch || wants.weights {
        let mut wrt: Vec<Var> = Vec::new();
        if wants.arch {
            wrt.extend(&net.arch_rows);
        }
        if wants.weights {
            wrt.extend(net.params.iter().map(|(_, v)| *v));
        }
        let grads = net.tape.gradient(loss_var, &wrt)?;
        let mut grads = grads.into_iter();
        if wants.arch {
            let mut g = Array2::zeros(arch.matrix().dim());
            for (e, row) in grads.by_ref().take(net.arch_rows.len()).enumerate() {
                g.row_mut(e).assign(&row.row(0));
            }
            if let Some(term) = reg {
                if term.spec.eta > 0.0 {
                    g = g + regularizer_gradient(term.at, term.spec)? * term.spec.eta;
                }
            }
            arch_grad = Some(g);
        }
        if wants.weights {
            weight_grads = Some(
                net.params
                    .iter()
                    .map(|(key, _)| *key)
                    .zip(grads)
                    .collect::<Gradients>(),
            );
        }
    }
    let backward_secs = start.elapsed().as_secs_f64();

    Ok(Evaluation {
        loss,
        objective: loss + penalty,
        accuracy: acc,
        arch_grad,
        weight_grads,
        op_calls: net.op_calls,
        forward_secs,
        backward_secs,
    })
}

/// Composite value `L(w, A) + η·R(A)` on `batch` through `mode`.
pub fn search_objective(
    space: &SearchSpace,
    weights: &SupernetState,
    arch: &ArchMatrix,
    batch: &Batch,
    kind: LossKind,
    reg: &RegularizerSpec,
    mode: MixMode,
) -> Result<f64> {
    let term = RegularizerTerm { spec: reg, at: arch };
    with_mixing(arch, mode, |mixing| {
        Ok(evaluate(space, arch, weights, mixing, batch, kind, Some(term), Wants::NONE)?.objective)
    })
}

/// Gradients of [`search_objective`] with respect to `A` and `w`.
pub fn search_objective_gradient(
    space: &SearchSpace,
    weights: &SupernetState,
    arch: &ArchMatrix,
    batch: &Batch,
    kind: LossKind,
    reg: &RegularizerSpec,
    mode: MixMode,
) -> Result<(f64, Matrix, Gradients)> {
    let term = RegularizerTerm { spec: reg, at: arch };
    let ev = with_mixing(arch, mode, |mixing| {
        evaluate(space, arch, weights, mixing, batch, kind, Some(term), Wants::BOTH)
    })?;
    Ok((
        ev.objective,
        ev.arch_grad.expect("requested"),
        ev.weight_grads.expect("requested"),
    ))
}
