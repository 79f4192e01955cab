//! Cell DAG, candidate operations, architecture matrix and supernet assembly.
//!
//! A cell is a DAG over `N` ordered nodes. Every non-input node sums the
//! mixed outputs of its incoming edges; the last node feeds a linear
//! classifier head. Inputs enter the cell through a linear stem so that the
//! cell works at a fixed hidden width.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Candidate operation on an edge. All operations map width `d` to width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperationKind {
    Zero,
    Identity,
    Linear,
    ReluLinear,
    TanhLinear,
    SigmoidLinear,
    /// `relu(x·W)` with `W: d×2d`, folded back to width `d` by summing halves.
    WideLinear,
}

impl OperationKind {
    pub const ALL: [OperationKind; 7] = [
        OperationKind::Zero,
        OperationKind::Identity,
        OperationKind::Linear,
        OperationKind::ReluLinear,
        OperationKind::TanhLinear,
        OperationKind::SigmoidLinear,
        OperationKind::WideLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::Zero => "zero",
            OperationKind::Identity => "identity",
            OperationKind::Linear => "linear",
            OperationKind::ReluLinear => "relu-linear",
            OperationKind::TanhLinear => "tanh-linear",
            OperationKind::SigmoidLinear => "sigmoid-linear",
            OperationKind::WideLinear => "wide-linear",
        }
    }

    pub fn param_shapes(self, width: usize) -> Vec<(usize, usize)> {
        match self {
            OperationKind::Zero | OperationKind::Identity => vec![],
            OperationKind::WideLinear => vec![(width, 2 * width)],
            _ => vec![(width, width)],
        }
    }

    pub fn param_count(self, width: usize) -> usize {
        self.param_shapes(width).iter().map(|(r, c)| r * c).sum()
    }

    fn apply(self, tape: &mut Tape, x: Var, params: &[Var], width: usize) -> Result<Var> {
        match self {
            OperationKind::Zero => Ok(tape.leaf(Array2::zeros(x.shape()))),
            OperationKind::Identity => Ok(x),
            OperationKind::Linear => tape.matmul(x, params[0]),
            OperationKind::ReluLinear => {
                let h = tape.matmul(x, params[0])?;
                tape.relu(h)
            }
            OperationKind::TanhLinear => {
                let h = tape.matmul(x, params[0])?;
                tape.tanh(h)
            }
            OperationKind::SigmoidLinear => {
                let h = tape.matmul(x, params[0])?;
                tape.sigmoid(h)
            }
            OperationKind::WideLinear => {
                let h = tape.matmul(x, params[0])?;
                let h = tape.relu(h)?;
                let fold = tape.leaf(fold_matrix(width));
                tape.matmul(h, fold)
            }
        }
    }
}

/// `[I; I]`, summing the two halves of a `2d`-wide activation.
fn fold_matrix(width: usize) -> Matrix {
    Array2::from_shape_fn((2 * width, width), |(r, c)| {
        if r % width == c {
            1.0
        } else {
            0.0
        }
    })
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationDescriptor {
    pub kind: OperationKind,
    pub name: String,
    /// Number of trainable scalars the operation creates per edge.
    pub param_count: usize,
}

/// Ordered candidate operations at a fixed hidden width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSet {
    width: usize,
    ops: Vec<OperationDescriptor>,
}

impl OperationSet {
    pub fn new(kinds: &[OperationKind], width: usize) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Empty("operation set"));
        }
        if width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let ops = kinds
            .iter()
            .map(|&kind| OperationDescriptor {
                kind,
                name: kind.name().to_string(),
                param_count: kind.param_count(width),
            })
            .collect();
        Ok(OperationSet { width, ops })
    }

    /// The seven-operation default space.
    pub fn standard(width: usize) -> Self {
        Self::new(&OperationKind::ALL, width).expect("nonempty")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, index: usize) -> &OperationDescriptor {
        &self.ops[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &OperationDescriptor> {
        self.ops.iter()
    }

    pub fn kinds(&self) -> Vec<OperationKind> {
        self.ops.iter().map(|o| o.kind).collect()
    }

    pub fn param_counts(&self) -> Vec<f64> {
        self.ops.iter().map(|o| o.param_count as f64).collect()
    }
}

/// Cell DAG: edges run from lower to higher node index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellTopology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    inputs: Vec<usize>,
}

impl CellTopology {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>, inputs: Vec<usize>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Topology("a cell needs at least two nodes".into()));
        }
        if inputs.is_empty() || inputs.iter().any(|&i| i + 1 >= node_count) {
            return Err(Error::Topology(format!(
                "input nodes {inputs:?} must be nonempty and exclude the output node {}",
                node_count - 1
            )));
        }
        for (n, &(i, j)) in edges.iter().enumerate() {
            if i >= j || j >= node_count {
                return Err(Error::Topology(format!(
                    "edge {n} ({i},{j}) must satisfy i < j < {node_count}"
                )));
            }
            if inputs.contains(&j) {
                return Err(Error::Topology(format!("edge ({i},{j}) enters input node {j}")));
            }
            if edges[..n].contains(&(i, j)) {
                return Err(Error::Topology(format!("duplicate edge ({i},{j})")));
            }
        }
        for node in (0..node_count).filter(|n| !inputs.contains(n)) {
            if !edges.iter().any(|&(_, j)| j == node) {
                return Err(Error::Topology(format!("node {node} has no incoming edge")));
            }
        }
        Ok(CellTopology {
            node_count,
            edges,
            inputs,
        })
    }

    /// Node 0 is the input; every pair `i < j` is an edge.
    pub fn full(node_count: usize) -> Result<Self> {
        let edges = (0..node_count)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .collect();
        Self::new(node_count, edges, vec![0])
    }

    /// Node 0 is the input; edges `(i, i+1)` only.
    pub fn chain(node_count: usize) -> Result<Self> {
        let edges = (1..node_count).map(|j| (j - 1, j)).collect();
        Self::new(node_count, edges, vec![0])
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn output(&self) -> usize {
        self.node_count - 1
    }
}

/// Topology plus its candidate operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub topology: CellTopology,
    pub operations: OperationSet,
}

impl SearchSpace {
    pub fn new(topology: CellTopology, operations: OperationSet) -> Self {
        SearchSpace {
            topology,
            operations,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.topology.edge_count()
    }

    pub fn op_count(&self) -> usize {
        self.operations.len()
    }

    /// Number of distinct one-operation-per-edge architectures.
    pub fn architecture_count(&self) -> usize {
        self.op_count().saturating_pow(self.edge_count() as u32)
    }

    /// Trainable scalars inside the cell when `ops[e]` is chosen on edge `e`.
    pub fn selected_param_count(&self, ops: &[usize]) -> usize {
        ops.iter()
            .map(|&k| self.operations.get(k).param_count)
            .sum()
    }
}

/// Architecture parameters: one row per edge, one column per operation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchMatrix(Matrix);

impl ArchMatrix {
    pub fn zeros(edges: usize, ops: usize) -> Self {
        ArchMatrix(Array2::zeros((edges, ops)))
    }

    pub fn from_matrix(m: Matrix) -> Self {
        ArchMatrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Config("architecture rows differ in length".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Ok(ArchMatrix(
            Array2::from_shape_vec((rows.len(), cols), flat).expect("checked shape"),
        ))
    }

    /// One-hot rows with unit coefficients.
    pub fn one_hot(ops: &[usize], op_count: usize) -> Self {
        let mut m = Array2::zeros((ops.len(), op_count));
        for (e, &k) in ops.iter().enumerate() {
            m[[e, k]] = 1.0;
        }
        ArchMatrix(m)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, edge: usize) -> Vec<f64> {
        self.0.row(edge).to_vec()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Applies `f` to every row, returning the transformed matrix.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let mut out = self.0.clone();
        for (e, mut row) in out.rows_mut().into_iter().enumerate() {
            let mapped = f(&self.row(e))?;
            row.assign(&ndarray::ArrayView1::from(&mapped));
        }
        Ok(ArchMatrix(out))
    }

    /// Row-wise argmax, lowest index on ties.
    pub fn argmax_ops(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Operation kept on one edge of a discrete architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub op: usize,
    pub coefficient: f64,
}

/// Validates a discrete row: exactly one nonzero entry, lying in `(0, 1]`.
pub fn discrete_selection(row: &[f64]) -> Result<Selection> {
    let nonzero: Vec<usize> = (0..row.len()).filter(|&k| row[k] != 0.0).collect();
    let detail = match nonzero.as_slice() {
        [] => "no nonzero entry".to_string(),
        &[k] if row[k] > 0.0 && row[k] <= 1.0 => {
            return Ok(Selection {
                op: k,
                coefficient: row[k],
            })
        }
        &[k] => format!("coefficient {} at {k} outside (0,1]", row[k]),
        many => format!("{} nonzero entries at {many:?}", many.len()),
    };
    Err(Error::NotDiscrete { row: 0, detail })
}

/// Validates every row of `arch` as discrete.
pub fn discrete_selections(arch: &ArchMatrix) -> Result<Vec<Selection>> {
    (0..arch.rows())
        .map(|e| {
            discrete_selection(&arch.row(e)).map_err(|err| match err {
                Error::NotDiscrete { detail, .. } => Error::NotDiscrete { row: e, detail },
                other => other,
            })
        })
        .collect()
}

/// Per-row argmax with unit coefficient; ties go to the lowest index.
pub fn derive_final_architecture(arch: &ArchMatrix) -> ArchMatrix {
    ArchMatrix::one_hot(&arch.argmax_ops(), arch.cols())
}

/// Identifies one trainable array of a [`SupernetState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Stem,
    Op { edge: usize, op: usize, slot: usize },
    HeadWeight,
    HeadBias,
}

pub type Gradients = BTreeMap<ParamKey, Matrix>;

/// All network weights of the supernet.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetState {
    pub stem: Matrix,
    /// Keyed by `(edge, operation)`; parameter-free operations hold no arrays.
    pub ops: BTreeMap<(usize, usize), Vec<Matrix>>,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

impl SupernetState {
    /// Uniform `±1/sqrt(fan_in)` initialization in a fixed key order.
    pub fn init<R: Rng>(space: &SearchSpace, in_dim: usize, outputs: usize, rng: &mut R) -> Self {
        let width = space.operations.width();
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        let stem = uniform(in_dim, width);
        let mut ops = BTreeMap::new();
        for e in 0..space.edge_count() {
            for (k, desc) in space.operations.iter().enumerate() {
                let arrays = desc
                    .kind
                    .param_shapes(width)
                    .into_iter()
                    .map(|(r, c)| uniform(r, c))
                    .collect();
                ops.insert((e, k), arrays);
            }
        }
        let head_weight = uniform(width, outputs);
        SupernetState {
            stem,
            ops,
            head_weight,
            head_bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn get(&self, key: ParamKey) -> Option<&Matrix> {
        match key {
            ParamKey::Stem => Some(&self.stem),
            ParamKey::HeadWeight => Some(&self.head_weight),
            ParamKey::HeadBias => Some(&self.head_bias),
            ParamKey::Op { edge, op, slot } => self.ops.get(&(edge, op))?.get(slot),
        }
    }

    pub fn get_mut(&mut self, key: ParamKey) -> Option<&mut Matrix> {
        match key {
            ParamKey::Stem => Some(&mut self.stem),
            ParamKey::HeadWeight => Some(&mut self.head_weight),
            ParamKey::HeadBias => Some(&mut self.head_bias),
            ParamKey::Op { edge, op, slot } => self.ops.get_mut(&(edge, op))?.get_mut(slot),
        }
    }

    /// Every key, in a stable order.
    pub fn keys(&self) -> Vec<ParamKey> {
        let mut keys = vec![ParamKey::Stem];
        for (&(edge, op), arrays) in &self.ops {
            keys.extend((0..arrays.len()).map(|slot| ParamKey::Op { edge, op, slot }));
        }
        keys.push(ParamKey::HeadWeight);
        keys.push(ParamKey::HeadBias);
        keys
    }

    pub fn is_finite(&self) -> bool {
        self.keys()
            .into_iter()
            .all(|k| self.get(k).is_some_and(|m| m.iter().all(|x| x.is_finite())))
    }
}

/// How edges mix their candidate operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixMode {
    /// `Σ softmax(a)_k · O_k(x)` over every operation.
    Softmax,
    /// `Σ a_k · O_k(x)` over every operation, without normalization.
    Linear,
    /// `a_k · O_k(x)` for the single nonzero entry; nothing else is evaluated.
    Discrete,
    /// Same value as `Discrete`; the other operations are forwarded as
    /// constants so the gradient reaches every entry of the row.
    Probed,
}

/// Runs `f` with the internal mixing for `mode`, validating discrete rows.
pub(crate) fn with_mixing<T>(
    arch: &ArchMatrix,
    mode: MixMode,
    f: impl FnOnce(Mixing<'_>) -> Result<T>,
) -> Result<T> {
    match mode {
        MixMode::Softmax => f(Mixing::Softmax),
        MixMode::Linear => f(Mixing::Linear),
        MixMode::Discrete => f(Mixing::Discrete(&discrete_selections(arch)?)),
        MixMode::Probed => f(Mixing::Probed(&discrete_selections(arch)?)),
    }
}

/// Weighted sum of all outputs with `softmax(row)` weights.
pub fn mixed_output_softmax(tape: &mut Tape, row: Var, outputs: &[Var]) -> Result<Var> {
    if outputs.is_empty() {
        return Err(Error::Empty("mixed operation outputs"));
    }
    if row.shape() != (1, outputs.len()) {
        return Err(Error::ShapeMismatch {
            op: "mixed_output_softmax",
            lhs: row.shape(),
            rhs: (1, outputs.len()),
        });
    }
    let weights = tape.softmax_row(row)?;
    let mut acc: Option<Var> = None;
    for (m, &out) in outputs.iter().enumerate() {
        let w = tape.pick(weights, 0, m)?;
        let term = tape.scale(out, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("nonempty outputs"))
}

/// `a_k · O_k(x)` for the single nonzero `a_k` of `row_values`; only
/// operation `k` is evaluated through `eval`.
pub fn mixed_output_discrete<F>(
    tape: &mut Tape,
    row: Var,
    row_values: &[f64],
    eval: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape, usize) -> Result<Var>,
{
    let selection = discrete_selection(row_values)?;
    scaled_selection(tape, row, selection, eval)
}

fn scaled_selection<F>(tape: &mut Tape, row: Var, selection: Selection, eval: F) -> Result<Var>
where
    F: FnOnce(&mut Tape, usize) -> Result<Var>,
{
    let out = eval(tape, selection.op)?;
    let coefficient = tape.pick(row, 0, selection.op)?;
    tape.scale(out, coefficient)
}

/// Value of one operation on a scratch tape, for use as a constant.
fn detached_output(kind: OperationKind, h: &Matrix, arrays: &[Matrix], width: usize) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.leaf(h.clone());
    let vars: Vec<Var> = arrays.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = kind.apply(&mut tape, x, &vars, width)?;
    Ok(tape.value(out).clone())
}

/// A supernet forward pass recorded on its own tape.
#[derive(Debug)]
pub struct Supernet {
    pub tape: Tape,
    pub logits: Var,
    /// One `1×|O|` leaf per edge holding that edge's architecture row.
    pub arch_rows: Vec<Var>,
    /// Leaves for every weight array used in the pass.
    pub params: Vec<(ParamKey, Var)>,
    /// Number of operation evaluations performed.
    pub op_calls: usize,
}

/// How architecture rows enter the forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Mixing<'a> {
    Softmax,
    /// Every operation weighted directly by its row entry.
    Linear,
    /// One selection per edge; the coefficient is read from the arch row.
    Discrete(&'a [Selection]),
    /// Same value as `Discrete`, but unselected operations are also forwarded
    /// as constants so every row entry receives its gradient.
    Probed(&'a [Selection]),
}

/// Builds the full cell computation for `input` (rows are samples).
pub fn assemble_supernet(
    space: &SearchSpace,
    arch: &ArchMatrix,
    weights: &SupernetState,
    mode: MixMode,
    input: &Matrix,
) -> Result<Supernet> {
    with_mixing(arch, mode, |mixing| assemble(space, arch, weights, mixing, input))}

pub(crate) fn assemble(
    space: &SearchSpace,
    arch: &ArchMatrix,
    weights: &SupernetState,
    mixing: Mixing<'_>,
    input: &Matrix,
) -> Result<Supernet> {
    let topology = &space.topology;
    let ops = &space.operations;
    if arch.rows() != topology.edge_count() || arch.cols() != ops.len() {
        return Err(Error::ShapeMismatch {
            op: "assemble_supernet",
            lhs: (arch.rows(), arch.cols()),
            rhs: (topology.edge_count(), ops.len()),
        });
    }
    if let Mixing::Discrete(sel) | Mixing::Probed(sel) = mixing {
        if sel.len() != arch.rows() {
            return Err(Error::ShapeMismatch {
                op: "assemble_supernet",
                lhs: (sel.len(), 1),
                rhs: (arch.rows(), 1),
            });
        }
    }

    let mut tape = Tape::new();
    let mut params = Vec::new();
    let mut op_calls = 0usize;

    let x = tape.leaf(input.clone());
    let stem = tape.leaf(weights.stem.clone());
    params.push((ParamKey::Stem, stem));
    let x0 = tape.matmul(x, stem)?;

    let arch_rows: Vec<Var> = (0..arch.rows())
        .map(|e| tape.leaf(arch.matrix().row(e).to_owned().insert_axis(ndarray::Axis(0))))
        .collect();

    let mut nodes: Vec<Option<Var>> = vec![None; topology.node_count()];
    for &i in topology.inputs() {
        nodes[i] = Some(x0);
    }

    // Edges are processed grouped by destination so each node is complete
    // before any of its outgoing edges run.
    let mut order: Vec<usize> = (0..topology.edge_count()).collect();
    order.sort_by_key(|&e| topology.edges()[e].1);
    for e in order {
        let (src, dst) = topology.edges()[e];
        let h = nodes[src].ok_or_else(|| {
            Error::Topology(format!("node {src} used before it was computed"))
        })?;
        let mut eval = |tape: &mut Tape, k: usize| -> Result<Var> {
            op_calls += 1;
            let arrays = weights.ops.get(&(e, k)).ok_or_else(|| {
                Error::Config(format!("weights missing for edge {e} operation {k}"))
            })?;
            let vars: Vec<Var> = arrays
                .iter()
                .enumerate()
                .map(|(slot, m)| {
                    let v = tape.leaf(m.clone());
                    params.push((ParamKey::Op { edge: e, op: k, slot }, v));
                    v
                })
                .collect();
            ops.get(k).kind.apply(tape, h, &vars, ops.width())
        };
        let out = match mixing {
            Mixing::Softmax => {
                let outs = (0..ops.len())
                    .map(|k| eval(&mut tape, k))
                    .collect::<Result<Vec<_>>>()?;
                mixed_output_softmax(&mut tape, arch_rows[e], &outs)?
            }
            Mixing::Linear => {
                let mut acc: Option<Var> = None;
                for k in 0..ops.len() {
                    let out = eval(&mut tape, k)?;
                    let coefficient = tape.pick(arch_rows[e], 0, k)?;
                    let term = tape.scale(out, coefficient)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, term)?,
                        None => term,
                    });
                }
                acc.ok_or(Error::Empty("operation set"))?
            }
            Mixing::Discrete(sel) => scaled_selection(&mut tape, arch_rows[e], sel[e], eval)?,
            Mixing::Probed(sel) => {
                let mut acc = scaled_selection(&mut tape, arch_rows[e], sel[e], &mut eval)?;
                for k in (0..ops.len()).filter(|&k| k != sel[e].op) {
                    op_calls += 1;
                    let arrays = weights.ops.get(&(e, k)).map_or(&[][..], Vec::as_slice);
                    let value = detached_output(ops.get(k).kind, tape.value(h), arrays, ops.width())?;
                    let out = tape.leaf(value);
                    let coefficient = tape.pick(arch_rows[e], 0, k)?;
                    let term = tape.scale(out, coefficient)?;
                    acc = tape.add(acc, term)?;
                }
                acc
            }
        };
        nodes[dst] = Some(match nodes[dst] {
            Some(acc) => tape.add(acc, out)?,
            None => out,
        });
    }

    let cell_out = nodes[topology.output()].expect("output has incoming edges");
    let head_w = tape.leaf(weights.head_weight.clone());
    let head_b = tape.leaf(weights.head_bias.clone());
    params.push((ParamKey::HeadWeight, head_w));
    params.push((ParamKey::HeadBias, head_b));
    let logits = tape.matmul(cell_out, head_w)?;
    let logits = tape.add(logits, head_b)?;

    Ok(Supernet {
        tape,
        logits,
        arch_rows,
        params,
        op_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Matrix, b: &Matrix) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn softmax_mixing_examples() {
        let mut tape = Tape::new();
        let u = tape.leaf(array![[1.0, 2.0]]);
        let v = tape.leaf(array![[4.0, -2.0]]);
        let t = tape.leaf(array![[7.0, 0.0]]);
        let row = tape.leaf(array![[0.0, 0.0, 0.0]]);
        let out = mixed_output_softmax(&mut tape, row, &[u, v, t]).unwrap();
        assert!(close(tape.value(out), &array![[4.0, 0.0]]));

        let row = tape.leaf(array![[3f64.ln(), 0.0]]);
        let out = mixed_output_softmax(&mut tape, row, &[u, v]).unwrap();
        assert!(close(tape.value(out), &array![[1.75, 1.0]]));

        let row = tape.leaf(array![[5.0]]);
        let out = mixed_output_softmax(&mut tape, row, &[u]).unwrap();
        assert!(close(tape.value(out), tape.value(u)));

        let empty = tape.leaf(Array2::zeros((1, 0)));
        assert!(mixed_output_softmax(&mut tape, empty, &[]).is_err());
    }

    #[test]
    fn discrete_mixing_evaluates_only_the_selected_operation() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, -3.0]]);
        let row = tape.leaf(array![[0.0, 0.9, 0.0]]);
        let mut invoked = vec![];
        let out = mixed_output_discrete(&mut tape, row, &[0.0, 0.9, 0.0], |tape, k| {
            invoked.push(k);
            let two = tape.scalar(2.0);
            tape.scale(x, two)
        })
        .unwrap();
        assert_eq!(invoked, vec![1]);
        assert!(close(tape.value(out), &array![[1.8, -5.4]]));

        let row = tape.leaf(array![[1.0, 0.0]]);
        let out = mixed_output_discrete(&mut tape, row, &[1.0, 0.0], |_, _| Ok(x)).unwrap();
        assert_eq!(tape.value(out), tape.value(x));

        let row = tape.leaf(array![[0.0, 0.0]]);
        let err = mixed_output_discrete(&mut tape, row, &[0.0, 0.0], |_, _| Ok(x));
        assert!(matches!(err, Err(Error::NotDiscrete { .. })));
        assert!(discrete_selection(&[0.5, 0.5]).is_err());
        assert!(discrete_selection(&[0.0, 1.5]).is_err());
    }

    #[test]
    fn derive_examples() {
        let a = ArchMatrix::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap();
        assert_eq!(derive_final_architecture(&a).row(0), vec![0.0, 1.0, 0.0]);
        let a = ArchMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(derive_final_architecture(&a).row(0), vec![1.0, 0.0]);
        let shadow = ArchMatrix::from_rows(&[vec![0.0, 0.0, 0.8], vec![0.3, 0.0, 0.0]]).unwrap();
        assert_eq!(derive_final_architecture(&shadow).argmax_ops(), vec![2, 0]);
    }

    #[test]
    fn param_counts_match_created_arrays() {
        let space = SearchSpace::new(CellTopology::full(3).unwrap(), OperationSet::standard(5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = SupernetState::init(&space, 2, 2, &mut rng);
        for (k, desc) in space.operations.iter().enumerate() {
            let created: usize = w.ops[&(0, k)].iter().map(|m| m.len()).sum();
            assert_eq!(created, desc.param_count, "{}", desc.name);
        }
        let d = 5;
        assert_eq!(
            space.operations.param_counts(),
            vec![0.0, 0.0, (d * d) as f64, (d * d) as f64, (d * d) as f64, (d * d) as f64, (2 * d * d) as f64]
        );
        // keys cover the edge x operation grid
        assert_eq!(w.ops.len(), space.edge_count() * space.op_count());
    }

    #[test]
    fn topology_validation() {
        assert!(CellTopology::new(3, vec![(0, 1)], vec![0]).is_err());
        assert!(CellTopology::new(3, vec![(1, 0), (0, 2)], vec![0]).is_err());
        assert!(CellTopology::new(3, vec![(0, 1), (0, 1), (1, 2)], vec![0]).is_err());
        let full = CellTopology::full(4).unwrap();
        assert_eq!(full.edge_count(), 6);
        assert_eq!(CellTopology::chain(3).unwrap().edges(), &[(0, 1), (1, 2)]);
    }

    fn tiny_space(kinds: &[OperationKind], nodes: usize) -> SearchSpace {
        SearchSpace::new(
            CellTopology::chain(nodes).unwrap(),
            OperationSet::new(kinds, 3).unwrap(),
        )
    }

    fn head(w: &SupernetState, cell_out: &Matrix) -> Matrix {
        cell_out.dot(&w.head_weight) + &w.head_bias
    }

    #[test]
    fn identity_cell_is_the_classifier_on_the_cell_input() {
        let space = tiny_space(&[OperationKind::Identity], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = SupernetState::init(&space, 2, 2, &mut rng);
        let x = array![[0.5, -1.0], [2.0, 0.25]];
        let arch = ArchMatrix::from_rows(&[vec![1.0]]).unwrap();
        let net = assemble_supernet(&space, &arch, &w, MixMode::Discrete, &x).unwrap();
        let expected = head(&w, &x.dot(&w.stem));
        assert!(close(net.tape.value(net.logits), &expected));
    }

    #[test]
    fn zero_cell_outputs_the_classifier_of_zero() {
        let space = tiny_space(&[OperationKind::Zero, OperationKind::Linear], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = SupernetState::init(&space, 2, 3, &mut rng);
        let x = array![[0.5, -1.0], [2.0, 0.25]];
        let arch = ArchMatrix::one_hot(&[0, 0], 2);
        let net = assemble_supernet(&space, &arch, &w, MixMode::Discrete, &x).unwrap();
        let expected = head(&w, &Array2::zeros((2, 3)));
        assert!(close(net.tape.value(net.logits), &expected));
    }

    #[test]
    fn op_calls_per_mode() {
        let space = SearchSpace::new(CellTopology::full(4).unwrap(), OperationSet::standard(4));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = SupernetState::init(&space, 2, 2, &mut rng);
        let x = Array2::from_elem((3, 2), 0.3);
        let arch = ArchMatrix::one_hot(&[2, 3, 4, 5, 6, 1], 7);
        let discrete = assemble_supernet(&space, &arch, &w, MixMode::Discrete, &x).unwrap();
        assert_eq!(discrete.op_calls, space.edge_count());
        let soft = assemble_supernet(&space, &arch, &w, MixMode::Softmax, &x).unwrap();
        assert_eq!(soft.op_calls, space.edge_count() * space.op_count());
        // softmax of a one-hot row is not one-hot, so outputs differ
        assert!(!close(
            discrete.tape.value(discrete.logits),
            soft.tape.value(soft.logits)
        ));
    }

    #[test]
    fn discrete_mode_rejects_relaxed_rows() {
        let space = tiny_space(&[OperationKind::Identity, OperationKind::Linear], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = SupernetState::init(&space, 2, 2, &mut rng);
        let arch = ArchMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let x = Array2::zeros((1, 2));
        assert!(matches!(
            assemble_supernet(&space, &arch, &w, MixMode::Discrete, &x),
            Err(Error::NotDiscrete { row: 0, .. })
        ));
    }
}
