//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records primitives in evaluation order, so every node's inputs
//! precede it and a single reverse sweep accumulates adjoints. Tapes are cheap
//! and meant to be rebuilt for every batch.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Primitive operations the tape can record.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `(n×k)·(k×m)`.
    MatMul,
    /// Elementwise sum; the right operand may be a `1×m` row broadcast over rows.
    Add,
    /// Elementwise (Hadamard) product of equal shapes.
    Mul,
    Relu,
    Tanh,
    Sigmoid,
    /// Multiplies the first input by the `1×1` second input.
    Scale,
    /// Sum of all entries, giving `1×1`.
    Sum,
    /// Mean over rows of the negative log-softmax at each row's label.
    SoftmaxCrossEntropy { labels: Vec<usize> },
    /// Mean over all entries of `(prediction - target)^2`.
    MeanSquaredError,
    /// Row-wise softmax.
    SoftmaxRow,
    /// Extracts one entry as a `1×1` value.
    Pick { row: usize, col: usize },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Scale => "scale",
            Primitive::Sum => "sum",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Primitive::MeanSquaredError => "mean_squared_error",
            Primitive::SoftmaxRow => "softmax_row",
            Primitive::Pick { .. } => "pick",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Mul
            | Primitive::Scale
            | Primitive::MeanSquaredError => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add { lhs: usize, rhs: usize, broadcast: bool },
    Mul(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Scale(usize, usize),
    Sum(usize),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Matrix },
    MeanSquaredError(usize, usize),
    SoftmaxRow(usize),
    Pick { input: usize, row: usize, col: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Single-owner recording of a computation.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let (rows, cols) = value.dim();
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar(v.index));
        }
        Ok(v.index)
    }

    /// Records an input (weights, data or constants).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.index].value
    }

    /// Scalar value of a `1×1` variable.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.index].value[[0, 0]]
    }

    /// Records `primitive` applied to `inputs` and returns its output.
    pub fn record(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != primitive.arity() {
            return Err(Error::ShapeMismatch {
                op: primitive.name(),
                lhs: (inputs.len(), 0),
                rhs: (primitive.arity(), 0),
            });
        }
        let ids = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let name = primitive.name();
        let shape = |i: usize| inputs[i].shape();
        let mismatch = |lhs, rhs| Error::ShapeMismatch { op: name, lhs, rhs };

        let (op, value) = match primitive {
            Primitive::MatMul => {
                let (a, b) = (shape(0), shape(1));
                if a.1 != b.0 {
                    return Err(mismatch(a, b));
                }
                let value = self.nodes[ids[0]].value.dot(&self.nodes[ids[1]].value);
                (Op::MatMul(ids[0], ids[1]), value)
            }
            Primitive::Add => {
                let (a, b) = (shape(0), shape(1));
                let broadcast = if a == b {
                    false
                } else if b.0 == 1 && b.1 == a.1 {
                    true
                } else {
                    return Err(mismatch(a, b));
                };
                let value = &self.nodes[ids[0]].value + &self.nodes[ids[1]].value;
                (
                    Op::Add {
                        lhs: ids[0],
                        rhs: ids[1],
                        broadcast,
                    },
                    value,
                )
            }
            Primitive::Mul => {
                let (a, b) = (shape(0), shape(1));
                if a != b {
                    return Err(mismatch(a, b));
                }
                let value = &self.nodes[ids[0]].value * &self.nodes[ids[1]].value;
                (Op::Mul(ids[0], ids[1]), value)
            }
            Primitive::Relu => {
                let value = self.nodes[ids[0]].value.mapv(|x| if x > 0.0 { x } else { 0.0 });
                (Op::Relu(ids[0]), value)
            }
            Primitive::Tanh => (Op::Tanh(ids[0]), self.nodes[ids[0]].value.mapv(f64::tanh)),
            Primitive::Sigmoid => (
                Op::Sigmoid(ids[0]),
                self.nodes[ids[0]].value.mapv(sigmoid),
            ),
            Primitive::Scale => {
                let s = shape(1);
                if s != (1, 1) {
                    return Err(mismatch(shape(0), s));
                }
                let factor = self.nodes[ids[1]].value[[0, 0]];
                let value = &self.nodes[ids[0]].value * factor;
                (Op::Scale(ids[0], ids[1]), value)
            }
            Primitive::Sum => {
                let total = self.nodes[ids[0]].value.sum();
                (Op::Sum(ids[0]), Array2::from_elem((1, 1), total))
            }
            Primitive::SoftmaxCrossEntropy { labels } => {
                let (rows, cols) = shape(0);
                if labels.len() != rows {
                    return Err(mismatch((rows, cols), (labels.len(), 1)));
                }
                if rows == 0 {
                    return Err(Error::Empty("cross-entropy batch"));
                }
                if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= cols)
                {
                    return Err(Error::LabelOutOfRange {
                        row,
                        label,
                        classes: cols,
                    });
                }
                let probs = softmax_rows(&self.nodes[ids[0]].value);
                let loss = labels
                    .iter()
                    .enumerate()
                    .map(|(r, &l)| -probs[[r, l]].max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>()
                    / rows as f64;
                (
                    Op::SoftmaxCrossEntropy {
                        logits: ids[0],
                        labels,
                        probs,
                    },
                    Array2::from_elem((1, 1), loss),
                )
            }
            Primitive::MeanSquaredError => {
                let (a, b) = (shape(0), shape(1));
                if a != b {
                    return Err(mismatch(a, b));
                }
                let count = (a.0 * a.1) as f64;
                if count == 0.0 {
                    return Err(Error::Empty("mean-squared-error batch"));
                }
                let diff = &self.nodes[ids[0]].value - &self.nodes[ids[1]].value;
                let loss = diff.mapv(|d| d * d).sum() / count;
                (
                    Op::MeanSquaredError(ids[0], ids[1]),
                    Array2::from_elem((1, 1), loss),
                )
            }
            Primitive::SoftmaxRow => {
                if shape(0).1 == 0 {
                    return Err(Error::Empty("softmax row"));
                }
                (Op::SoftmaxRow(ids[0]), softmax_rows(&self.nodes[ids[0]].value))
            }
            Primitive::Pick { row, col } => {
                let s = shape(0);
                if row >= s.0 || col >= s.1 {
                    return Err(mismatch(s, (row, col)));
                }
                let value = Array2::from_elem((1, 1), self.nodes[ids[0]].value[[row, col]]);
                (
                    Op::Pick {
                        input: ids[0],
                        row,
                        col,
                    },
                    value,
                )
            }
        };
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::Relu, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::Sigmoid, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: Var) -> Result<Var> {
        self.record(Primitive::Scale, &[x, factor])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::Sum, &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.record(
            Primitive::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    pub fn mean_squared_error(&mut self, prediction: Var, target: Var) -> Result<Var> {
        self.record(Primitive::MeanSquaredError, &[prediction, target])
    }

    pub fn softmax_row(&mut self, x: Var) -> Result<Var> {
        self.record(Primitive::SoftmaxRow, &[x])
    }

    pub fn pick(&mut self, x: Var, row: usize, col: usize) -> Result<Var> {
        self.record(Primitive::Pick { row, col }, &[x])
    }

    /// Reverse sweep from the scalar `output`, returning `d output / d v`
    /// for each `v` in `wrt`. Variables that do not influence `output`
    /// receive a zero matrix.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<Matrix>> {
        let out = self.check(output)?;
        if output.shape() != (1, 1) {
            return Err(Error::NotScalar(output.shape()));
        }
        for &v in wrt {
            self.check(v)?;
        }

        let mut kept: HashMap<usize, Option<Matrix>> =
            wrt.iter().map(|v| (v.index, None)).collect();
        let mut adjoints: Vec<Option<Matrix>> = (0..=out).map(|_| None).collect();
        adjoints[out] = Some(Array2::ones((1, 1)));

        for index in (0..=out).rev() {
            let Some(grad) = adjoints[index].take() else {
                continue;
            };
            let saved = kept.contains_key(&index).then(|| grad.clone());
            let node = &self.nodes[index];
            let value = |i: usize| &self.nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&value(*b).t());
                    let gb = value(*a).t().dot(&grad);
                    accumulate(&mut adjoints, *a, ga);
                    accumulate(&mut adjoints, *b, gb);
                }
                Op::Add { lhs, rhs, broadcast } => {
                    let grhs = if *broadcast {
                        grad.sum_axis(Axis(0)).insert_axis(Axis(0))
                    } else {
                        grad.clone()
                    };
                    accumulate(&mut adjoints, *lhs, grad);
                    accumulate(&mut adjoints, *rhs, grhs);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * value(*b);
                    let gb = &grad * value(*a);
                    accumulate(&mut adjoints, *a, ga);
                    accumulate(&mut adjoints, *b, gb);
                }
                Op::Relu(x) => {
                    let mut g = grad;
                    g.zip_mut_with(&node.value, |g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut adjoints, *x, g);
                }
                Op::Tanh(x) => {
                    let mut g = grad;
                    g.zip_mut_with(&node.value, |g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut adjoints, *x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = grad;
                    g.zip_mut_with(&node.value, |g, &y| *g *= y * (1.0 - y));
                    accumulate(&mut adjoints, *x, g);
                }
                Op::Scale(x, s) => {
                    let factor = value(*s)[[0, 0]];
                    let gs = (&grad * value(*x)).sum();
                    accumulate(&mut adjoints, *x, grad * factor);
                    accumulate(&mut adjoints, *s, Array2::from_elem((1, 1), gs));
                }
                Op::Sum(x) => {
                    let g = Array2::from_elem(value(*x).dim(), grad[[0, 0]]);
                    accumulate(&mut adjoints, *x, g);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = grad[[0, 0]] / labels.len() as f64;
                    let mut g = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        g[[r, l]] -= 1.0;
                    }
                    g *= scale;
                    accumulate(&mut adjoints, *logits, g);
                }
                Op::MeanSquaredError(p, t) => {
                    let count = value(*p).len() as f64;
                    let diff = value(*p) - value(*t);
                    let gp = diff * (2.0 * grad[[0, 0]] / count);
                    let gt = -&gp;
                    accumulate(&mut adjoints, *p, gp);
                    accumulate(&mut adjoints, *t, gt);
                }
                Op::SoftmaxRow(x) => {
                    let y = &node.value;
                    let dot = (&grad * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let g = y * &(&grad - &dot);
                    accumulate(&mut adjoints, *x, g);
                }
                Op::Pick { input, row, col } => {
                    let mut g = Array2::zeros(value(*input).dim());
                    g[[*row, *col]] = grad[[0, 0]];
                    accumulate(&mut adjoints, *input, g);
                }
            }
            if let Some(slot) = kept.get_mut(&index) {
                *slot = Some(saved.expect("requested adjoint saved"));
            }
        }

        Ok(wrt
            .iter()
            .map(|v| {
                kept.get(&v.index)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| Array2::zeros(v.shape()))
            })
            .collect())
    }
}

fn accumulate(adjoints: &mut [Option<Matrix>], index: usize, grad: Matrix) {
    match &mut adjoints[index] {
        Some(existing) => *existing += &grad,
        slot @ None => *slot = Some(grad),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    out
}

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Matrix, step: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::NonFinite(format!("step must be positive, got {step}")));
    }
    let mut probe = x.clone();
    let mut grad = Array2::zeros(x.dim());
    for (idx, &base) in x.indexed_iter() {
        probe[idx] = base + step;
        let plus = f(&probe);
        probe[idx] = base - step;
        let minus = f(&probe);
        probe[idx] = base;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "f is not finite around coordinate {idx:?} ({plus}, {minus})"
            )));
        }
        grad[idx] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let na = a.mapv(|x| x * x).sum().sqrt();
    let nb = b.mapv(|x| x * x).sum().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn add_matmul_relu_forward() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]]);
        let b = tape.leaf(array![[3.0, 4.0]]);
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s), &array![[4.0, 6.0]]);

        let eye = tape.leaf(Array2::eye(2));
        let x = tape.leaf(array![[0.3], [-0.7]]);
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let r = tape.leaf(array![[-1.0, 2.0]]);
        let out = tape.relu(r).unwrap();
        assert_eq!(tape.value(out), &array![[0.0, 2.0]]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let b = tape.leaf(Array2::zeros((2, 3)));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn square_and_relu_gradients() {
        let mut tape = Tape::new();
        let x = tape.scalar(3.0);
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.gradient(y, &[x]).unwrap()[0][[0, 0]], 6.0);

        let mut tape = Tape::new();
        let x = tape.leaf(array![[-1.0, 2.0]]);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        assert_eq!(tape.gradient(s, &[x]).unwrap()[0], array![[0.0, 1.0]]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[0.0]]);
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        assert_eq!(tape.gradient(s, &[x]).unwrap()[0][[0, 0]], 0.0);
    }

    #[test]
    fn gradient_rejects_non_scalar_and_foreign() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((2, 2)));
        assert!(matches!(tape.gradient(x, &[x]), Err(Error::NotScalar((2, 2)))));
        let mut other = Tape::new();
        let y = other.scalar(1.0);
        let s = tape.sum(x).unwrap();
        assert!(matches!(tape.gradient(s, &[y]), Err(Error::ForeignVar(_))));
    }

    #[test]
    fn unrelated_var_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        let unused = tape.leaf(array![[5.0]]);
        let s = tape.sum(x).unwrap();
        let g = tape.gradient(s, &[unused, x]).unwrap();
        assert_eq!(g[0], array![[0.0]]);
        assert_eq!(g[1], array![[1.0, 1.0]]);
    }

    #[test]
    fn finite_difference_examples() {
        let x = array![[3.0]];
        let g = finite_difference_gradient(|m| m[[0, 0]] * m[[0, 0]], &x, 1e-4).unwrap();
        assert!((g[[0, 0]] - 6.0).abs() < 1e-7);

        let x = array![[0.4, -2.0, 7.5]];
        let g = finite_difference_gradient(|m| m.sum(), &x, 1e-4).unwrap();
        for v in g.iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }

        let g = finite_difference_gradient(|m| m[[0, 0]].tanh(), &array![[0.0]], 1e-4).unwrap();
        assert!((g[[0, 0]] - 1.0).abs() < 1e-8);

        assert!(finite_difference_gradient(|m| m.sum(), &x, 0.0).is_err());
        assert!(finite_difference_gradient(|_| f64::NAN, &x, 1e-4).is_err());
    }

    #[test]
    fn cross_entropy_of_linear_map_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let w = random(&mut rng, 3, 3);
            let x = random(&mut rng, 4, 3);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let eval = |w: &Matrix| {
                let mut tape = Tape::new();
                let wv = tape.leaf(w.clone());
                let xv = tape.leaf(x.clone());
                let logits = tape.matmul(xv, wv).unwrap();
                let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
                (tape, wv, loss)
            };
            let (tape, wv, loss) = eval(&w);
            let g = tape.gradient(loss, &[wv]).unwrap().remove(0);
            let fd = finite_difference_gradient(
                |m| {
                    let (t, _, l) = eval(m);
                    t.scalar_value(l)
                },
                &w,
                1e-4,
            )
            .unwrap();
            assert!(relative_error(&g, &fd) < 1e-5);
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random(&mut rng, 4, 4);
        let x = random(&mut rng, 6, 4);
        let run = || {
            let mut tape = Tape::new();
            let wv = tape.leaf(w.clone());
            let xv = tape.leaf(x.clone());
            let h = tape.matmul(xv, wv).unwrap();
            let h = tape.tanh(h).unwrap();
            let loss = tape.softmax_cross_entropy(h, &[0, 1, 2, 3, 0, 1]).unwrap();
            tape.gradient(loss, &[wv, xv]).unwrap()
        };
        let a = run();
        let b = run();
        for (ga, gb) in a.iter().zip(&b) {
            assert!(ga.iter().zip(gb).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
