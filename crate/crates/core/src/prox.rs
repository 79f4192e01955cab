//! Proximal operators for the architecture constraint sets.
//!
//! * `C1 = {a : ‖a‖₀ = 1}` (exactly one nonzero),
//! * `C2 = {a : 0 ≤ a_k ≤ 1}` (unit box),
//! * `C = C1 ∩ C2`.
//!
//! Every operator breaks ties toward the lowest index.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    C1,
    C2,
    C,
}

impl ConstraintSet {
    pub fn contains(self, a: &[f64]) -> bool {
        let in_box = || a.iter().all(|&x| (0.0..=1.0).contains(&x));
        let one_nonzero = || a.iter().filter(|&&x| x != 0.0).count() == 1;
        match self {
            ConstraintSet::C1 => one_nonzero(),
            ConstraintSet::C2 => in_box(),
            ConstraintSet::C => one_nonzero() && in_box(),
        }
    }

    pub fn project(self, a: &[f64]) -> Result<Vec<f64>> {
        match self {
            ConstraintSet::C1 => prox_c1(a),
            ConstraintSet::C2 => prox_c2(a),
            ConstraintSet::C => prox_c(a).map(|p| p.values),
        }
    }
}

/// Result of projecting onto `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    /// Selected coordinate.
    pub index: usize,
    /// Value kept at `index`, in `[0, 1]`.
    pub coefficient: f64,
    /// Set when no entry is positive: the minimum over `C` is not attained
    /// and `values` is all zeros with `index` at the lowest coordinate.
    pub degenerate: bool,
}

fn check_finite(a: &[f64]) -> Result<()> {
    match a.iter().position(|x| x.is_nan()) {
        Some(i) => Err(Error::NonFinite(format!("NaN at coordinate {i}"))),
        None => Ok(()),
    }
}

fn check_nonempty(a: &[f64]) -> Result<()> {
    if a.is_empty() {
        Err(Error::Empty("proximal operator input"))
    } else {
        Ok(())
    }
}

fn clip_unit(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else if x <= 1.0 {
        x
    } else {
        1.0
    }
}

/// Projection onto the unit box.
pub fn prox_c2(a: &[f64]) -> Result<Vec<f64>> {
    check_finite(a)?;
    Ok(a.iter().map(|&x| clip_unit(x)).collect())
}

/// Projection onto 1-sparse vectors: keeps the entry of largest magnitude.
pub fn prox_c1(a: &[f64]) -> Result<Vec<f64>> {
    check_nonempty(a)?;
    check_finite(a)?;
    let keep = argmax_by(a, |x| x * x);
    let mut out = vec![0.0; a.len()];
    out[keep] = a[keep];
    Ok(out)
}

/// Projection onto `C`.
///
/// Selecting coordinate `i` with coefficient `c_i = clip(a_i, 0, 1)` leaves a
/// residual `½‖a‖² − (a_i c_i − ½c_i²)`, so the minimizer maximizes
/// `a_i c_i − ½c_i²`.
pub fn prox_c(a: &[f64]) -> Result<Projection> {
    check_nonempty(a)?;
    check_finite(a)?;
    let index = argmax_by(a, |x| {
        let c = clip_unit(x);
        x * c - 0.5 * c * c
    });
    let coefficient = clip_unit(a[index]);
    let degenerate = coefficient == 0.0;
    if degenerate {
        log::warn!(
            "projection onto C has no attained minimizer (no positive entry in {a:?}); \
             returning coordinate {index} with coefficient 0"
        );
    }
    let mut values = vec![0.0; a.len()];
    values[index] = coefficient;
    Ok(Projection {
        values,
        index,
        coefficient,
        degenerate,
    })
}

/// Reference projection onto `C` by enumeration: for every coordinate, take
/// the optimal clipped coefficient, evaluate the full objective
/// `½‖a − c_i e_i‖²` and keep the smallest.
pub fn prox_c_bruteforce(a: &[f64]) -> Result<Vec<f64>> {
    check_nonempty(a)?;
    check_finite(a)?;
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..a.len() {
        let c = if a[i] < 0.0 {
            0.0
        } else if a[i] <= 1.0 {
            a[i]
        } else {
            1.0
        };
        let objective = 0.5
            * a.iter()
                .enumerate()
                .map(|(j, &x)| {
                    let r = if j == i { x - c } else { x };
                    r * r
                })
                .sum::<f64>();
        if best.is_none_or(|(b, _, _)| objective < b) {
            best = Some((objective, i, c));
        }
    }
    let (_, i, c) = best.expect("nonempty input");
    let mut out = vec![0.0; a.len()];
    out[i] = c;
    Ok(out)
}

/// First index maximizing `score`.
fn argmax_by(a: &[f64], score: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = score(a[0]);
    for (i, &x) in a.iter().enumerate().skip(1) {
        let s = score(x);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}
