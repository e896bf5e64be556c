//! Central finite-difference gradient checks.

use super::{Tape, Var};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Norms below this are compared in absolute terms.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// Largest `‖a − n‖ / max(‖a‖, ‖n‖)` over the inputs, where `a` and `n`
    /// are the analytic and numeric gradients restricted to the checked
    /// coordinates of one input.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Coordinates whose ±h evaluations took a different ReLU or max-pool
    /// branch than the base point, where the finite difference is not a
    /// derivative estimate.
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(self, other: Self) -> Self {
        Self {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            max_abs_err: self.max_abs_err.max(other.max_abs_err),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// Compares backpropagated gradients of the scalar `f(inputs)` against
/// central differences with step `h`.
///
/// `coords` lists `(input, element)` pairs to check; `None` checks every
/// element of every input.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, coords: Option<&[(usize, usize)]>, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(f64, Vec<usize>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            bail!(Contract, "gradcheck needs a scalar function");
        }
        Ok((tape.value(out).data()[0], tape.branch_pattern()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let base_pattern = tape.branch_pattern();
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, x)| (0..x.len()).map(move |e| (i, e)))
                .collect();
            &all
        }
    };
    let mut report = GradCheck::default();
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); inputs.len()];
    let mut xs = inputs.to_vec();
    for &(i, e) in coords {
        let orig = xs[i].data()[e];
        xs[i].data_mut()[e] = orig + h;
        let (fp, pp) = eval(&xs)?;
        xs[i].data_mut()[e] = orig - h;
        let (fm, pm) = eval(&xs)?;
        xs[i].data_mut()[e] = orig;
        if pp != base_pattern || pm != base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i].data()[e];
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        pairs[i].0.push(a);
        pairs[i].1.push(numeric);
        report.checked += 1;
    }
    for (a, n) in &pairs {
        if !a.is_empty() {
            report.max_rel_err = report.max_rel_err.max(rel_err(a, n));
        }
    }
    Ok(report)
}
