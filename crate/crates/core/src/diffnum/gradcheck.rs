use serde::Serialize;

use super::params::{BoundParams, ParamSet};
use super::tape::{Gradients, Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Coordinates checked per parameter when it has more than this many entries.
pub const MIN_COORDS_PER_PARAM: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_analytic_abs: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub fd_step: f64,
    pub tol: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// Evaluates `loss_fn` on a fresh tape and returns the loss with its
/// gradients for every trainable parameter.
pub fn forward_backward<'g, F>(params: &ParamSet, loss_fn: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&Tape<'g>, &BoundParams) -> Result<Var>,
{
    let tape: Tape<'g> = Tape::new();
    let bound = params.bind(&tape)?;
    let loss = loss_fn(&tape, &bound)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

fn loss_only<'g, F>(params: &ParamSet, loss_fn: &F) -> Result<f64>
where
    F: Fn(&Tape<'g>, &BoundParams) -> Result<Var>,
{
    let tape: Tape<'g> = Tape::new();
    let bound = params.bind(&tape)?;
    let loss = loss_fn(&tape, &bound)?;
    let value = tape.value(loss).data()[0];
    Ok(value)
}

/// Compares analytic gradients against central differences
/// `(f(x + h) - f(x - h)) / 2h`. Parameters larger than `max_coords`
/// entries are checked on an evenly strided subset of at least
/// [`MIN_COORDS_PER_PARAM`] coordinates.
pub fn grad_check<'g, F>(
    params: &ParamSet,
    loss_fn: F,
    fd_step: f64,
    tol: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<'g>, &BoundParams) -> Result<Var>,
{
    let (loss, grads) = forward_backward(params, &loss_fn)?;
    let max_coords = max_coords.max(MIN_COORDS_PER_PARAM);
    let mut probe = params.clone();
    let mut checks = Vec::new();

    for (name, analytic) in &grads {
        let n = analytic.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|i| i * n / max_coords).collect()
        };
        let original = params.tensor(name)?.clone();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut max_analytic = 0.0f64;
        for &c in &coords {
            let mut plus = original.clone();
            plus.data_mut()[c] += fd_step;
            probe.set(name, plus)?;
            let f_plus = loss_only(&probe, &loss_fn)?;

            let mut minus = original.clone();
            minus.data_mut()[c] -= fd_step;
            probe.set(name, minus)?;
            let f_minus = loss_only(&probe, &loss_fn)?;

            let numeric = (f_plus - f_minus) / (2.0 * fd_step);
            let a = analytic.data()[c];
            let abs_err = (a - numeric).abs();
            let rel_err = abs_err / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            max_abs = max_abs.max(abs_err);
            max_rel = max_rel.max(rel_err);
            max_analytic = max_analytic.max(a.abs());
        }
        probe.set(name, original)?;
        checks.push(ParamCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            max_analytic_abs: max_analytic,
            passed: max_rel < tol,
        });
    }

    Ok(GradCheckReport {
        fd_step,
        tol,
        loss,
        params: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::{ParamKind, Tensor};

    fn params(values: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::row_vector(values), ParamKind::Weight)
            .unwrap();
        p
    }

    #[test]
    fn linear_loss_is_exact() {
        let p = params(vec![0.3, -1.2, 4.0]);
        let report = grad_check(
            &p,
            |tape, b| {
                let c = tape.constant(Tensor::row_vector(vec![2.0, -1.0, 0.5]))?;
                let m = tape.mul(b.var("p")?, c)?;
                tape.sum(m)
            },
            1e-5,
            1e-10,
            64,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let p = params(vec![3.0, 4.0, -0.5]);
        let report = grad_check(
            &p,
            |tape, b| {
                let x = b.var("p")?;
                let sq = tape.mul(x, x)?;
                let s = tape.sum(sq)?;
                tape.scale(s, 0.5)
            },
            1e-5,
            1e-8,
            64,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        // relu kink inside the finite-difference stencil makes the two disagree
        let p = params(vec![0.0]);
        let report = grad_check(
            &p,
            |tape, b| {
                let r = tape.relu(b.var("p")?)?;
                tape.sum(r)
            },
            1e-3,
            1e-4,
            64,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }
}
