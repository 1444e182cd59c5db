//! Central-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::shape("grad_check", value.shape(), &[1]));
    }
    Ok(value.item())
}

/// Compares reverse-mode gradients of the scalar function `f` with central
/// differences of step `h` at every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, mode: ExecMode) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync + Send,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(Error::NonFinite("grad_check: output at base point".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();

    let errors = exec::map(mode, &coords, |&(i, j)| -> Result<f64> {
        let mut plus = inputs.to_vec();
        plus[i].values_mut()[j] += h;
        let mut minus = inputs.to_vec();
        minus[i].values_mut()[j] -= h;
        let (fp, fm) = (eval(&f, &plus)?, eval(&f, &minus)?);
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check: input {i}, coordinate {j}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        Ok((analytic[i][j] - numeric).abs() / numeric.abs().max(1.0))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: coords.len(),
    };
    for (err, coord) in errors.into_iter().zip(coords) {
        let err = err?;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = coord;
        }
    }
    Ok(report)
}
