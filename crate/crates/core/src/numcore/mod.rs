//! Differentiable numerical core: tensors, a reverse-mode tape, Adam and
//! gradient checking. Everything is `f64`.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{clip_grad_norm, grad_norm, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Binder, Param, ParamSet};
pub use tape::{Grads, Reduction, Tape, Var};
pub use tensor::Tensor;

/// Squared cosine similarity of two vectors as a differentiable scalar.
pub fn cosine_sq(tape: &mut Tape, u: Var, v: Var, eps: f64) -> crate::Result<Var> {
    let rows = tape.cosine_sq_rows(u, v, eps)?;
    Ok(tape.sum(rows))
}

#[cfg(test)]
mod tests;
