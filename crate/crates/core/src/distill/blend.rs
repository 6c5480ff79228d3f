use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

/// Negative similarities set to 0 and the diagonal cleared, ready to blend.
pub fn clamp_similarity(cos: &Tensor) -> Tensor {
    let n = cos.rows();
    let data = cos
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i / n == i % n { 0.0 } else { v.max(0.0) })
        .collect();
    Tensor::new(n, n, data).expect("n x n")
}

/// `Ã = (1 − γ) A + γ ((1 − β) W + β S)` with a zero diagonal. `S` must be
/// nonnegative (see [`clamp_similarity`]). `w` may be tracked; `a` and `s`
/// are constants.
pub fn blend_on_tape(tape: &mut Tape, a: &Tensor, w: &Tensor, s: &Tensor, gamma: f64, beta: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("blend weights γ={gamma}, β={beta} must lie in [0, 1]")));
    }
    let n = a.rows();
    for t in [w, s] {
        if t.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                op: "blend",
                left: a.shape(),
                right: t.shape(),
            });
        }
    }
    let fixed: Vec<f64> = (0..n * n)
        .map(|i| {
            if i / n == i % n {
                0.0
            } else {
                (1.0 - gamma) * a.data()[i] + gamma * beta * s.data()[i]
            }
        })
        .collect();
    let learned = tape.scale(w, gamma * (1.0 - beta))?;
    let learned = if w.data().iter().enumerate().any(|(i, &v)| i / n == i % n && v != 0.0) {
        let off_diagonal = Tensor::new(n, n, (0..n * n).map(|i| if i / n == i % n { 0.0 } else { 1.0 }).collect())?;
        tape.mul(&learned, &off_diagonal)?
    } else {
        learned
    };
    tape.add(&learned, &Tensor::new(n, n, fixed)?)
}

/// Constant version of [`blend_on_tape`].
pub fn blend_adjacency(a: &Tensor, w: &Tensor, s: &Tensor, gamma: f64, beta: f64) -> Result<Tensor> {
    Ok(blend_on_tape(&mut Tape::new(), &a.detach(), &w.detach(), &s.detach(), gamma, beta)?.detach())
}
