use rand::Rng;

use crate::autodiff::{glorot, ParamSet, Tape, Tensor};
use crate::error::Result;

/// Name of the bias-free head matrix `U` (`d_h x C`).
pub const HEAD: &str = "head.u";

pub fn init_head<R: Rng>(rng: &mut R, hidden: usize, num_classes: usize) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    p.insert(HEAD, glorot(rng, hidden, num_classes))?;
    Ok(p)
}

/// Class logits `H U`.
pub fn predict(tape: &mut Tape, params: &ParamSet, h: &Tensor) -> Result<Tensor> {
    tape.matmul(h, params.get(HEAD)?)
}
