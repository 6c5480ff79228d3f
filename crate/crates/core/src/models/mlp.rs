use rand::Rng;

use crate::autodiff::{glorot, ParamSet, Tape, Tensor};
use crate::error::Result;

/// Two-layer perceptron weights `{prefix}.w1, b1, w2, b2`; biases start at 0.
pub fn init_mlp<R: Rng>(rng: &mut R, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    p.insert(&format!("{prefix}.w1"), glorot(rng, d_in, hidden))?;
    p.insert(&format!("{prefix}.b1"), Tensor::zeros(1, hidden))?;
    p.insert(&format!("{prefix}.w2"), glorot(rng, hidden, d_out))?;
    p.insert(&format!("{prefix}.b2"), Tensor::zeros(1, d_out))?;
    Ok(p)
}

/// `relu(x W₁ + b₁) W₂ + b₂`, applied row by row.
pub fn mlp_forward(tape: &mut Tape, params: &ParamSet, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let p = |name: &str| params.get(&format!("{prefix}.{name}"));
    let h = tape.matmul(x, p("w1")?)?;
    let h = tape.add(&h, p("b1")?)?;
    let h = tape.relu(&h)?;
    let out = tape.matmul(&h, p("w2")?)?;
    tape.add(&out, p("b2")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w1: Tensor, w2: Tensor) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("m.b1", Tensor::zeros(1, w1.cols())).unwrap();
        p.insert("m.b2", Tensor::zeros(1, w2.cols())).unwrap();
        p.insert("m.w1", w1).unwrap();
        p.insert("m.w2", w2).unwrap();
        p
    }

    #[test]
    fn zero_parameters_give_zero() {
        let p = params(Tensor::zeros(3, 4), Tensor::zeros(4, 2));
        let out = mlp_forward(&mut Tape::new(), &p, "m", &Tensor::from_rows(&[[1.0, -2.0, 3.0]])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_hidden_layer_composes_relu_with_output_map() {
        let w2 = Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        let p = params(Tensor::eye(2), w2.clone());
        let x = Tensor::from_rows(&[[-3.0, 2.0], [1.0, 1.0]]);
        let out = mlp_forward(&mut Tape::new(), &p, "m", &x).unwrap();
        let expect = crate::autodiff::matmul(&x.map(|v| v.max(0.0)), &w2).unwrap();
        assert_eq!(out, expect);
    }
}
