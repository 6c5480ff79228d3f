use rand::Rng;

use crate::autodiff::{glorot, ParamSet, Tape, Tensor};
use crate::error::Result;

/// Weights `{prefix}.w{l}` for a chain of dimensions `dims[0] → … → dims[L]`.
pub fn init_gcn<R: Rng>(rng: &mut R, prefix: &str, dims: &[usize]) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    for (l, pair) in dims.windows(2).enumerate() {
        p.insert(&format!("{prefix}.w{l}"), glorot(rng, pair[0], pair[1]))?;
    }
    Ok(p)
}

/// `H⁽ˡ⁺¹⁾ = σ(Â H⁽ˡ⁾ W⁽ˡ⁾)` with ReLU between layers and identity after the
/// last. `a_norm` may be tracked, which lets gradients reach a learned
/// adjacency.
pub fn gcn_forward(tape: &mut Tape, params: &ParamSet, prefix: &str, layers: usize, a_norm: &Tensor, x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    for l in 0..layers {
        let hw = tape.matmul(&h, params.get(&format!("{prefix}.w{l}"))?)?;
        h = tape.matmul(a_norm, &hw)?;
        if l + 1 < layers {
            h = tape.relu(&h)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::graphdata::gcn_normalize;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut p = ParamSet::new();
        p.insert("g.w0", Tensor::zeros(2, 3)).unwrap();
        p.insert("g.w1", Tensor::zeros(3, 3)).unwrap();
        let a = gcn_normalize(&Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        let h = gcn_forward(&mut Tape::new(), &p, "g", 2, &a, &Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_identity_layer_passes_input_through() {
        let mut p = ParamSet::new();
        p.insert("g.w0", Tensor::eye(3)).unwrap();
        let one = Tensor::from_rows(&[[1.0]]);
        // the last layer is linear, so relu(x) is only recovered for x >= 0
        let x = Tensor::from_rows(&[[0.0, 0.5, 2.0]]);
        let h = gcn_forward(&mut Tape::new(), &p, "g", 1, &one, &x).unwrap();
        assert_eq!(h, x.map(|v| v.max(0.0)));
        let signed = Tensor::from_rows(&[[-1.0, 0.5]]);
        let mut p = ParamSet::new();
        p.insert("g.w0", Tensor::eye(2)).unwrap();
        assert_eq!(gcn_forward(&mut Tape::new(), &p, "g", 1, &one, &signed).unwrap(), signed);
    }

    #[test]
    fn complete_graph_with_equal_features_gives_equal_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = init_gcn(&mut rng, "g", &[2, 4, 4]).unwrap();
        let a = gcn_normalize(&Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        let x = Tensor::from_rows(&[[0.3, -0.7], [0.3, -0.7]]);
        let h = gcn_forward(&mut Tape::new(), &p, "g", 2, &a, &x).unwrap();
        assert_eq!(h.row(0), h.row(1));
    }
}
