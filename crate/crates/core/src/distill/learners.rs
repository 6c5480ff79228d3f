use rand::Rng;

use crate::autodiff::{glorot, PairMlpWeights, PairMode, ParamSet, Tape, Tensor};
use crate::error::Result;
use crate::models::{init_mlp, mlp_forward};

pub const FEATURE_PREFIX: &str = "feat";
pub const STRUCTURE_PREFIX: &str = "struct";

/// Feature learner `f_φ`: a two-layer perceptron `d_h → d_f`.
pub fn init_feature_learner<R: Rng>(rng: &mut R, d_h: usize, hidden: usize, d_f: usize) -> Result<ParamSet> {
    init_mlp(rng, FEATURE_PREFIX, d_h, hidden, d_f)
}

/// `Z = f_φ(H)`, one row per node.
pub fn feature_learner_forward(tape: &mut Tape, params: &ParamSet, h: &Tensor) -> Result<Tensor> {
    mlp_forward(tape, params, FEATURE_PREFIX, h)
}

/// Structure learner `f_a`: a two-layer perceptron on node pairs with a
/// sigmoid output. The first-layer weight is stored as two `d_h x k` blocks
/// acting on the two halves of the pair encoding.
pub fn init_structure_learner<R: Rng>(rng: &mut R, d_h: usize, hidden: usize) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let first = glorot(rng, 2 * d_h, hidden);
    let top = Tensor::new(d_h, hidden, first.data()[..d_h * hidden].to_vec())?;
    let bottom = Tensor::new(d_h, hidden, first.data()[d_h * hidden..].to_vec())?;
    p.insert(&format!("{STRUCTURE_PREFIX}.w_first"), top)?;
    p.insert(&format!("{STRUCTURE_PREFIX}.w_second"), bottom)?;
    p.insert(&format!("{STRUCTURE_PREFIX}.b1"), Tensor::zeros(1, hidden))?;
    p.insert(&format!("{STRUCTURE_PREFIX}.w2"), glorot(rng, hidden, 1))?;
    p.insert(&format!("{STRUCTURE_PREFIX}.b2"), Tensor::zeros(1, 1))?;
    Ok(p)
}

/// `W_uv = f_a(pair(h_u, h_v))` with zero diagonal. Undirected graphs encode
/// the pair as `[h_u + h_v ∥ |h_u − h_v|]`, so `W` is exactly symmetric;
/// directed graphs use `[h_u ∥ h_v]`.
pub fn structure_learner_forward(tape: &mut Tape, params: &ParamSet, h: &Tensor, directed: bool) -> Result<Tensor> {
    let p = |name: &str| params.get(&format!("{STRUCTURE_PREFIX}.{name}")).cloned();
    let weights = PairMlpWeights {
        w_first: p("w_first")?,
        w_second: p("w_second")?,
        b1: p("b1")?,
        w2: p("w2")?,
        b2: p("b2")?,
    };
    let mode = if directed { PairMode::Directed } else { PairMode::Symmetric };
    tape.pair_mlp(mode, h, &weights)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn h() -> Tensor {
        Tensor::from_rows(&[[0.1, -0.4, 0.9], [1.2, 0.3, -0.7], [0.1, -0.4, 0.9], [-0.5, 0.8, 0.2]])
    }

    #[test]
    fn zero_feature_learner_gives_zero_features() {
        let mut p = init_feature_learner(&mut ChaCha8Rng::seed_from_u64(1), 3, 4, 2).unwrap();
        for name in p.names().map(str::to_string).collect::<Vec<_>>() {
            let shape = p.get(&name).unwrap().shape();
            p.set(&name, Tensor::zeros(shape.0, shape.1)).unwrap();
        }
        let z = feature_learner_forward(&mut Tape::new(), &p, &h()).unwrap();
        assert_eq!(z, Tensor::zeros(4, 2));
    }

    #[test]
    fn feature_learner_is_row_wise() {
        let p = init_feature_learner(&mut ChaCha8Rng::seed_from_u64(2), 3, 4, 1).unwrap();
        let z = feature_learner_forward(&mut Tape::new(), &p, &h()).unwrap();
        let perm = [2, 0, 3, 1];
        let hp = Tensor::from_rows(&perm.iter().map(|&i| h().row(i).to_vec()).collect::<Vec<_>>());
        let zp = feature_learner_forward(&mut Tape::new(), &p, &hp).unwrap();
        for (u, &i) in perm.iter().enumerate() {
            assert_eq!(zp.row(u), z.row(i));
        }
    }

    #[test]
    fn undirected_weights_are_symmetric_in_unit_interval() {
        let p = init_structure_learner(&mut ChaCha8Rng::seed_from_u64(3), 3, 5).unwrap();
        let w = structure_learner_forward(&mut Tape::new(), &p, &h(), false).unwrap();
        for u in 0..4 {
            assert_eq!(w.get(u, u), 0.0);
            for v in 0..4 {
                assert_eq!(w.get(u, v).to_bits(), w.get(v, u).to_bits());
                assert!((0.0..=1.0).contains(&w.get(u, v)));
            }
        }
        let directed = structure_learner_forward(&mut Tape::new(), &p, &h(), true).unwrap();
        assert_ne!(directed.get(0, 1), directed.get(1, 0));
    }

    #[test]
    fn zero_structure_learner_outputs_one_half() {
        let mut p = init_structure_learner(&mut ChaCha8Rng::seed_from_u64(4), 3, 5).unwrap();
        for name in p.names().map(str::to_string).collect::<Vec<_>>() {
            let shape = p.get(&name).unwrap().shape();
            p.set(&name, Tensor::zeros(shape.0, shape.1)).unwrap();
        }
        let w = structure_learner_forward(&mut Tape::new(), &p, &h(), false).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(w.get(u, v), if u == v { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn identical_embeddings_have_zero_difference_channel() {
        // rows 0 and 2 coincide, so the |h_u - h_v| block cannot matter for
        // that pair: scrambling it leaves W_02 unchanged
        let mut p = init_structure_learner(&mut ChaCha8Rng::seed_from_u64(5), 3, 5).unwrap();
        let before = structure_learner_forward(&mut Tape::new(), &p, &h(), false).unwrap();
        p.set("struct.w_second", Tensor::filled(3, 5, 7.0)).unwrap();
        let after = structure_learner_forward(&mut Tape::new(), &p, &h(), false).unwrap();
        assert_eq!(before.get(0, 2), after.get(0, 2));
        assert_ne!(before.get(0, 1), after.get(0, 1));
    }
}
