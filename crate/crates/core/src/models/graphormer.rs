//! A small Graphormer: global self-attention with a learned scalar bias per
//! shortest-path bucket, and a degree embedding added to the input.

use rand::Rng;

use crate::autodiff::{glorot, ParamSet, Tape, Tensor};
use crate::error::Result;
use crate::graphdata::SpdMatrix;

/// Degrees above this share the last centrality bucket.
pub const DEGREE_CAP: usize = 16;
/// Hop distances above this share the "far" spatial bucket.
pub const SPD_CAP: usize = 5;

/// Structural inputs computed once per graph.
#[derive(Clone, Debug)]
pub struct GraphormerInputs {
    /// Row-major SPD buckets, `0..=SPD_CAP + 1`.
    pub spd_buckets: Vec<usize>,
    /// Per-node degree bucket, `0..=DEGREE_CAP`.
    pub degree_buckets: Vec<usize>,
}

impl GraphormerInputs {
    pub fn new(spd: &SpdMatrix, degrees: &[usize]) -> Self {
        GraphormerInputs {
            spd_buckets: spd.buckets().to_vec(),
            degree_buckets: degrees.iter().map(|&d| d.min(DEGREE_CAP)).collect(),
        }
    }
}

/// Input projection, centrality table (`DEGREE_CAP + 1` rows), spatial bias
/// table (`SPD_CAP + 2` rows, zero-initialised) and per-layer Q/K/V/O and
/// feed-forward matrices.
pub fn init_graphormer<R: Rng>(rng: &mut R, prefix: &str, d_in: usize, hidden: usize, layers: usize) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    p.insert(&format!("{prefix}.in"), glorot(rng, d_in, hidden))?;
    p.insert(&format!("{prefix}.centrality"), glorot(rng, DEGREE_CAP + 1, hidden))?;
    p.insert(&format!("{prefix}.spatial"), Tensor::zeros(SPD_CAP + 2, 1))?;
    for l in 0..layers {
        for m in ["q", "k", "v", "o", "ff1", "ff2"] {
            p.insert(&format!("{prefix}.l{l}.{m}"), glorot(rng, hidden, hidden))?;
        }
    }
    Ok(p)
}

/// Forward pass; also returns the last layer's attention matrix.
pub fn graphormer_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    layers: usize,
    inputs: &GraphormerInputs,
    x: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let n = x.rows();
    let p = |name: &str| params.get(&format!("{prefix}.{name}"));
    let projected = tape.matmul(x, p("in")?)?;
    let centrality = tape.gather_rows(p("centrality")?, &inputs.degree_buckets)?;
    let mut h = tape.add(&projected, &centrality)?;

    let bias_flat = tape.gather_rows(p("spatial")?, &inputs.spd_buckets)?;
    let bias = tape.reshape(&bias_flat, n, n)?;
    let mut attention = Tensor::zeros(n, n);
    for l in 0..layers {
        let w = |m: &str| params.get(&format!("{prefix}.l{l}.{m}"));
        let d_k = w("q")?.cols() as f64;
        let q = tape.matmul(&h, w("q")?)?;
        let k = tape.matmul(&h, w("k")?)?;
        let v = tape.matmul(&h, w("v")?)?;
        let kt = tape.transpose(&k)?;
        let qk = tape.matmul(&q, &kt)?;
        let scaled = tape.scale(&qk, 1.0 / d_k.sqrt())?;
        let logits = tape.add(&scaled, &bias)?;
        let att = tape.row_softmax(&logits)?;
        let mixed = tape.matmul(&att, &v)?;
        let out = tape.matmul(&mixed, w("o")?)?;
        h = tape.add(&h, &out)?;

        let ff = tape.matmul(&h, w("ff1")?)?;
        let ff = tape.relu(&ff)?;
        let ff = tape.matmul(&ff, w("ff2")?)?;
        h = tape.add(&h, &ff)?;
        attention = att.detach();
    }
    Ok((h, attention))
}
