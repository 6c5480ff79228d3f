use rand::Rng;

use crate::autodiff::{glorot, ParamSet, Tape, Tensor};
use crate::error::Result;

/// Layer-1 attention of a forward pass, one matrix per head. Row `v` holds
/// the coefficients node `v` assigns to its closed neighbourhood.
#[derive(Clone, Debug)]
pub struct GatAttention {
    pub alpha: Vec<Tensor>,
    /// Pre-softmax scores `e`, with entries outside the neighbourhood left as
    /// computed (they are masked only inside the softmax).
    pub scores: Vec<Tensor>,
}

impl GatAttention {
    /// Head-averaged coefficients.
    pub fn mean_alpha(&self) -> Tensor {
        let heads = self.alpha.len() as f64;
        let first = &self.alpha[0];
        let mut acc = vec![0.0; first.len()];
        for a in &self.alpha {
            for (s, v) in acc.iter_mut().zip(a.data()) {
                *s += v;
            }
        }
        Tensor::new(first.rows(), first.cols(), acc.into_iter().map(|v| v / heads).collect()).expect("same shape")
    }
}

/// Closed-neighbourhood mask: `adjacency[v][u] != 0` or `u == v`.
pub fn closed_neighbourhood(adjacency: &Tensor) -> Vec<bool> {
    let n = adjacency.rows();
    (0..n * n).map(|i| i / n == i % n || adjacency.data()[i] != 0.0).collect()
}

/// Parameters `{prefix}.l{l}.h{k}.w` and `{prefix}.l{l}.h{k}.a`; the
/// attention vector is `2·d_out x 1`, target half first.
pub fn init_gat<R: Rng>(rng: &mut R, prefix: &str, dims: &[usize], heads: usize) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    for (l, pair) in dims.windows(2).enumerate() {
        for k in 0..heads {
            p.insert(&format!("{prefix}.l{l}.h{k}.w"), glorot(rng, pair[0], pair[1]))?;
            p.insert(&format!("{prefix}.l{l}.h{k}.a"), glorot(rng, 2 * pair[1], 1))?;
        }
    }
    Ok(p)
}

/// One attention head: `e_vu = LeakyReLU(a₁·Wh_v + a₂·Wh_u)`, `α = softmax`
/// over the closed neighbourhood, output `α (HW)`.
fn head(tape: &mut Tape, w: &Tensor, a: &Tensor, h: &Tensor, mask: &[bool], slope: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let d_out = w.cols();
    let wh = tape.matmul(h, w)?;
    let first: Vec<bool> = (0..2 * d_out).map(|i| i < d_out).collect();
    let second: Vec<bool> = first.iter().map(|b| !b).collect();
    let a1 = tape.slice_rows(a, &first)?;
    let a2 = tape.slice_rows(a, &second)?;
    let target = tape.matmul(&wh, &a1)?;
    let source = tape.matmul(&wh, &a2)?;
    let source_row = tape.transpose(&source)?;
    let raw = tape.outer_sum(&target, &source_row)?;
    let e = tape.leaky_relu(&raw, slope)?;
    let alpha = tape.masked_row_softmax(&e, mask)?;
    let out = tape.matmul(&alpha, &wh)?;
    Ok((out, alpha, e))
}

/// Multi-head GAT with heads averaged, ReLU between layers and identity after
/// the last. Returns the embeddings and layer-1 attention.
pub fn gat_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    layers: usize,
    heads: usize,
    slope: f64,
    mask: &[bool],
    x: &Tensor,
) -> Result<(Tensor, GatAttention)> {
    let mut h = x.clone();
    let mut attention = GatAttention {
        alpha: Vec::new(),
        scores: Vec::new(),
    };
    for l in 0..layers {
        let mut sum: Option<Tensor> = None;
        for k in 0..heads {
            let w = params.get(&format!("{prefix}.l{l}.h{k}.w"))?;
            let a = params.get(&format!("{prefix}.l{l}.h{k}.a"))?;
            let (out, alpha, e) = head(tape, w, a, &h, mask, slope)?;
            if l == 0 {
                attention.alpha.push(alpha.detach());
                attention.scores.push(e.detach());
            }
            sum = Some(match sum {
                None => out,
                Some(s) => tape.add(&s, &out)?,
            });
        }
        let mut next = sum.expect("at least one head");
        if heads > 1 {
            next = tape.scale(&next, 1.0 / heads as f64)?;
        }
        if l + 1 < layers {
            next = tape.relu(&next)?;
        }
        h = next;
    }
    Ok((h, attention))
}
