use crate::autodiff::{Axis, Reduction, Tape, Tensor};
use crate::error::Result;

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the weighted row sums of `A + I`.
///
/// Weighted input is accepted, which is how a learned adjacency reaches the
/// student. Isolated nodes keep a self-loop of weight 1.
pub fn gcn_normalize(a: &Tensor) -> Tensor {
    let n = a.rows();
    let d = a.data();
    let deg: Vec<f64> = (0..n).map(|u| d[u * n..(u + 1) * n].iter().sum::<f64>() + 1.0).collect();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let m = d[u * n + v] + if u == v { 1.0 } else { 0.0 };
            out[u * n + v] = m / (deg[u] * deg[v]).sqrt();
        }
    }
    Tensor::new(n, n, out).expect("square input")
}

/// [`gcn_normalize`] recorded on a tape, so gradients reach a tracked `a`.
pub fn gcn_normalize_on_tape(tape: &mut Tape, a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let m = tape.add(a, &Tensor::eye(n))?;
    let deg = tape.reduce(Reduction::Sum, &m, Some(Axis::Cols))?;
    let root = tape.sqrt(&deg)?;
    let dinv = tape.div(&Tensor::ones(n, 1), &root)?;
    let left = tape.mul(&m, &dinv)?;
    let dinv_row = tape.transpose(&dinv)?;
    tape.mul(&left, &dinv_row)
}
