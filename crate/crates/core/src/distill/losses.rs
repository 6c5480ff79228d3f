//! The four training losses and the two split objectives built from them.

use crate::autodiff::{Axis, Reduction, Tape, Tensor, CLAMP_MIN};
use crate::error::{Error, Result};

fn mask_count(mask: &[bool]) -> Result<usize> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        c => Ok(c),
    }
}

/// Training nodes the teacher scored. Empty overlap is an error.
pub fn distill_mask(train: &[bool], available: &[bool]) -> Result<Vec<bool>> {
    if train.len() != available.len() {
        return Err(Error::InvalidData(format!(
            "teacher covers {} nodes, graph has {}",
            available.len(),
            train.len()
        )));
    }
    let mask: Vec<bool> = train.iter().zip(available).map(|(&t, &a)| t && a).collect();
    mask_count(&mask)?;
    Ok(mask)
}

/// Mean cross-entropy `−log softmax(logits)[y]` over masked nodes.
pub fn loss_cls(tape: &mut Tape, logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<Tensor> {
    let (n, c) = logits.shape();
    let count = mask_count(mask)? as f64;
    let mut pick = vec![0.0; n * c];
    for u in (0..n).filter(|&u| mask[u]) {
        pick[u * c + labels[u]] = -1.0 / count;
    }
    let log_p = tape.row_log_softmax(logits)?;
    let picked = tape.mul(&log_p, &Tensor::new(n, c, pick)?)?;
    tape.sum(&picked)
}

/// `τ² · mean KL(softmax(t/τ) ‖ softmax(s/τ))` over masked nodes. Teacher
/// logits are constants.
pub fn loss_dis(tape: &mut Tape, student: &Tensor, teacher: &Tensor, tau: f64, mask: &[bool]) -> Result<Tensor> {
    if student.shape() != teacher.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_dis",
            left: student.shape(),
            right: teacher.shape(),
        });
    }
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let (n, c) = student.shape();
    let count = mask_count(mask)? as f64;
    let scaled_t = teacher.map(|v| v / tau);
    let mut detached = Tape::new();
    let p_t = detached.row_softmax(&scaled_t)?;
    let log_p_t = detached.row_log_softmax(&scaled_t)?;

    // KL = Σ p_t log p_t − Σ p_t log p_s; the first sum is constant.
    let mut weights = vec![0.0; n * c];
    let mut entropy_term = 0.0;
    for u in (0..n).filter(|&u| mask[u]) {
        for k in 0..c {
            let p = p_t.get(u, k);
            weights[u * c + k] = -p / count;
            if p > 0.0 {
                entropy_term += p * log_p_t.get(u, k) / count;
            }
        }
    }
    let scaled_s = tape.scale(student, 1.0 / tau)?;
    let log_p_s = tape.row_log_softmax(&scaled_s)?;
    let cross = tape.mul(&log_p_s, &Tensor::new(n, c, weights)?)?;
    let cross = tape.sum(&cross)?;
    let kl = tape.add_scalar(&cross, entropy_term)?;
    tape.scale(&kl, tau * tau)
}

/// Mask selecting Gram entries that involve a generated column (index ≥ d),
/// diagonal excluded.
pub fn div_mask(d: usize, d_f: usize) -> Tensor {
    let m = d + d_f;
    let data = (0..m * m)
        .map(|i| {
            let (r, c) = (i / m, i % m);
            if r != c && (r >= d || c >= d) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(m, m, data).expect("m x m")
}

/// `λ_div ‖M ⊙ K‖²_F / (d + d_f)²`, where `K` is the Gram matrix of the
/// column-normalised `x_tilde` and `M` is [`div_mask`].
pub fn loss_div(tape: &mut Tape, x_tilde: &Tensor, d: usize, lambda_div: f64) -> Result<Tensor> {
    let m = x_tilde.cols();
    if d > m {
        return Err(Error::Config(format!("original width {d} exceeds augmented width {m}")));
    }
    let normalized = tape.col_l2_normalize(x_tilde)?;
    let nt = tape.transpose(&normalized)?;
    let gram = tape.matmul(&nt, &normalized)?;
    let masked = tape.mul(&gram, &div_mask(d, m - d))?;
    let fro = tape.frobenius_sq(&masked)?;
    tape.scale(&fro, lambda_div / (m * m) as f64)
}

/// `−(λ_deg/n) 1ᵀ log(W 1) + (λ_sparse/n²) ‖W‖²_F`, with row sums clamped
/// at 1e-12 inside the log.
pub fn loss_graph(tape: &mut Tape, w: &Tensor, lambda_deg: f64, lambda_sparse: f64) -> Result<Tensor> {
    let n = w.rows() as f64;
    let degrees = tape.reduce(Reduction::Sum, w, Some(Axis::Cols))?;
    let log_deg = tape.log(&degrees)?;
    let deg_sum = tape.sum(&log_deg)?;
    let deg_term = tape.scale(&deg_sum, -lambda_deg / n)?;
    let fro = tape.frobenius_sq(w)?;
    let sparse = tape.scale(&fro, lambda_sparse / (n * n))?;
    tape.add(&deg_term, &sparse)
}

/// `(1 − λ_dis) L_cls + λ_dis L_dis`.
pub fn student_objective(tape: &mut Tape, l_cls: &Tensor, l_dis: &Tensor, lambda_dis: f64) -> Result<Tensor> {
    let a = tape.scale(l_cls, 1.0 - lambda_dis)?;
    let b = tape.scale(l_dis, lambda_dis)?;
    tape.add(&a, &b)
}

/// Student objective plus whichever of `L_div` and `L_graph` the variant
/// uses.
pub fn graph_objective(
    tape: &mut Tape,
    l_cls: &Tensor,
    l_dis: &Tensor,
    l_div: Option<&Tensor>,
    l_graph: Option<&Tensor>,
    lambda_dis: f64,
) -> Result<Tensor> {
    let mut total = student_objective(tape, l_cls, l_dis, lambda_dis)?;
    for term in [l_div, l_graph].into_iter().flatten() {
        total = tape.add(&total, term)?;
    }
    Ok(total)
}

/// Clamp floor of the log-degree term, exposed for its boundary value.
pub const DEGREE_FLOOR: f64 = CLAMP_MIN;
