use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinNormReport {
    pub gd_solution: Vec<f64>,
    pub pinv_solution: Vec<f64>,
    /// `‖H_gd − H⁺‖_F / ‖H⁺‖_F`, or the absolute gap when `H⁺ = 0`.
    pub relative_gap: f64,
    pub steps_run: usize,
    /// `U Uᵀ` was singular and a ridge term was added to solve it.
    pub rank_deficient: bool,
}

const RIDGE: f64 = 1e-10;

/// Gradient descent on `‖U H − T‖²_F` from `H = 0`, compared with the
/// minimum-norm solution `Uᵀ (U Uᵀ)⁻¹ T`. Without `lr` the step size is
/// `0.5 / ‖U‖²_F`, which is stable for any `U`. Stops early once an update
/// changes nothing.
pub fn min_norm_check(u: &Tensor, target: &Tensor, steps: usize, lr: Option<f64>) -> Result<MinNormReport> {
    let (m, k) = u.shape();
    if target.rows() != m {
        return Err(Error::ShapeMismatch {
            op: "min_norm_check",
            left: u.shape(),
            right: target.shape(),
        });
    }
    let c = target.cols();
    let fro: f64 = u.data().iter().map(|v| v * v).sum();
    if fro == 0.0 {
        return Err(Error::Undefined("U is zero".into()));
    }
    let lr = lr.unwrap_or(0.5 / fro);
    let ut = u.transposed();

    let mut h = Tensor::zeros(k, c);
    let mut steps_run = 0;
    for _ in 0..steps {
        let residual = matmul(u, &h)?;
        let residual = Tensor::new(m, c, residual.data().iter().zip(target.data()).map(|(a, b)| a - b).collect())?;
        let grad = matmul(&ut, &residual)?;
        let next: Vec<f64> = h.data().iter().zip(grad.data()).map(|(x, g)| x - lr * 2.0 * g).collect();
        steps_run += 1;
        if next == h.data() {
            break;
        }
        h = Tensor::new(k, c, next)?;
        if !h.is_finite() {
            return Err(Error::NonFinite("min_norm_check gradient descent"));
        }
    }

    let gram = matmul(u, &ut)?;
    let (solved, rank_deficient) = solve_spd(&gram, target)?;
    let pinv = matmul(&ut, &solved)?;
    let diff: f64 = h.data().iter().zip(pinv.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = pinv.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(MinNormReport {
        gd_solution: h.to_vec(),
        pinv_solution: pinv.to_vec(),
        relative_gap: if norm > 0.0 { diff / norm } else { diff },
        steps_run,
        rank_deficient,
    })
}

/// Solves `G X = B` for symmetric positive semi-definite `G` by Gaussian
/// elimination with partial pivoting, adding a ridge when a pivot vanishes.
fn solve_spd(g: &Tensor, b: &Tensor) -> Result<(Tensor, bool)> {
    match eliminate(g, b, 0.0) {
        Some(x) => Ok((x, false)),
        None => {
            let scale = g.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            eliminate(g, b, RIDGE * scale)
                .map(|x| (x, true))
                .ok_or_else(|| Error::Undefined("normal equations are singular even with a ridge".into()))
        }
    }
}

fn eliminate(g: &Tensor, b: &Tensor, ridge: f64) -> Option<Tensor> {
    let n = g.rows();
    let c = b.cols();
    let scale = g.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = g.row(i).to_vec();
            row[i] += ridge;
            row.extend_from_slice(b.row(i));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        a.swap(col, pivot);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for j in col..n + c {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
    }
    let data = (0..n).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| a[i][n + j] / a[i][i]).collect();
    Tensor::new(n, c, data).ok()
}
