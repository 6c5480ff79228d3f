use super::params::ParamSet;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst relative disagreement between the taped gradient and a central
/// difference, over every scalar entry of `params`.
///
/// The per-entry error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// `loss_fn` receives a tape and the parameters (tracked for the analytic
/// pass, plain constants for the perturbed evaluations) and must return a
/// 1x1 tensor.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamSet, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Tensor>,
{
    Ok(finite_diff_report(loss_fn, params, step)?.max_relative_error)
}

/// Location and size of the worst gradient disagreement.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

pub fn finite_diff_report<F>(loss_fn: F, params: &ParamSet, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let tracked = tape.track(params);
    let loss = loss_fn(&mut tape, &tracked)?;
    if loss.shape() != (1, 1) {
        return Err(Error::NotScalar(loss.rows(), loss.cols()));
    }
    if !loss.is_tracked() {
        // loss does not depend on any parameter
        let mut report = GradCheckReport {
            max_relative_error: 0.0,
            worst_param: None,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            entries_checked: params.numel(),
        };
        for (name, value) in params.iter() {
            for i in 0..value.len() {
                let numeric = central_difference(&loss_fn, params, name, i, step)?;
                let err = relative_error(0.0, numeric);
                if err > report.max_relative_error {
                    report.max_relative_error = err;
                    report.worst_param = Some(name.to_string());
                    report.worst_index = i;
                    report.numeric = numeric;
                }
            }
        }
        return Ok(report);
    }
    let grads = tape.backward(&loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for (name, value) in params.iter() {
        let analytic = grads.get(name).expect("every tracked parameter has a gradient");
        for i in 0..value.len() {
            let numeric = central_difference(&loss_fn, params, name, i, step)?;
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst_param.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_param = Some(name.to_string());
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn central_difference<F>(loss_fn: &F, params: &ParamSet, name: &str, index: usize, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Tensor>,
{
    let eval = |delta: f64| -> Result<f64> {
        let mut shifted = params.clone();
        let base = params.get(name)?;
        let mut data = base.to_vec();
        data[index] += delta;
        shifted.set(name, Tensor::new(base.rows(), base.cols(), data)?)?;
        let mut tape = Tape::new();
        Ok(loss_fn(&mut tape, &shifted)?.item())
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}
