use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::graphdata::{Graph, TeacherLogits};
use crate::metrics::{accuracy, fairness_report, FairnessReport};

/// Test-split metrics of a set of logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Present when the graph has a binary sensitive attribute and both
    /// groups appear in the test split.
    pub fairness: Option<FairnessReport>,
    /// Argmax agreement with the teacher on scored test nodes.
    pub fidelity: Option<f64>,
}

pub fn evaluate_logits(logits: &Tensor, graph: &Graph, teacher: Option<&TeacherLogits>) -> Result<EvalReport> {
    let pred = logits.argmax_rows();
    let test = &graph.splits.test;
    let fairness = match &graph.sensitive {
        Some(s) if graph.num_classes == 2 => fairness_report(&pred, s, &graph.labels, test).ok(),
        _ => None,
    };
    let fidelity = teacher.and_then(|t| {
        let mask: Vec<bool> = test.iter().zip(&t.available).map(|(&m, &a)| m && a).collect();
        accuracy(&pred, &t.logits.argmax_rows(), &mask).ok()
    });
    Ok(EvalReport {
        accuracy: accuracy(&pred, &graph.labels, test)?,
        fairness,
        fidelity,
    })
}

/// Fraction of masked nodes where both logit sets agree on the argmax.
pub fn distillation_fidelity(student: &Tensor, teacher: &Tensor, mask: &[bool]) -> Result<f64> {
    accuracy(&student.argmax_rows(), &teacher.argmax_rows(), mask)
}
