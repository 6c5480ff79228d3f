use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Which learners take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Generated features only; the adjacency stays as given.
    Feat,
    /// Learned adjacency only; no generated features.
    Adj,
    Both,
    /// Plain knowledge distillation, no learners.
    None,
}

impl Variant {
    pub fn learns_features(self) -> bool {
        matches!(self, Variant::Feat | Variant::Both)
    }

    pub fn learns_structure(self) -> bool {
        matches!(self, Variant::Adj | Variant::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Feat => "feat",
            Variant::Adj => "adj",
            Variant::Both => "both",
            Variant::None => "none",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feat" => Ok(Variant::Feat),
            "adj" => Ok(Variant::Adj),
            "both" => Ok(Variant::Both),
            "none" => Ok(Variant::None),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct M2dConfig {
    pub variant: Variant,
    pub student: ModelKind,
    /// Student embedding width `d_h`.
    pub hidden: usize,
    /// Hidden width of both learners.
    pub learner_hidden: usize,
    pub d_f: usize,
    pub gamma_blend: f64,
    pub beta: f64,
    pub tau: f64,
    pub lambda_dis: f64,
    pub lambda_div: f64,
    pub lambda_deg: f64,
    pub lambda_sparse: f64,
    pub t_max: usize,
    pub inner_steps_student: usize,
    pub inner_steps_graph: usize,
    pub lr_student: f64,
    pub lr_graph: f64,
    pub weight_decay: f64,
    /// Student steps without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Outer iterations over which `L_cls` must move less than
    /// `convergence_tol` to count as converged.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for M2dConfig {
    fn default() -> Self {
        M2dConfig {
            variant: Variant::Both,
            student: ModelKind::Gcn,
            hidden: 16,
            learner_hidden: 8,
            d_f: 2,
            gamma_blend: 0.2,
            beta: 0.5,
            tau: 2.0,
            lambda_dis: 0.5,
            lambda_div: 1.0,
            lambda_deg: 0.1,
            lambda_sparse: 0.1,
            t_max: 40,
            inner_steps_student: 5,
            inner_steps_graph: 5,
            lr_student: 0.01,
            lr_graph: 0.01,
            weight_decay: 5e-4,
            patience: 150,
            convergence_window: 10,
            convergence_tol: 1e-5,
            seed: 0,
        }
    }
}

impl M2dConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}={v} must lie in [0, 1]")))
            }
        };
        unit("gamma-blend", self.gamma_blend)?;
        unit("beta", self.beta)?;
        unit("lambda-dis", self.lambda_dis)?;
        for (name, v) in [
            ("lambda-div", self.lambda_div),
            ("lambda-deg", self.lambda_deg),
            ("lambda-sparse", self.lambda_sparse),
            ("lr-graph", self.lr_graph),
            ("weight-decay", self.weight_decay),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name}={v} must be nonnegative")));
            }
        }
        if !(self.tau > 0.0) || !(self.lr_student > 0.0) {
            return Err(Error::Config("tau and lr-student must be positive".into()));
        }
        if self.hidden == 0 || self.learner_hidden == 0 || self.t_max == 0 || self.inner_steps_student == 0 {
            return Err(Error::Config("hidden sizes, t-max and inner-steps-student must be positive".into()));
        }
        if self.variant.learns_features() && self.d_f == 0 {
            return Err(Error::Config(format!("variant {} needs d-f >= 1", self.variant)));
        }
        if !matches!(self.student, ModelKind::Gcn | ModelKind::Mlp) {
            return Err(Error::Config(format!("student must be gcn or mlp, got {}", self.student)));
        }
        Ok(())
    }

    /// The configuration the loop actually runs: `feat` and `none` keep the
    /// original adjacency (γ = 0); `adj` and `none` generate no features.
    pub fn effective(&self) -> M2dConfig {
        let mut c = self.clone();
        if !self.variant.learns_structure() {
            c.gamma_blend = 0.0;
        }
        if !self.variant.learns_features() {
            c.d_f = 0;
        }
        c
    }
}
