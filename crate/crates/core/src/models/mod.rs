//! Teacher and student networks with linear heads, and supervised training.
//!
//! Every forward takes a [`Tape`] and a [`ParamSet`]; parameters may be
//! tracked (training) or plain constants (inference and finite differences).

mod fairness;
mod gat;
mod gcn;
mod graphormer;
mod head;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use fairness::{covariance_penalty, fairness_penalty};
pub use gat::{closed_neighbourhood, gat_forward, init_gat, GatAttention};
pub use gcn::{gcn_forward, init_gcn};
pub use graphormer::{graphormer_forward, init_graphormer, GraphormerInputs, DEGREE_CAP, SPD_CAP};
pub use head::{init_head, predict, HEAD};
pub use mlp::{init_mlp, mlp_forward};
pub use train::{fit, init_student, train_supervised, DistillTarget, EpochRecord, FitInput, TrainConfig, TrainResult};

use crate::autodiff::{ParamSet, Tape, Tensor, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graphdata::{gcn_normalize, shortest_path_distances, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gcn,
    Gat,
    Graphormer,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Graphormer => "graphormer",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "graphormer" => Ok(ModelKind::Graphormer),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Architecture of an encoder producing `n x hidden` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d_in: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub slope: f64,
}

impl ModelSpec {
    /// Two layers, one attention head.
    pub fn new(kind: ModelKind, d_in: usize, hidden: usize) -> Self {
        ModelSpec {
            kind,
            d_in,
            hidden,
            layers: 2,
            heads: 1,
            slope: LEAKY_SLOPE,
        }
    }

    /// Parameter-name prefix of the encoder.
    pub fn prefix(&self) -> &'static str {
        self.kind.name()
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut dims = vec![self.d_in];
        dims.extend(std::iter::repeat_n(self.hidden, self.layers));
        let prefix = self.prefix();
        match self.kind {
            ModelKind::Gcn => init_gcn(rng, prefix, &dims),
            ModelKind::Gat => init_gat(rng, prefix, &dims, self.heads),
            ModelKind::Graphormer => init_graphormer(rng, prefix, self.d_in, self.hidden, self.layers),
            ModelKind::Mlp => init_mlp(rng, prefix, self.d_in, self.hidden, self.hidden),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, ctx: &ModelContext, x: &Tensor) -> Result<ModelOutput> {
        let prefix = self.prefix();
        match (self.kind, ctx) {
            (ModelKind::Gcn, ModelContext::Gcn { a_norm }) => Ok(ModelOutput {
                h: gcn_forward(tape, params, prefix, self.layers, a_norm, x)?,
                attention: None,
            }),
            (ModelKind::Gat, ModelContext::Gat { mask }) => {
                let (h, att) = gat_forward(tape, params, prefix, self.layers, self.heads, self.slope, mask, x)?;
                Ok(ModelOutput {
                    h,
                    attention: Some(att),
                })
            }
            (ModelKind::Graphormer, ModelContext::Graphormer(inputs)) => Ok(ModelOutput {
                h: graphormer_forward(tape, params, prefix, self.layers, inputs, x)?.0,
                attention: None,
            }),
            (ModelKind::Mlp, _) => Ok(ModelOutput {
                h: mlp_forward(tape, params, prefix, x)?,
                attention: None,
            }),
            (kind, _) => Err(Error::Config(format!("structural context does not match model {kind}"))),
        }
    }
}

/// Structural inputs each architecture reads from the graph.
#[derive(Clone, Debug)]
pub enum ModelContext {
    /// Normalised adjacency; may be a tracked tensor.
    Gcn { a_norm: Tensor },
    /// Row-major closed-neighbourhood mask.
    Gat { mask: Vec<bool> },
    Graphormer(GraphormerInputs),
    Mlp,
}

impl ModelContext {
    pub fn for_graph(kind: ModelKind, graph: &Graph) -> Self {
        match kind {
            ModelKind::Gcn => ModelContext::Gcn {
                a_norm: gcn_normalize(&graph.adjacency),
            },
            ModelKind::Gat => ModelContext::Gat {
                mask: closed_neighbourhood(&graph.adjacency),
            },
            ModelKind::Graphormer => ModelContext::Graphormer(GraphormerInputs::new(
                &shortest_path_distances(&graph.adjacency, SPD_CAP),
                &graph.degrees(),
            )),
            ModelKind::Mlp => ModelContext::Mlp,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub h: Tensor,
    pub attention: Option<GatAttention>,
}

#[cfg(test)]
mod tests;
