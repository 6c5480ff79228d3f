use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fairness_penalty, init_head, predict, GatAttention, ModelContext, ModelKind, ModelSpec};
use crate::autodiff::{Adam, ParamSet, Tape, Tensor};
use crate::distill::losses::{distill_mask, loss_cls, loss_dis, student_objective};
use crate::error::{Error, Result};
use crate::graphdata::{Graph, TeacherLogits};
use crate::metrics::accuracy;
use crate::seed::sub_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub hidden: usize,
    pub heads: usize,
    pub weight_decay: f64,
    /// Weight of the covariance fairness penalty; 0 disables it.
    pub fair_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 200,
            patience: 150,
            hidden: 16,
            heads: 1,
            weight_decay: 5e-4,
            fair_weight: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config("lr, epochs, hidden and heads must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.fair_weight < 0.0 {
            return Err(Error::Config("weight decay and fairness weight must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub spec: ModelSpec,
    /// Encoder and head parameters at the best validation epoch.
    pub params: ParamSet,
    /// Full-graph logits of `params`.
    pub logits: Tensor,
    /// Layer-1 attention of `params`, for GAT.
    pub attention: Option<GatAttention>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Soft targets for knowledge distillation.
#[derive(Clone, Copy, Debug)]
pub struct DistillTarget<'a> {
    pub teacher: &'a TeacherLogits,
    pub tau: f64,
    pub lambda_dis: f64,
}

/// Everything a fit reads besides the hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct FitInput<'a> {
    pub spec: &'a ModelSpec,
    pub ctx: &'a ModelContext,
    pub x: &'a Tensor,
    pub graph: &'a Graph,
}

/// Encoder and head initialised from the seed's student stream.
pub fn init_student(spec: &ModelSpec, num_classes: usize, seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 10));
    let encoder = spec.init(&mut rng)?;
    encoder.merged(&init_head(&mut rng, spec.hidden, num_classes)?)
}

/// Trains an encoder and head with Adam on cross-entropy, plus the fairness
/// penalty and distillation term when configured. Keeps the parameters with
/// the best validation accuracy (ties keep the earlier epoch).
pub fn fit(input: FitInput<'_>, cfg: &TrainConfig, distill: Option<DistillTarget<'_>>) -> Result<TrainResult> {
    cfg.validate()?;
    let FitInput { spec, ctx, x, graph } = input;
    let train = &graph.splits.train;
    let val = &graph.splits.val;
    let has_val = val.iter().any(|&m| m);
    let sensitive = match (cfg.fair_weight > 0.0, &graph.sensitive) {
        (false, _) => None,
        (true, Some(s)) => Some(s.as_slice()),
        (true, None) => return Err(Error::Config("fairness penalty needs a sensitive attribute".into())),
    };
    let distill = distill.filter(|d| d.lambda_dis > 0.0);
    let dis_mask = match distill {
        Some(d) => distill_mask(train, &d.teacher.available)?,
        None => Vec::new(),
    };

    let mut params = init_student(spec, graph.num_classes, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let tracked = tape.track(&params);
        let step = (|| -> Result<(Tensor, Tensor)> {
            let h = spec.forward(&mut tape, &tracked, ctx, x)?.h;
            let logits = predict(&mut tape, &tracked, &h)?;
            let cls = loss_cls(&mut tape, &logits, &graph.labels, train)?;
            let mut loss = match distill {
                Some(d) => {
                    let dis = loss_dis(&mut tape, &logits, &d.teacher.logits, d.tau, &dis_mask)?;
                    student_objective(&mut tape, &cls, &dis, d.lambda_dis)?
                }
                None => cls,
            };
            if let Some(s) = sensitive {
                let pen = fairness_penalty(&mut tape, &logits, s, train)?;
                let pen = tape.scale(&pen, cfg.fair_weight)?;
                loss = tape.add(&loss, &pen)?;
            }
            Ok((logits, loss))
        })();
        let (logits, loss) = step.map_err(|e| diverged(e, epoch))?;
        let logits = logits.detach();

        let (val_accuracy, val_loss) = if has_val {
            let acc = accuracy(&logits.argmax_rows(), &graph.labels, val)?;
            (acc, loss_cls(&mut Tape::new(), &logits, &graph.labels, val)?.item())
        } else {
            (f64::NAN, f64::NAN)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss.item(),
            val_loss,
            val_accuracy,
        });
        if !has_val || val_accuracy > best.0 {
            best = (val_accuracy, epoch, params.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
        let grads = tape.backward(&loss).map_err(|e| diverged(e, epoch))?;
        opt.step(&mut params, &grads)?;
    }

    let (_, best_epoch, params) = best;
    let mut tape = Tape::new();
    let out = spec.forward(&mut tape, &params, ctx, x)?;
    let logits = predict(&mut tape, &params, &out.h)?;
    Ok(TrainResult {
        spec: spec.clone(),
        params,
        logits,
        attention: out.attention,
        history,
        best_epoch,
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged(epoch),
        other => other,
    }
}

/// Trains `kind` on `graph` with its own features and adjacency.
pub fn train_supervised(kind: ModelKind, graph: &Graph, cfg: &TrainConfig) -> Result<TrainResult> {
    let mut spec = ModelSpec::new(kind, graph.d(), cfg.hidden);
    spec.heads = cfg.heads;
    let ctx = ModelContext::for_graph(kind, graph);
    fit(
        FitInput {
            spec: &spec,
            ctx: &ctx,
            x: &graph.features,
            graph,
        },
        cfg,
        None,
    )
}
