use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blend::{blend_on_tape, clamp_similarity};
use super::config::{M2dConfig, Variant};
use super::learners::{
    feature_learner_forward, init_feature_learner, init_structure_learner, structure_learner_forward,
};
use super::losses::{distill_mask, graph_objective, loss_cls, loss_dis, loss_div, loss_graph, student_objective};
use crate::autodiff::{Adam, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphdata::{cosine_similarity_matrix, gcn_normalize_on_tape, Graph, TeacherLogits};
use crate::metrics::accuracy;
use crate::models::{fit, init_student, predict, DistillTarget, FitInput, ModelContext, ModelKind, ModelSpec, TrainConfig};
use crate::seed::sub_seed;

/// A graph with learned structure and generated features.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    pub base: Graph,
    /// Blended adjacency `Ã`.
    pub a_tilde: Tensor,
    /// `[X ∥ Z]`.
    pub x_tilde: Tensor,
    /// Structure-learner output `W`, when the variant learns structure.
    pub w: Option<Tensor>,
    /// Generated features `Z`, when the variant learns features.
    pub z: Option<Tensor>,
}

impl AugmentedGraph {
    /// The original graph with nothing learned.
    pub fn identity(base: &Graph) -> Self {
        AugmentedGraph {
            base: base.clone(),
            a_tilde: base.adjacency.clone(),
            x_tilde: base.features.clone(),
            w: None,
            z: None,
        }
    }

    pub fn d_f(&self) -> usize {
        self.x_tilde.cols() - self.base.d()
    }

    /// Labels, splits and attributes of the base graph on the augmented
    /// adjacency and features.
    pub fn to_graph(&self) -> Result<Graph> {
        let g = Graph {
            adjacency: self.a_tilde.detach(),
            features: self.x_tilde.detach(),
            ..self.base.clone()
        };
        g.validate()?;
        Ok(g)
    }
}

/// One outer iteration of the alternating loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Losses of the last student step.
    pub l_cls: f64,
    pub l_dis: f64,
    /// Regularisers of the last graph step; `None` when unused.
    pub l_div: Option<f64>,
    pub l_graph: Option<f64>,
    /// Best validation accuracy among this iteration's student steps.
    pub val_accuracy: f64,
    /// Argmax agreement with the teacher on scored validation nodes.
    pub fidelity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// `L_cls` settled within the convergence window.
    Converged,
    /// Validation accuracy stopped improving.
    Patience,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct DistillResult {
    /// The configuration after variant forcing.
    pub config: M2dConfig,
    pub spec: ModelSpec,
    /// The augmented graph the best student was trained on.
    pub augmented: AugmentedGraph,
    /// Student encoder and head at the best validation step.
    pub student: ParamSet,
    /// Feature and structure learners as of the best snapshot.
    pub learners: ParamSet,
    pub logits: Tensor,
    pub history: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub stop: StopReason,
}

/// Fixed inputs of one run plus the shared forward computations.
pub struct Problem<'a> {
    pub graph: &'a Graph,
    pub teacher: &'a TeacherLogits,
    pub cfg: M2dConfig,
    pub spec: ModelSpec,
    similarity: Tensor,
    dis_mask: Vec<bool>,
    fidelity_mask: Vec<bool>,
}

/// Loss values of one objective evaluation.
#[derive(Clone, Debug)]
pub struct Objective {
    pub logits: Tensor,
    pub total: Tensor,
    pub cls: Tensor,
    pub dis: Tensor,
    pub div: Option<Tensor>,
    pub graph: Option<Tensor>,
}

impl<'a> Problem<'a> {
    pub fn new(graph: &'a Graph, teacher: &'a TeacherLogits, cfg: &M2dConfig) -> Result<Self> {
        cfg.validate()?;
        graph.validate()?;
        let cfg = cfg.effective();
        if teacher.logits.shape() != (graph.n(), graph.num_classes) {
            return Err(Error::ShapeMismatch {
                op: "teacher logits",
                left: teacher.logits.shape(),
                right: (graph.n(), graph.num_classes),
            });
        }
        let dis_mask = distill_mask(&graph.splits.train, &teacher.available)?;
        let fidelity_mask = graph.splits.val.iter().zip(&teacher.available).map(|(&v, &a)| v && a).collect();
        let similarity = if cfg.gamma_blend > 0.0 && cfg.beta > 0.0 {
            clamp_similarity(&cosine_similarity_matrix(&graph.features))
        } else {
            Tensor::zeros(graph.n(), graph.n())
        };
        let spec = ModelSpec::new(cfg.student, graph.d() + cfg.d_f, cfg.hidden);
        Ok(Problem {
            graph,
            teacher,
            cfg,
            spec,
            similarity,
            dis_mask,
            fidelity_mask,
        })
    }

    /// Student parameters and learner parameters at initialisation.
    pub fn init(&self) -> Result<(ParamSet, ParamSet)> {
        let student = init_student(&self.spec, self.graph.num_classes, self.cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.seed, 20));
        let mut learners = ParamSet::new();
        if self.cfg.variant.learns_features() {
            learners = learners.merged(&init_feature_learner(&mut rng, self.cfg.hidden, self.cfg.learner_hidden, self.cfg.d_f)?)?;
        }
        if self.cfg.variant.learns_structure() {
            learners = learners.merged(&init_structure_learner(&mut rng, self.cfg.hidden, self.cfg.learner_hidden)?)?;
        }
        Ok((student, learners))
    }

    /// Builds `Ã` and `X̃` from embeddings `h` with the learners in `params`.
    /// Variants without a learner fall back to the original adjacency or to
    /// zero generated columns.
    pub fn augment(&self, tape: &mut Tape, params: &ParamSet, h: &Tensor) -> Result<AugmentedGraph> {
        let g = self.graph;
        let z = if self.cfg.variant.learns_features() {
            Some(feature_learner_forward(tape, params, h)?)
        } else {
            None
        };
        let x_tilde = match &z {
            Some(z) => tape.concat_cols(&g.features, z)?,
            None if self.cfg.d_f > 0 => tape.concat_cols(&g.features, &Tensor::zeros(g.n(), self.cfg.d_f))?,
            None => g.features.clone(),
        };
        let (a_tilde, w) = if self.cfg.variant.learns_structure() {
            let w = structure_learner_forward(tape, params, h, g.directed)?;
            let a = blend_on_tape(tape, &g.adjacency, &w, &self.similarity, self.cfg.gamma_blend, self.cfg.beta)?;
            (a, Some(w))
        } else {
            (g.adjacency.clone(), None)
        };
        Ok(AugmentedGraph {
            base: g.clone(),
            a_tilde,
            x_tilde,
            w,
            z,
        })
    }

    /// Student embeddings and logits on an augmented graph.
    pub fn student_forward(&self, tape: &mut Tape, params: &ParamSet, aug: &AugmentedGraph) -> Result<(Tensor, Tensor)> {
        let ctx = match self.spec.kind {
            ModelKind::Gcn => ModelContext::Gcn {
                a_norm: gcn_normalize_on_tape(tape, &aug.a_tilde)?,
            },
            _ => ModelContext::Mlp,
        };
        let h = self.spec.forward(tape, params, &ctx, &aug.x_tilde)?.h;
        let logits = predict(tape, params, &h)?;
        Ok((h, logits))
    }

    /// Student objective, plus the graph regularisers when `with_graph_terms`.
    pub fn objective(&self, tape: &mut Tape, params: &ParamSet, aug: &AugmentedGraph, with_graph_terms: bool) -> Result<Objective> {
        let cfg = &self.cfg;
        let (_, logits) = self.student_forward(tape, params, aug)?;
        let cls = loss_cls(tape, &logits, &self.graph.labels, &self.graph.splits.train)?;
        let dis = if cfg.lambda_dis > 0.0 {
            loss_dis(tape, &logits, &self.teacher.logits, cfg.tau, &self.dis_mask)?
        } else {
            Tensor::scalar(0.0)
        };
        if !with_graph_terms {
            let total = student_objective(tape, &cls, &dis, cfg.lambda_dis)?;
            return Ok(Objective {
                logits,
                total,
                cls,
                dis,
                div: None,
                graph: None,
            });
        }
        let div = match aug.z {
            Some(_) => Some(loss_div(tape, &aug.x_tilde, self.graph.d(), cfg.lambda_div)?),
            None => None,
        };
        let graph = match &aug.w {
            Some(w) => Some(loss_graph(tape, w, cfg.lambda_deg, cfg.lambda_sparse)?),
            None => None,
        };
        let total = graph_objective(tape, &cls, &dis, div.as_ref(), graph.as_ref(), cfg.lambda_dis)?;
        Ok(Objective {
            logits,
            total,
            cls,
            dis,
            div,
            graph,
        })
    }

    /// The full graph-step objective as a function of every parameter, with
    /// the embeddings `h` held constant.
    pub fn full_objective(&self, tape: &mut Tape, params: &ParamSet, h: &Tensor) -> Result<Tensor> {
        let aug = self.augment(tape, params, h)?;
        Ok(self.objective(tape, params, &aug, true)?.total)
    }

    /// Embeddings of the student on `aug`, untracked.
    pub fn embed(&self, student: &ParamSet, aug: &AugmentedGraph) -> Result<Tensor> {
        Ok(self.student_forward(&mut Tape::new(), student, aug)?.0)
    }

    fn val_accuracy(&self, logits: &Tensor) -> Result<f64> {
        if self.graph.splits.val.iter().any(|&m| m) {
            accuracy(&logits.argmax_rows(), &self.graph.labels, &self.graph.splits.val)
        } else {
            Ok(f64::NAN)
        }
    }

    fn fidelity(&self, logits: &Tensor) -> f64 {
        let teacher = self.teacher.logits.argmax_rows();
        accuracy(&logits.argmax_rows(), &teacher, &self.fidelity_mask).unwrap_or(f64::NAN)
    }
}

struct Snapshot {
    val_accuracy: f64,
    step: usize,
    iteration: usize,
    student: ParamSet,
    learners: ParamSet,
    augmented: AugmentedGraph,
}

/// Runs the alternating loop for one configuration. Variant `none` reduces
/// to a single distillation fit on the original graph.
pub fn distill(graph: &Graph, teacher: &TeacherLogits, cfg: &M2dConfig) -> Result<DistillResult> {
    if cfg.variant == Variant::None {
        return distill_plain(graph, teacher, cfg);
    }
    let problem = Problem::new(graph, teacher, cfg)?;
    let cfg = problem.cfg.clone();
    let has_val = graph.splits.val.iter().any(|&m| m);
    let (mut student, mut learners) = problem.init()?;
    let mut opt_student = Adam::new(cfg.lr_student).with_weight_decay(cfg.weight_decay);
    let mut opt_graph = Adam::new(cfg.lr_graph);

    // H⁰: the untrained student on the original graph, generated columns zero
    let mut start = AugmentedGraph::identity(graph);
    if cfg.d_f > 0 {
        start.x_tilde = Tape::new().concat_cols(&graph.features, &Tensor::zeros(graph.n(), cfg.d_f))?;
    }
    let mut h = problem.embed(&student, &start)?;

    let mut best: Option<Snapshot> = None;
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut stop = StopReason::MaxIterations;
    'outer: for t in 0..cfg.t_max {
        let diverged = |e: Error| match e {
            Error::NonFinite(_) => Error::Diverged(t),
            other => other,
        };
        let aug = detach_augmented(problem.augment(&mut Tape::new(), &learners, &h).map_err(diverged)?);

        let mut record = IterationRecord {
            iteration: t,
            l_cls: f64::NAN,
            l_dis: f64::NAN,
            l_div: None,
            l_graph: None,
            val_accuracy: f64::NEG_INFINITY,
            fidelity: f64::NAN,
        };
        let mut patience_hit = false;
        for _ in 0..cfg.inner_steps_student {
            let mut tape = Tape::new();
            let tracked = tape.track(&student);
            let obj = problem.objective(&mut tape, &tracked, &aug, false).map_err(diverged)?;
            let logits = obj.logits.detach();
            let val = problem.val_accuracy(&logits)?;
            record.l_cls = obj.cls.item();
            record.l_dis = obj.dis.item();
            record.val_accuracy = record.val_accuracy.max(val);
            record.fidelity = problem.fidelity(&logits);
            let improved = match &best {
                None => true,
                Some(b) => !has_val || val > b.val_accuracy,
            };
            if improved {
                best = Some(Snapshot {
                    val_accuracy: val,
                    step,
                    iteration: t,
                    student: student.clone(),
                    learners: learners.clone(),
                    augmented: aug.clone(),
                });
            } else if step - best.as_ref().map_or(0, |b| b.step) >= cfg.patience {
                patience_hit = true;
                break;
            }
            let grads = tape.backward(&obj.total).map_err(diverged)?;
            opt_student.step(&mut student, &grads)?;
            step += 1;
        }
        if patience_hit {
            history.push(record);
            stop = StopReason::Patience;
            break 'outer;
        }

        h = problem.embed(&student, &aug).map_err(diverged)?;
        if !learners.is_empty() {
            for _ in 0..cfg.inner_steps_graph {
                let mut tape = Tape::new();
                let tracked = tape.track(&learners).merged(&student)?;
                let aug_g = problem.augment(&mut tape, &tracked, &h).map_err(diverged)?;
                let obj = problem.objective(&mut tape, &tracked, &aug_g, true).map_err(diverged)?;
                record.l_div = obj.div.as_ref().map(Tensor::item);
                record.l_graph = obj.graph.as_ref().map(Tensor::item);
                let grads = tape.backward(&obj.total).map_err(diverged)?;
                opt_graph.step(&mut learners, &grads)?;
            }
        }
        history.push(record);

        let w = cfg.convergence_window;
        if w > 0 && history.len() > w {
            let recent = &history[history.len() - w - 1..];
            let lo = recent.iter().map(|r| r.l_cls).fold(f64::INFINITY, f64::min);
            let hi = recent.iter().map(|r| r.l_cls).fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < cfg.convergence_tol {
                stop = StopReason::Converged;
                break;
            }
        }
    }

    let best = best.ok_or_else(|| Error::Config("no student step was taken".into()))?;
    let (_, logits) = problem.student_forward(&mut Tape::new(), &best.student, &best.augmented)?;
    Ok(DistillResult {
        config: cfg,
        spec: problem.spec.clone(),
        augmented: best.augmented,
        student: best.student,
        learners: best.learners,
        logits,
        history,
        best_iteration: best.iteration,
        stop,
    })
}

fn detach_augmented(aug: AugmentedGraph) -> AugmentedGraph {
    AugmentedGraph {
        a_tilde: aug.a_tilde.detach(),
        x_tilde: aug.x_tilde.detach(),
        w: aug.w.map(|w| w.detach()),
        z: aug.z.map(|z| z.detach()),
        base: aug.base,
    }
}

/// Plain distillation on the original graph, trained for as many steps as
/// the alternating loop would give the student.
fn distill_plain(graph: &Graph, teacher: &TeacherLogits, cfg: &M2dConfig) -> Result<DistillResult> {
    let problem = Problem::new(graph, teacher, cfg)?;
    let cfg = problem.cfg.clone();
    let train_cfg = plain_train_config(&cfg);
    let ctx = ModelContext::for_graph(cfg.student, graph);
    let result = fit(
        FitInput {
            spec: &problem.spec,
            ctx: &ctx,
            x: &graph.features,
            graph,
        },
        &train_cfg,
        Some(DistillTarget {
            teacher,
            tau: cfg.tau,
            lambda_dis: cfg.lambda_dis,
        }),
    )?;
    let per = cfg.inner_steps_student;
    let history = result
        .history
        .chunks(per)
        .enumerate()
        .map(|(t, epochs)| IterationRecord {
            iteration: t,
            l_cls: f64::NAN,
            l_dis: f64::NAN,
            l_div: None,
            l_graph: None,
            val_accuracy: epochs.iter().map(|e| e.val_accuracy).fold(f64::NEG_INFINITY, f64::max),
            fidelity: f64::NAN,
        })
        .collect();
    let stop = if result.history.len() < train_cfg.epochs {
        StopReason::Patience
    } else {
        StopReason::MaxIterations
    };
    Ok(DistillResult {
        spec: problem.spec.clone(),
        augmented: AugmentedGraph::identity(graph),
        student: result.params,
        learners: ParamSet::new(),
        logits: result.logits,
        history,
        best_iteration: result.best_epoch / per,
        stop,
        config: cfg,
    })
}

/// Supervised settings matching the student's share of an M2D run.
pub fn plain_train_config(cfg: &M2dConfig) -> TrainConfig {
    TrainConfig {
        lr: cfg.lr_student,
        epochs: cfg.t_max * cfg.inner_steps_student,
        patience: cfg.patience,
        hidden: cfg.hidden,
        heads: 1,
        weight_decay: cfg.weight_decay,
        fair_weight: 0.0,
        seed: cfg.seed,
    }
}
