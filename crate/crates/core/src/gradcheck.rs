//! Finite-difference suite over every differentiable composite: the four
//! losses, both split objectives, the learners, the blend and each model
//! forward. Instances are small random graphs drawn from a fixed seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_report, GradCheckReport, ParamSet, Tape, Tensor};
use crate::distill::losses::{loss_cls, loss_dis, loss_div, loss_graph};
use crate::distill::{
    blend_on_tape, clamp_similarity, feature_learner_forward, init_feature_learner, init_structure_learner, structure_learner_forward,
    M2dConfig, Problem, Variant,
};
use crate::error::{Error, Result};
use crate::graphdata::{cosine_similarity_matrix, split_nodes, Graph, TeacherLogits};
use crate::models::{fairness_penalty, init_student, predict, ModelContext, ModelKind, ModelSpec, SPD_CAP};

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    M2d,
    Models,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Suite::All),
            "m2d" => Ok(Suite::M2d),
            "models" => Ok(Suite::Models),
            other => Err(Error::Config(format!("unknown gradcheck module {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub nodes: usize,
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub entries_checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} n={:<2} entries={:<4} max_rel_err={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.nodes,
            self.entries_checked,
            self.max_relative_error
        )?;
        if let Some(p) = &self.worst_param {
            write!(f, " at {p}")?;
        }
        Ok(())
    }
}

/// Random two-class graph with a sensitive attribute and a teacher.
fn instance(rng: &mut ChaCha8Rng, d: usize) -> Result<(Graph, TeacherLogits)> {
    let n = rng.random_range(6..=10);
    let labels: Vec<usize> = (0..n).map(|u| usize::from(u >= n / 2)).collect();
    let mut a = vec![0.0; n * n];
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { 0.6 } else { 0.2 };
            if rng.random::<f64>() < p {
                a[u * n + v] = 1.0;
                a[v * n + u] = 1.0;
            }
        }
    }
    let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let teacher = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let graph = Graph {
        adjacency: Tensor::new(n, n, a)?,
        features: Tensor::new(n, d, x)?,
        labels,
        num_classes: 2,
        splits: split_nodes(n, (0.5, 0.25, 0.25), rng.random())?,
        sensitive: Some((0..n).map(|u| u8::from(u % 3 == 0)).collect()),
        directed: false,
    };
    Ok((graph, TeacherLogits::complete(Tensor::new(n, 2, teacher)?)))
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Tensor> {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

fn single(name: &str, t: Tensor) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    p.insert(name, t)?;
    Ok(p)
}

/// Random linear read-out `Σ c ⊙ t` of a matrix output.
fn readout(tape: &mut Tape, t: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let m = tape.mul(t, weights)?;
    tape.sum(&m)
}

fn check<F>(name: &str, nodes: usize, params: &ParamSet, f: F) -> Result<CaseResult>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Tensor>,
{
    let GradCheckReport {
        max_relative_error,
        worst_param,
        entries_checked,
        ..
    } = finite_diff_report(f, params, STEP)?;
    Ok(CaseResult {
        name: name.to_string(),
        nodes,
        max_relative_error,
        worst_param,
        entries_checked,
    })
}

fn m2d_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    let d = 3;
    let (g, teacher) = instance(rng, d)?;
    let n = g.n();

    let p = single("logits", uniform(rng, n, 2, -2.0, 2.0)?)?;
    out.push(check("loss_cls", n, &p, |t, p| loss_cls(t, p.get("logits")?, &g.labels, &g.splits.train))?);
    out.push(check("loss_dis", n, &p, |t, p| loss_dis(t, p.get("logits")?, &teacher.logits, 2.0, &g.splits.train))?);

    let p = single("x", uniform(rng, n, d + 2, -1.0, 1.0)?)?;
    out.push(check("loss_div", n, &p, |t, p| loss_div(t, p.get("x")?, d, 1.0))?);

    let p = single("w", uniform(rng, n, n, 0.1, 0.9)?)?;
    out.push(check("loss_graph", n, &p, |t, p| loss_graph(t, p.get("w")?, 0.7, 0.3))?);

    let cfg = M2dConfig {
        variant: Variant::Both,
        hidden: 4,
        learner_hidden: 3,
        gamma_blend: 0.6,
        seed: rng.random_range(0..1000),
        ..M2dConfig::default()
    };
    let problem = Problem::new(&g, &teacher, &cfg)?;
    let (student, learners) = problem.init()?;
    let h = uniform(rng, n, cfg.hidden, -1.0, 1.0)?;
    let aug = problem.augment(&mut Tape::new(), &learners, &h)?;
    out.push(check("student_objective", n, &student, |t, p| Ok(problem.objective(t, p, &aug, false)?.total))?);
    let all = student.merged(&learners)?;
    out.push(check("graph_objective", n, &all, |t, p| problem.full_objective(t, p, &h))?);

    let feat = init_feature_learner(rng, 4, 3, 2)?;
    let c = uniform(rng, n, 2, -1.0, 1.0)?;
    out.push(check("feature_learner", n, &feat, |t, p| {
        let z = feature_learner_forward(t, p, &h)?;
        readout(t, &z, &c)
    })?);

    let structure = init_structure_learner(rng, 4, 3)?;
    let c = uniform(rng, n, n, -1.0, 1.0)?;
    for directed in [false, true] {
        let name = if directed { "structure_learner_directed" } else { "structure_learner" };
        out.push(check(name, n, &structure, |t, p| {
            let w = structure_learner_forward(t, p, &h, directed)?;
            readout(t, &w, &c)
        })?);
    }

    let s = clamp_similarity(&cosine_similarity_matrix(&g.features));
    let p = single("w", uniform(rng, n, n, 0.0, 1.0)?)?;
    out.push(check("blend", n, &p, |t, p| {
        let a = blend_on_tape(t, &g.adjacency, p.get("w")?, &s, 0.4, 0.3)?;
        readout(t, &a, &c)
    })?);
    Ok(())
}

fn model_cases(rng: &mut ChaCha8Rng, out: &mut Vec<CaseResult>) -> Result<()> {
    for kind in [ModelKind::Gcn, ModelKind::Gat, ModelKind::Graphormer, ModelKind::Mlp] {
        let (g, _) = instance(rng, 3)?;
        let mut spec = ModelSpec::new(kind, 3, 4);
        spec.heads = 2;
        let mut params = init_student(&spec, 2, rng.random_range(0..1000))?;
        if kind == ModelKind::Graphormer {
            // the spatial table starts at zero; spread it so its gradient is informative
            params.set("graphormer.spatial", uniform(rng, SPD_CAP + 2, 1, -0.5, 0.5)?)?;
        }
        let ctx = ModelContext::for_graph(kind, &g);
        out.push(check(&format!("{kind}_forward"), g.n(), &params, |t, p| {
            let h = spec.forward(t, p, &ctx, &g.features)?.h;
            let logits = predict(t, p, &h)?;
            loss_cls(t, &logits, &g.labels, &g.splits.train)
        })?);
    }

    let (g, _) = instance(rng, 3)?;
    let spec = ModelSpec::new(ModelKind::Gcn, 3, 4);
    let params = init_student(&spec, 2, rng.random_range(0..1000))?;
    let ctx = ModelContext::for_graph(ModelKind::Gcn, &g);
    let s = g.sensitive.clone().unwrap_or_default();
    let everyone = vec![true; g.n()];
    out.push(check("fairness_penalty", g.n(), &params, |t, p| {
        let h = spec.forward(t, p, &ctx, &g.features)?.h;
        let logits = predict(t, p, &h)?;
        fairness_penalty(t, &logits, &s, &everyone)
    })?);
    Ok(())
}

/// Runs the selected cases. The result order is fixed for a given seed.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if matches!(suite, Suite::All | Suite::M2d) {
        m2d_cases(&mut rng, &mut out)?;
    }
    if matches!(suite, Suite::All | Suite::Models) {
        model_cases(&mut rng, &mut out)?;
    }
    Ok(out)
}
