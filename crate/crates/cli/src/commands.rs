use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use m2d::audit::{export_reports, run_audit, AuditConfig, AuditInputs};
use m2d::distill::{distill, evaluate_logits, M2dConfig, StopReason, Variant};
use m2d::gradcheck::{run_suite, CaseResult, Suite};
use m2d::graphdata::{
    label_assortativity, load_dataset, read_matrix_csv, read_teacher_logits, save_dataset, write_attention, write_attention_heads,
    write_json, write_matrix_csv, Graph, SbmConfig, TeacherLogits,
};
use m2d::layout;
use m2d::metrics::FairnessReport;
use m2d::models::{train_supervised, ModelKind, TrainConfig};
use serde::Serialize;
use serde_json::Value;

use crate::args::{AuditFlags, Command, DistillFlags, EvaluateFlags, GradcheckFlags, SbmFlags, TeacherFlags};
use crate::config::{defaults_of, parse, resolve, take_optional_path, take_path, with_paths, Layers, Resolved};
use crate::CliError;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenerateSbm(f) => generate_sbm(&f),
        Command::TrainTeacher(f) => train_teacher(&f),
        Command::Distill(f) => distill_cmd(&f),
        Command::Evaluate(f) => evaluate(&f),
        Command::Audit(f) => audit(&f),
        Command::Gradcheck(f) => gradcheck(&f),
    }
}

/// Creates `out` and persists the resolved configuration in it.
fn prepare_out(out: &Path, resolved: &Layers) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| m2d::Error::io(out, e))?;
    write_json(&out.join(layout::RESOLVED_CONFIG), resolved)?;
    Ok(())
}

fn take<T: serde::de::DeserializeOwned>(map: &mut Layers, key: &str) -> Result<T, CliError> {
    let value = map.remove(key).unwrap_or(Value::Null);
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{key}: {e}")))
}

#[derive(Serialize)]
struct SbmStats {
    n: usize,
    block_sizes: Vec<usize>,
    edges: usize,
    inter_p: f64,
    label_assortativity: f64,
    /// Empirical P(s = 1 | y = 1).
    p_s1_given_y1: Option<f64>,
}

fn generate_sbm(flags: &SbmFlags) -> Result<(), CliError> {
    let defaults = with_paths(defaults_of(&SbmConfig::default()), &["out"]);
    let Resolved { mut map, explicit } = resolve(defaults, flags.config.as_deref(), flags)?;
    if explicit.iter().any(|k| k == "inter-p") && !explicit.iter().any(|k| k == "target-assortativity") {
        map.insert("target-assortativity".into(), Value::Null);
    }
    let resolved = map.clone();
    let out = take_path(&mut map, "out")?;
    let cfg: SbmConfig = parse(map)?;
    let tuned = cfg.resolved()?;
    prepare_out(&out, &resolved)?;

    let graph = m2d::graphdata::generate_sbm(&cfg)?;
    save_dataset(&graph, &out)?;
    let counts = graph.labels.iter().fold(vec![0; graph.num_classes], |mut c, &y| {
        c[y] += 1;
        c
    });
    let p_s1_given_y1 = graph.sensitive.as_ref().map(|s| {
        let y1: Vec<usize> = (0..graph.n()).filter(|&u| graph.labels[u] == 1).collect();
        y1.iter().filter(|&&u| s[u] == 1).count() as f64 / y1.len().max(1) as f64
    });
    let stats = SbmStats {
        n: graph.n(),
        block_sizes: counts,
        edges: graph.edges().len(),
        inter_p: tuned.inter_p,
        label_assortativity: label_assortativity(&graph)?,
        p_s1_given_y1,
    };
    write_json(&out.join(layout::METRICS), &stats)?;
    info!("wrote {} nodes, assortativity {:.3}, to {}", stats.n, stats.label_assortativity, out.display());
    Ok(())
}

#[derive(Serialize)]
struct TeacherMetrics {
    model: ModelKind,
    best_epoch: usize,
    epochs_run: usize,
    accuracy: f64,
    fairness: Option<FairnessReport>,
}

fn train_teacher(flags: &TeacherFlags) -> Result<(), CliError> {
    let mut defaults = with_paths(defaults_of(&TrainConfig::default()), &["data", "out"]);
    defaults.insert("model".into(), Value::String(ModelKind::Gat.name().into()));
    let Resolved { mut map, .. } = resolve(defaults, flags.config.as_deref(), flags)?;
    let resolved = map.clone();
    let data = take_path(&mut map, "data")?;
    let out = take_path(&mut map, "out")?;
    let model: ModelKind = take(&mut map, "model")?;
    let cfg: TrainConfig = parse(map)?;
    cfg.validate()?;
    prepare_out(&out, &resolved)?;

    let graph = load_dataset(&data)?;
    let start = Instant::now();
    let result = train_supervised(model, &graph, &cfg)?;
    info!("trained {model} teacher in {:.1}s", start.elapsed().as_secs_f64());
    write_matrix_csv(&out.join(layout::TEACHER_LOGITS), &result.logits)?;
    if let Some(att) = &result.attention {
        write_attention(&out.join(layout::ATTENTION), &att.mean_alpha(), &graph.adjacency)?;
        let heads: Vec<_> = att.scores.iter().cloned().zip(att.alpha.iter().cloned()).collect();
        write_attention_heads(&out.join(layout::ATTENTION_HEADS), &heads, &graph.adjacency)?;
    }
    write_json(&out.join(layout::HISTORY), &result.history)?;
    let eval = evaluate_logits(&result.logits, &graph, None)?;
    let metrics = TeacherMetrics {
        model,
        best_epoch: result.best_epoch,
        epochs_run: result.history.len(),
        accuracy: eval.accuracy,
        fairness: eval.fairness,
    };
    write_json(&out.join(layout::METRICS), &metrics)?;
    info!("teacher test accuracy {:.4}", metrics.accuracy);
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct DistillMetrics {
    variant: Variant,
    seed: u64,
    accuracy: f64,
    fairness: Option<FairnessReport>,
    fidelity: Option<f64>,
    best_iteration: usize,
    iterations: usize,
    stop: StopReason,
}

#[derive(Serialize)]
struct MeanStd {
    mean: f64,
    /// Sample standard deviation; 0 for a single run.
    std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Serialize)]
struct SeedSummary {
    seeds: Vec<u64>,
    accuracy: Option<MeanStd>,
    dp: Option<MeanStd>,
    eqop: Option<MeanStd>,
    fidelity: Option<MeanStd>,
    runs: Vec<DistillMetrics>,
}

fn distill_once(graph: &Graph, teacher: &TeacherLogits, cfg: &M2dConfig, out: &Path, resolved: &Layers) -> Result<DistillMetrics, CliError> {
    prepare_out(out, resolved)?;
    let start = Instant::now();
    let result = distill(graph, teacher, cfg)?;
    info!(
        "{} seed {}: {} iterations in {:.1}s ({:?})",
        cfg.variant,
        cfg.seed,
        result.history.len(),
        start.elapsed().as_secs_f64(),
        result.stop
    );
    save_dataset(&result.augmented.to_graph()?, &out.join(layout::AUGMENTED_DIR))?;
    write_matrix_csv(&out.join(layout::STUDENT_LOGITS), &result.logits)?;
    write_json(&out.join(layout::HISTORY), &result.history)?;
    let eval = evaluate_logits(&result.logits, graph, Some(teacher))?;
    let metrics = DistillMetrics {
        variant: result.config.variant,
        seed: cfg.seed,
        accuracy: eval.accuracy,
        fairness: eval.fairness,
        fidelity: eval.fidelity,
        best_iteration: result.best_iteration,
        iterations: result.history.len(),
        stop: result.stop,
    };
    write_json(&out.join(layout::METRICS), &metrics)?;
    info!("student test accuracy {:.4}, fidelity {:?}", metrics.accuracy, metrics.fidelity);
    Ok(metrics)
}

fn distill_cmd(flags: &DistillFlags) -> Result<(), CliError> {
    let mut defaults = with_paths(defaults_of(&M2dConfig::default()), &["data", "teacher", "out"]);
    defaults.insert("seeds".into(), Value::Null);
    let Resolved { mut map, .. } = resolve(defaults, flags.config.as_deref(), flags)?;
    let resolved = map.clone();
    let data = take_path(&mut map, "data")?;
    let teacher_dir = take_path(&mut map, "teacher")?;
    let out = take_path(&mut map, "out")?;
    let seeds: Option<Vec<u64>> = take(&mut map, "seeds")?;
    let cfg: M2dConfig = parse(map)?;
    cfg.validate()?;

    let graph = load_dataset(&data)?;
    let teacher = read_teacher_logits(&teacher_dir.join(layout::TEACHER_LOGITS), graph.n(), graph.num_classes)?;
    let Some(seeds) = seeds else {
        distill_once(&graph, &teacher, &cfg, &out, &resolved)?;
        return Ok(());
    };
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    prepare_out(&out, &resolved)?;
    let mut runs = Vec::new();
    for &seed in &seeds {
        let dir = out.join(format!("seed-{seed}"));
        let mut per_seed = resolved.clone();
        per_seed.insert("seed".into(), Value::from(seed));
        per_seed.insert("seeds".into(), Value::Null);
        per_seed.insert("out".into(), Value::String(dir.to_string_lossy().into_owned()));
        runs.push(distill_once(&graph, &teacher, &M2dConfig { seed, ..cfg.clone() }, &dir, &per_seed)?);
    }
    let collect = |f: &dyn Fn(&DistillMetrics) -> Option<f64>| -> Option<MeanStd> {
        let values: Vec<f64> = runs.iter().filter_map(f).collect();
        if values.len() == runs.len() {
            MeanStd::of(&values)
        } else {
            None
        }
    };
    let summary = SeedSummary {
        seeds,
        accuracy: collect(&|m| Some(m.accuracy)),
        dp: collect(&|m| m.fairness.as_ref().map(|f| f.dp)),
        eqop: collect(&|m| m.fairness.as_ref().map(|f| f.eqop)),
        fidelity: collect(&|m| m.fidelity),
        runs,
    };
    write_json(&out.join(layout::METRICS), &summary)?;
    if let Some(acc) = &summary.accuracy {
        info!("accuracy over {} seeds: {:.4} ± {:.4}", summary.seeds.len(), acc.mean, acc.std);
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateMetrics {
    source: String,
    accuracy: f64,
    fairness: Option<FairnessReport>,
    fidelity: Option<f64>,
}

fn evaluate(flags: &EvaluateFlags) -> Result<(), CliError> {
    let defaults = with_paths(Layers::new(), &["data", "run", "teacher", "out"]);
    let Resolved { mut map, .. } = resolve(defaults, flags.config.as_deref(), flags)?;
    let data = take_path(&mut map, "data")?;
    let run = take_path(&mut map, "run")?;
    let teacher_dir = take_optional_path(&mut map, "teacher")?;
    let out = take_optional_path(&mut map, "out")?.unwrap_or_else(|| run.join("evaluation"));
    let mut resolved = map;
    for (key, path) in [("data", Some(&data)), ("run", Some(&run)), ("teacher", teacher_dir.as_ref()), ("out", Some(&out))] {
        let value = path.map_or(Value::Null, |p| Value::String(p.to_string_lossy().into_owned()));
        resolved.insert(key.into(), value);
    }

    let source: PathBuf = [layout::STUDENT_LOGITS, layout::TEACHER_LOGITS]
        .iter()
        .map(|name| run.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| m2d::Error::MissingFile(run.join(layout::STUDENT_LOGITS)))?;
    prepare_out(&out, &resolved)?;
    let graph = load_dataset(&data)?;
    let logits = read_matrix_csv(&source)?;
    let teacher = match &teacher_dir {
        Some(dir) => Some(read_teacher_logits(&dir.join(layout::TEACHER_LOGITS), graph.n(), graph.num_classes)?),
        None => None,
    };
    let eval = evaluate_logits(&logits, &graph, teacher.as_ref())?;
    let metrics = EvaluateMetrics {
        source: source.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        accuracy: eval.accuracy,
        fairness: eval.fairness,
        fidelity: eval.fidelity,
    };
    write_json(&out.join(layout::METRICS), &metrics)?;
    info!("test accuracy {:.4}", metrics.accuracy);
    Ok(())
}

#[derive(Serialize)]
struct AuditMetrics {
    bin_trend: Option<f64>,
    weight_attention_r: Option<f64>,
    fidelity: Option<f64>,
    dp_change: Option<f64>,
    eqop_change: Option<f64>,
    attention_order_holds: Option<bool>,
    edge_counts: std::collections::BTreeMap<String, usize>,
}

fn audit(flags: &AuditFlags) -> Result<(), CliError> {
    let defaults = with_paths(defaults_of(&AuditConfig::default()), &["data", "run", "teacher", "out"]);
    let Resolved { mut map, .. } = resolve(defaults, flags.config.as_deref(), flags)?;
    let resolved = map.clone();
    let inputs = AuditInputs {
        data: take_path(&mut map, "data")?,
        run: take_path(&mut map, "run")?,
        teacher: take_path(&mut map, "teacher")?,
    };
    let out = take_path(&mut map, "out")?;
    let cfg: AuditConfig = parse(map)?;
    prepare_out(&out, &resolved)?;

    let outcome = run_audit(&inputs, &cfg)?;
    export_reports(&outcome, &out)?;
    let r = &outcome.report;
    let metrics = AuditMetrics {
        bin_trend: r.bin_trend,
        weight_attention_r: r.weight_attention_r,
        fidelity: r.fidelity,
        dp_change: r.fairness.as_ref().map(|f| f.dp_change),
        eqop_change: r.fairness.as_ref().map(|f| f.eqop_change),
        attention_order_holds: r.attention_order.as_ref().map(|o| o.holds()),
        edge_counts: r.edge_counts.clone(),
    };
    write_json(&out.join(layout::METRICS), &metrics)?;
    for reason in &r.skipped {
        info!("skipped {reason}");
    }
    info!("audit written to {}", out.display());
    Ok(())
}

fn gradcheck(flags: &GradcheckFlags) -> Result<(), CliError> {
    let mut defaults = with_paths(Layers::new(), &["out"]);
    defaults.insert("module".into(), Value::String("all".into()));
    defaults.insert("seed".into(), Value::from(0u64));
    let Resolved { mut map, .. } = resolve(defaults, flags.config.as_deref(), flags)?;
    let resolved = map.clone();
    let out = take_optional_path(&mut map, "out")?;
    let module: String = take(&mut map, "module")?;
    let suite: Suite = module.parse()?;
    let seed: u64 = take(&mut map, "seed")?;
    if let Some(out) = &out {
        prepare_out(out, &resolved)?;
    }

    let start = Instant::now();
    let results = run_suite(suite, seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&CaseResult> = results.iter().filter(|r| !r.passed()).collect();
    println!("{} of {} cases passed in {:.2}s", results.len() - failed.len(), results.len(), start.elapsed().as_secs_f64());
    if let Some(out) = &out {
        write_json(&out.join(layout::METRICS), &results)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} gradient checks failed", failed.len())))
    }
}
