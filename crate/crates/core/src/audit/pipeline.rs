use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    attention_alignment_bins, attention_order_check, graph_diff, median_edge_distance, weight_attention_correlation,
    BinTable, ChangeKind, EdgeDiff, OrderReport,
};
use crate::autodiff::Tensor;
use crate::distill::distillation_fidelity;
use crate::error::{Error, Result};
use crate::graphdata::{
    load_dataset, nonzero_pairs, read_attention, read_attention_heads, read_matrix_csv, read_teacher_logits, Graph,
};
use crate::layout;
use crate::metrics::{fairness_report, FairnessReport};

/// Directories an audit reads.
#[derive(Clone, Debug)]
pub struct AuditInputs {
    /// Original dataset.
    pub data: PathBuf,
    /// Distillation run holding the augmented dataset and student logits.
    pub run: PathBuf,
    /// Teacher run holding its logits and, for GAT, attention.
    pub teacher: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AuditConfig {
    pub bins: usize,
    pub add_thresh: f64,
    pub remove_thresh: f64,
    /// Similarity kernel width; `None` uses the median distance between
    /// generated features across edges.
    pub sigma: Option<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            bins: 10,
            add_thresh: 0.5,
            remove_thresh: 0.1,
            sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessDelta {
    pub teacher: FairnessReport,
    pub student: FairnessReport,
    /// Student minus teacher.
    pub dp_change: f64,
    pub eqop_change: f64,
}

/// Every number an audit produces, with the SHA-256 of each input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub input_hashes: BTreeMap<String, String>,
    pub bins: Option<BinTable>,
    /// Spearman correlation of bin index against bin mean attention.
    pub bin_trend: Option<f64>,
    pub weight_attention_r: Option<f64>,
    /// Student–teacher argmax agreement on test nodes.
    pub fidelity: Option<f64>,
    pub fairness: Option<FairnessDelta>,
    pub attention_order: Option<OrderReport>,
    pub edge_counts: BTreeMap<String, usize>,
    /// Why any analysis above is missing.
    pub skipped: Vec<String>,
}

/// A report plus the loaded inputs the exports draw on.
#[derive(Clone, Debug)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub diff: EdgeDiff,
    pub original: Graph,
    pub augmented: Graph,
    /// Generated feature columns of the augmented graph.
    pub z: Tensor,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_dir(hashes: &mut BTreeMap<String, String>, label: &str, dir: &Path) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        hashes.insert(format!("{label}/{name}"), sha256_file(&dir.join(&name))?);
    }
    Ok(())
}

/// Loads the artifacts named by `inputs` and runs every analysis they
/// support. Analyses whose inputs are absent are listed in `skipped`.
pub fn run_audit(inputs: &AuditInputs, cfg: &AuditConfig) -> Result<AuditOutcome> {
    let original = load_dataset(&inputs.data)?;
    let aug_dir = inputs.run.join(layout::AUGMENTED_DIR);
    let augmented = load_dataset(&aug_dir)?;
    let n = original.n();
    if augmented.n() != n || augmented.labels != original.labels {
        return Err(Error::InvalidData("augmented dataset does not match the original nodes".into()));
    }
    let d = original.d();
    let d_f = augmented.d().checked_sub(d).ok_or_else(|| {
        Error::InvalidData(format!("augmented features have {} columns, fewer than the original {d}", augmented.d()))
    })?;

    let mut hashes = BTreeMap::new();
    hash_dir(&mut hashes, "data", &inputs.data)?;
    hash_dir(&mut hashes, "run/augmented", &aug_dir)?;
    let mut skipped = Vec::new();

    let teacher_path = inputs.teacher.join(layout::TEACHER_LOGITS);
    let teacher = read_teacher_logits(&teacher_path, n, original.num_classes)?;
    hashes.insert(format!("teacher/{}", layout::TEACHER_LOGITS), sha256_file(&teacher_path)?);

    let student_path = inputs.run.join(layout::STUDENT_LOGITS);
    let student = if student_path.is_file() {
        hashes.insert(format!("run/{}", layout::STUDENT_LOGITS), sha256_file(&student_path)?);
        Some(read_matrix_csv(&student_path)?)
    } else {
        skipped.push(format!("fidelity and fairness: {} not found", student_path.display()));
        None
    };

    let z_data: Vec<f64> = (0..n).flat_map(|u| augmented.features.row(u)[d..].to_vec()).collect();
    let z = Tensor::new(n, d_f, z_data)?;
    let edges = nonzero_pairs(&original.adjacency);

    let attention_path = inputs.teacher.join(layout::ATTENTION);
    let alpha = if attention_path.is_file() {
        hashes.insert(format!("teacher/{}", layout::ATTENTION), sha256_file(&attention_path)?);
        Some(read_attention(&attention_path, n)?)
    } else {
        skipped.push(format!("attention analyses: {} not found", attention_path.display()));
        None
    };

    let (mut bins, mut bin_trend, mut weight_attention_r) = (None, None, None);
    if let Some(alpha) = &alpha {
        if d_f == 0 {
            skipped.push("similarity bins: the augmented graph has no generated features".into());
        } else {
            let sigma = cfg.sigma.unwrap_or_else(|| median_edge_distance(&z, &edges));
            let table = attention_alignment_bins(&z, alpha, &edges, cfg.bins, sigma)?;
            match table.trend() {
                Ok(t) => bin_trend = Some(t),
                Err(e) => skipped.push(format!("bin trend: {e}")),
            }
            bins = Some(table);
        }
        match weight_attention_correlation(&augmented.adjacency, alpha, &edges) {
            Ok(r) => weight_attention_r = Some(r),
            Err(e) => skipped.push(format!("weight-attention correlation: {e}")),
        }
    }

    let heads_path = inputs.teacher.join(layout::ATTENTION_HEADS);
    let attention_order = if heads_path.is_file() {
        hashes.insert(format!("teacher/{}", layout::ATTENTION_HEADS), sha256_file(&heads_path)?);
        let heads = read_attention_heads(&heads_path, n)?;
        let mut total = OrderReport {
            neighbourhoods: 0,
            pairs: 0,
            violations: 0,
        };
        for (scores, alpha) in &heads {
            let r = attention_order_check(scores, alpha, &original.adjacency);
            total.neighbourhoods += r.neighbourhoods;
            total.pairs += r.pairs;
            total.violations += r.violations;
        }
        Some(total)
    } else {
        skipped.push(format!("attention order check: {} not found", heads_path.display()));
        None
    };

    let (mut fidelity, mut fairness) = (None, None);
    if let Some(student) = &student {
        let test_scored: Vec<bool> = original.splits.test.iter().zip(&teacher.available).map(|(&t, &a)| t && a).collect();
        fidelity = distillation_fidelity(student, &teacher.logits, &test_scored).ok();
        if let (Some(s), 2) = (&original.sensitive, original.num_classes) {
            let test = &original.splits.test;
            let t = fairness_report(&teacher.logits.argmax_rows(), s, &original.labels, test);
            let st = fairness_report(&student.argmax_rows(), s, &original.labels, test);
            match (t, st) {
                (Ok(t), Ok(st)) => {
                    fairness = Some(FairnessDelta {
                        dp_change: st.dp - t.dp,
                        eqop_change: st.eqop - t.eqop,
                        teacher: t,
                        student: st,
                    })
                }
                (Err(e), _) | (_, Err(e)) => skipped.push(format!("fairness: {e}")),
            }
        }
    }

    let diff = graph_diff(
        &original.adjacency,
        &augmented.adjacency,
        cfg.add_thresh,
        cfg.remove_thresh,
        &original.labels,
        original.sensitive.as_deref(),
        original.directed,
    )?;
    let edge_counts = [ChangeKind::Added, ChangeKind::Removed, ChangeKind::Strengthened, ChangeKind::Weakened]
        .into_iter()
        .map(|k| (k.name().to_string(), diff.count(k)))
        .collect();

    Ok(AuditOutcome {
        report: AuditReport {
            config: cfg.clone(),
            input_hashes: hashes,
            bins,
            bin_trend,
            weight_attention_r,
            fidelity,
            fairness,
            attention_order,
            edge_counts,
            skipped,
        },
        diff,
        original,
        augmented,
        z,
    })
}
