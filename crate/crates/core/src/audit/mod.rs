//! Transparency analyses of an augmented graph against its teacher.
//!
//! Every analysis is a pure function of tensors; [`run_audit`] wires them
//! to the on-disk artifacts and records a hash of each input file.

mod export;
mod min_norm;
mod pipeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{pearson, rbf_similarity, spearman};

pub use export::{export_reports, EXPORT_FILES};
pub use min_norm::{min_norm_check, MinNormReport};
pub use pipeline::{run_audit, AuditConfig, AuditInputs, AuditOutcome, AuditReport, FairnessDelta};

/// Mean attention per equal-width bin of pair similarity over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    /// `n_bins + 1` boundaries from 0 to 1.
    pub edges: Vec<f64>,
    /// `None` for empty bins.
    pub means: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub sigma: f64,
}

impl BinTable {
    /// Spearman correlation of bin index against bin mean, nonempty bins only.
    pub fn trend(&self) -> Result<f64> {
        let (idx, means): (Vec<f64>, Vec<f64>) = self
            .means
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i as f64, m)))
            .unzip();
        spearman(&idx, &means)
    }
}

/// Bins the directed pairs `edges` by `rbf_similarity(z_u, z_v, σ)` and
/// averages `alpha[u][v]` inside each bin.
pub fn attention_alignment_bins(z: &Tensor, alpha: &Tensor, edges: &[(usize, usize)], n_bins: usize, sigma: f64) -> Result<BinTable> {
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {n_bins}")));
    }
    if edges.is_empty() {
        return Err(Error::Undefined("no edges to bin".into()));
    }
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(u, v) in edges {
        let s = rbf_similarity(z.row(u), z.row(v), sigma)?;
        let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
        sums[b] += alpha.get(u, v);
        counts[b] += 1;
    }
    Ok(BinTable {
        edges: (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect(),
        means: sums.iter().zip(&counts).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect(),
        counts,
        sigma,
    })
}

/// Median of `‖z_u − z_v‖` over `edges`, a scale for the similarity kernel.
/// Falls back to 1 when every distance is zero.
pub fn median_edge_distance(z: &Tensor, edges: &[(usize, usize)]) -> f64 {
    let mut dist: Vec<f64> = edges
        .iter()
        .map(|&(u, v)| z.row(u).iter().zip(z.row(v)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    if dist.is_empty() {
        return 1.0;
    }
    dist.sort_by(f64::total_cmp);
    let m = dist[dist.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Pearson correlation between per-node normalised weights and attention
/// over the directed pairs `edges`. Each node's weights are divided by their
/// sum over that node's analysed pairs; nodes whose sum is zero are skipped.
pub fn weight_attention_correlation(a_tilde: &Tensor, alpha: &Tensor, edges: &[(usize, usize)]) -> Result<f64> {
    if edges.is_empty() {
        return Err(Error::Undefined("no edges to correlate".into()));
    }
    let mut row_sums = vec![0.0; a_tilde.rows()];
    for &(u, v) in edges {
        row_sums[u] += a_tilde.get(u, v);
    }
    let (w, a): (Vec<f64>, Vec<f64>) = edges
        .iter()
        .filter(|&&(u, _)| row_sums[u] > 0.0)
        .map(|&(u, v)| (a_tilde.get(u, v) / row_sums[u], alpha.get(u, v)))
        .unzip();
    pearson(&w, &a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Added,
    Removed,
    Strengthened,
    Weakened,
}

impl ChangeKind {
    pub fn name(self) -> &'static str {
        match self {
            ChangeKind::Added => "added",
            ChangeKind::Removed => "removed",
            ChangeKind::Strengthened => "strengthened",
            ChangeKind::Weakened => "weakened",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeChange {
    pub u: usize,
    pub v: usize,
    pub old: f64,
    pub new: f64,
    pub kind: ChangeKind,
    pub labels: (usize, usize),
    pub sensitive: Option<(u8, u8)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub kind: ChangeKind,
    /// Unordered, smaller label first.
    pub labels: (usize, usize),
    pub sensitive: Option<(u8, u8)>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDiff {
    pub add_thresh: f64,
    pub remove_thresh: f64,
    pub changes: Vec<EdgeChange>,
    pub groups: Vec<GroupCount>,
}

impl EdgeDiff {
    pub fn count(&self, kind: ChangeKind) -> usize {
        self.changes.iter().filter(|c| c.kind == kind).count()
    }
}

/// Classifies every pair by how the augmented weight departs from the
/// original. Undirected graphs are scanned over `u < v` only.
///
/// * added: `A = 0` and `Ã ≥ add_thresh`
/// * removed: `A > 0` and `Ã ≤ remove_thresh`
/// * strengthened / weakened: other edges with `Ã − A` beyond `±add_thresh / 2`
pub fn graph_diff(
    a: &Tensor,
    a_tilde: &Tensor,
    add_thresh: f64,
    remove_thresh: f64,
    labels: &[usize],
    sensitive: Option<&[u8]>,
    directed: bool,
) -> Result<EdgeDiff> {
    for (name, t) in [("add", add_thresh), ("remove", remove_thresh)] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!("{name} threshold {t} must lie in (0, 1)")));
        }
    }
    if a.shape() != a_tilde.shape() {
        return Err(Error::ShapeMismatch {
            op: "graph_diff",
            left: a.shape(),
            right: a_tilde.shape(),
        });
    }
    let n = a.rows();
    let mut changes = Vec::new();
    let mut groups: BTreeMap<(ChangeKind, (usize, usize), Option<(u8, u8)>), usize> = BTreeMap::new();
    for u in 0..n {
        let start = if directed { 0 } else { u + 1 };
        for v in start..n {
            if u == v {
                continue;
            }
            let (old, new) = (a.get(u, v), a_tilde.get(u, v));
            let kind = if old == 0.0 {
                (new >= add_thresh).then_some(ChangeKind::Added)
            } else if new <= remove_thresh {
                Some(ChangeKind::Removed)
            } else if new - old > add_thresh / 2.0 {
                Some(ChangeKind::Strengthened)
            } else if new - old < -add_thresh / 2.0 {
                Some(ChangeKind::Weakened)
            } else {
                None
            };
            let Some(kind) = kind else { continue };
            let lab = (labels[u], labels[v]);
            let sen = sensitive.map(|s| (s[u], s[v]));
            let key_lab = (lab.0.min(lab.1), lab.0.max(lab.1));
            let key_sen = sen.map(|(x, y)| (x.min(y), x.max(y)));
            *groups.entry((kind, key_lab, key_sen)).or_default() += 1;
            changes.push(EdgeChange {
                u,
                v,
                old,
                new,
                kind,
                labels: lab,
                sensitive: sen,
            });
        }
    }
    Ok(EdgeDiff {
        add_thresh,
        remove_thresh,
        changes,
        groups: groups
            .into_iter()
            .map(|((kind, labels, sensitive), count)| GroupCount {
                kind,
                labels,
                sensitive,
                count,
            })
            .collect(),
    })
}

/// Pairwise order agreement between attention scores and coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub neighbourhoods: usize,
    pub pairs: usize,
    pub violations: usize,
}

impl OrderReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Within each closed neighbourhood `{u} ∪ {v : A_uv ≠ 0}`, checks that
/// every pair of members is ordered the same way by `scores[u]` and by
/// `alpha[u]`, ties included.
pub fn attention_order_check(scores: &Tensor, alpha: &Tensor, adjacency: &Tensor) -> OrderReport {
    let n = adjacency.rows();
    let mut report = OrderReport {
        neighbourhoods: 0,
        pairs: 0,
        violations: 0,
    };
    for u in 0..n {
        let members: Vec<usize> = (0..n).filter(|&v| v == u || adjacency.get(u, v) != 0.0).collect();
        report.neighbourhoods += 1;
        for (i, &v) in members.iter().enumerate() {
            for &w in &members[i + 1..] {
                report.pairs += 1;
                let by_score = scores.get(u, v).partial_cmp(&scores.get(u, w));
                let by_alpha = alpha.get(u, v).partial_cmp(&alpha.get(u, w));
                if by_score != by_alpha {
                    report.violations += 1;
                }
            }
        }
    }
    report
}
