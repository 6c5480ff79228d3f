use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::pipeline::AuditOutcome;
use crate::error::{Error, Result};
use crate::graphdata::{nonzero_pairs, write_json};

/// Files written by [`export_reports`].
pub const EXPORT_FILES: [&str; 5] = ["bins.csv", "edge_diff.csv", "correlations.json", "features_scatter.csv", "graph.dot"];

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(header).map_err(csv_error(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blue for weight 0 through red for `max`.
fn weight_color(w: f64, max: f64) -> String {
    let t = if max > 0.0 { (w / max).clamp(0.0, 1.0) } else { 0.0 };
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// DOT rendering of the augmented graph restricted to original edges and
/// changed pairs. Edge colour and pen width grow with the augmented weight.
pub fn render_dot(outcome: &AuditOutcome) -> String {
    let g = &outcome.augmented;
    let n = g.n();
    let mut pairs: Vec<(usize, usize)> = nonzero_pairs(&outcome.original.adjacency)
        .into_iter()
        .filter(|&(u, v)| g.directed || u < v)
        .collect();
    pairs.extend(outcome.diff.changes.iter().map(|c| (c.u, c.v)));
    pairs.sort_unstable();
    pairs.dedup();
    let max = pairs.iter().map(|&(u, v)| g.adjacency.get(u, v)).fold(0.0f64, f64::max);

    let (kind, arrow) = if g.directed { ("digraph", "->") } else { ("graph", "--") };
    let mut out = format!("{kind} augmented {{\n  node [shape=circle, style=filled];\n");
    for u in 0..n {
        let colour = PALETTE[g.labels[u] % PALETTE.len()];
        let _ = writeln!(out, "  {u} [fillcolor=\"{colour}\", label=\"{u}\"];");
    }
    for (u, v) in pairs {
        let w = g.adjacency.get(u, v);
        let width = 0.5 + 4.5 * if max > 0.0 { w / max } else { 0.0 };
        let _ = writeln!(
            out,
            "  {u} {arrow} {v} [weight=\"{w}\", penwidth={width:.3}, color=\"{}\"];",
            weight_color(w, max)
        );
    }
    out.push_str("}\n");
    out
}

/// Writes the five report files into `dir`, creating it if needed.
pub fn export_reports(outcome: &AuditOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = &outcome.report;

    let header = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let bins_rows: Vec<Vec<String>> = match &report.bins {
        Some(b) => (0..b.counts.len())
            .map(|i| {
                vec![
                    b.edges[i].to_string(),
                    b.edges[i + 1].to_string(),
                    b.counts[i].to_string(),
                    b.means[i].map_or(String::new(), |m| m.to_string()),
                ]
            })
            .collect(),
        None => Vec::new(),
    };
    write_rows(&dir.join("bins.csv"), &header(&["lower", "upper", "count", "mean_attention"]), bins_rows.into_iter())?;

    let diff_rows = outcome.diff.changes.iter().map(|c| {
        let (su, sv) = c.sensitive.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        vec![
            c.u.to_string(),
            c.v.to_string(),
            c.old.to_string(),
            c.new.to_string(),
            c.kind.name().to_string(),
            c.labels.0.to_string(),
            c.labels.1.to_string(),
            su,
            sv,
        ]
    });
    write_rows(
        &dir.join("edge_diff.csv"),
        &header(&["u", "v", "old_w", "new_w", "category", "y_u", "y_v", "s_u", "s_v"]),
        diff_rows,
    )?;

    write_json(&dir.join("correlations.json"), report)?;

    let g = &outcome.original;
    let mut scatter_header = vec!["node".to_string()];
    scatter_header.extend((0..outcome.z.cols()).map(|j| format!("z{j}")));
    scatter_header.extend(["label".to_string(), "sensitive".to_string()]);
    let scatter_rows = (0..g.n()).map(|u| {
        let mut row = vec![u.to_string()];
        row.extend(outcome.z.row(u).iter().map(f64::to_string));
        row.push(g.labels[u].to_string());
        row.push(g.sensitive.as_ref().map_or(String::new(), |s| s[u].to_string()));
        row
    });
    write_rows(&dir.join("features_scatter.csv"), &scatter_header, scatter_rows)?;

    let dot_path = dir.join("graph.dot");
    fs::write(&dot_path, render_dot(outcome)).map_err(|e| Error::io(&dot_path, e))
}
