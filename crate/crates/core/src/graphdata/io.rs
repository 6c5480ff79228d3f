//! Text dataset format: `meta.json`, `edges.csv`, `features.csv`,
//! `labels.csv`, optional `sensitive.csv`, and `splits.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Graph, SplitMasks};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub directed: bool,
    pub has_sensitive: bool,
    pub weighted: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitsFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidData(format!("{}: cannot parse {field:?} as a number", path.display())))
}

fn parse_usize(path: &Path, field: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::InvalidData(format!("{}: cannot parse {field:?} as an index", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn rows_without_header(path: &Path) -> Result<Vec<Vec<String>>> {
    require(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        out.push(record.iter().map(str::to_string).collect());
    }
    Ok(out)
}

/// Reads a headerless numeric CSV. Every row must have the same width.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let rows = rows_without_header(path)?;
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::InvalidData(format!(
                "{}: row {i} has {} columns, expected {cols}",
                path.display(),
                row.len()
            )));
        }
        for f in row {
            data.push(parse_f64(path, f)?);
        }
    }
    Tensor::new(rows.len(), cols, data)
}

/// Writes a headerless CSV with shortest round-trip decimal formatting, so
/// reading it back restores every value bit-for-bit.
pub fn write_matrix_csv(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(csv_err(path))?;
    for r in 0..t.rows() {
        w.write_record(t.row(r).iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Teacher logits with a per-node availability flag. Rows of `nan` mark
/// nodes the teacher did not score; their logits are stored as zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherLogits {
    pub logits: Tensor,
    pub available: Vec<bool>,
}

impl TeacherLogits {
    pub fn complete(logits: Tensor) -> Self {
        let available = vec![true; logits.rows()];
        TeacherLogits { logits, available }
    }
}

pub fn read_teacher_logits(path: &Path, n: usize, num_classes: usize) -> Result<TeacherLogits> {
    let raw = read_matrix_csv(path)?;
    if raw.shape() != (n, num_classes) {
        return Err(Error::InvalidData(format!(
            "{}: teacher logits are {:?}, expected ({n}, {num_classes})",
            path.display(),
            raw.shape()
        )));
    }
    let mut data = raw.to_vec();
    let mut available = vec![true; n];
    for u in 0..n {
        let row = &mut data[u * num_classes..(u + 1) * num_classes];
        if row.iter().all(|v| v.is_nan()) {
            available[u] = false;
            row.fill(0.0);
        } else if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("{}: row {u} mixes missing and present logits", path.display())));
        }
    }
    Ok(TeacherLogits {
        logits: Tensor::new(n, num_classes, data)?,
        available,
    })
}

/// Writes `u,v,alpha` for every node `u` and every `v` in its closed
/// neighbourhood (nonzero `adjacency[u][v]`, plus `v = u`).
pub fn write_attention(path: &Path, alpha: &Tensor, adjacency: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["u", "v", "alpha"]).map_err(csv_err(path))?;
    let n = alpha.rows();
    for u in 0..n {
        for v in 0..n {
            if u == v || adjacency.get(u, v) != 0.0 {
                w.write_record([u.to_string(), v.to_string(), alpha.get(u, v).to_string()])
                    .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `head,u,v,e,alpha` for every head over the closed neighbourhoods
/// of `adjacency`: per-head scores next to their coefficients.
pub fn write_attention_heads(path: &Path, heads: &[(Tensor, Tensor)], adjacency: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["head", "u", "v", "e", "alpha"]).map_err(csv_err(path))?;
    let n = adjacency.rows();
    for (k, (scores, alpha)) in heads.iter().enumerate() {
        for u in 0..n {
            for v in 0..n {
                if u == v || adjacency.get(u, v) != 0.0 {
                    w.write_record([
                        k.to_string(),
                        u.to_string(),
                        v.to_string(),
                        scores.get(u, v).to_string(),
                        alpha.get(u, v).to_string(),
                    ])
                    .map_err(csv_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads [`write_attention_heads`] output into dense `(scores, alpha)` pairs.
pub fn read_attention_heads(path: &Path, n: usize) -> Result<Vec<(Tensor, Tensor)>> {
    require(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut heads: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != 5 {
            return Err(Error::InvalidData(format!("{}: expected head,u,v,e,alpha rows", path.display())));
        }
        let k = parse_usize(path, &record[0])?;
        let u = parse_usize(path, &record[1])?;
        let v = parse_usize(path, &record[2])?;
        if u >= n || v >= n || k > heads.len() {
            return Err(Error::InvalidData(format!("{}: row ({k}, {u}, {v}) out of range", path.display())));
        }
        if k == heads.len() {
            heads.push((vec![0.0; n * n], vec![0.0; n * n]));
        }
        heads[k].0[u * n + v] = parse_f64(path, &record[3])?;
        heads[k].1[u * n + v] = parse_f64(path, &record[4])?;
    }
    heads
        .into_iter()
        .map(|(e, a)| Ok((Tensor::new(n, n, e)?, Tensor::new(n, n, a)?)))
        .collect()
}

/// Reads an attention file into a dense n x n matrix (absent pairs are 0).
pub fn read_attention(path: &Path, n: usize) -> Result<Tensor> {
    require(path)?;
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut data = vec![0.0; n * n];
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        if record.len() != 3 {
            return Err(Error::InvalidData(format!("{}: expected u,v,alpha rows", path.display())));
        }
        let u = parse_usize(path, &record[0])?;
        let v = parse_usize(path, &record[1])?;
        if u >= n || v >= n {
            return Err(Error::InvalidData(format!("{}: pair ({u}, {v}) out of range", path.display())));
        }
        data[u * n + v] = parse_f64(path, &record[2])?;
    }
    Tensor::new(n, n, data)
}

fn read_edges(path: &Path, meta: &DatasetMeta) -> Result<Tensor> {
    require(path)?;
    let n = meta.n;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.len() < 2 || &header[0] != "u" || &header[1] != "v" {
        return Err(Error::InvalidData(format!("{}: header must be u,v,w", path.display())));
    }
    let mut a = vec![0.0; n * n];
    let mut seen = BTreeSet::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let u = parse_usize(path, &record[0])?;
        let v = parse_usize(path, &record[1])?;
        let w = match record.get(2).map(str::trim) {
            None | Some("") => 1.0,
            Some(f) => parse_f64(path, f)?,
        };
        if u >= n || v >= n {
            return Err(Error::InvalidData(format!("{}: edge ({u}, {v}) out of range for n={n}", path.display())));
        }
        if u == v {
            return Err(Error::InvalidData(format!("{}: self-loop on node {u}", path.display())));
        }
        if !w.is_finite() || w < 0.0 || (!meta.weighted && w != 1.0) {
            return Err(Error::InvalidData(format!("{}: bad weight {w} on line {}", path.display(), line + 2)));
        }
        let key = if meta.directed { (u, v) } else { (u.min(v), u.max(v)) };
        if !seen.insert(key) {
            log::warn!("{}: duplicate edge ({u}, {v}) ignored", path.display());
            continue;
        }
        a[u * n + v] = w;
        if !meta.directed {
            a[v * n + u] = w;
        }
    }
    Tensor::new(n, n, a)
}

fn read_column(path: &Path, n: usize) -> Result<Vec<usize>> {
    let rows = rows_without_header(path)?;
    if rows.len() != n || rows.iter().any(|r| r.len() != 1) {
        return Err(Error::InvalidData(format!("{}: expected {n} single-value rows", path.display())));
    }
    rows.iter().map(|r| parse_usize(path, &r[0])).collect()
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let adjacency = read_edges(&dir.join("edges.csv"), &meta)?;
    let features = read_matrix_csv(&dir.join("features.csv"))?;
    if features.shape() != (meta.n, meta.d) && !(meta.d == 0 && features.rows() == 0) {
        return Err(Error::InvalidData(format!(
            "features.csv is {:?}, meta says ({}, {})",
            features.shape(),
            meta.n,
            meta.d
        )));
    }
    let labels = read_column(&dir.join("labels.csv"), meta.n)?;
    let sensitive = if meta.has_sensitive {
        let s = read_column(&dir.join("sensitive.csv"), meta.n)?;
        Some(s.into_iter().map(|v| u8::try_from(v).unwrap_or(u8::MAX)).collect())
    } else {
        None
    };
    let splits: SplitsFile = read_json(&dir.join("splits.json"))?;
    let splits = SplitMasks::from_indices(meta.n, &splits.train, &splits.val, &splits.test)?;
    let graph = Graph {
        adjacency,
        features,
        labels,
        num_classes: meta.num_classes,
        splits,
        sensitive,
        directed: meta.directed,
    };
    graph.validate()?;
    Ok(graph)
}

/// Writes `graph` in the dataset format, creating `dir` if needed. Zero
/// weights are omitted; undirected edges are stored once with `u < v`.
pub fn save_dataset(graph: &Graph, dir: &Path) -> Result<()> {
    graph.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = graph.n();
    let meta = DatasetMeta {
        n,
        d: graph.d(),
        num_classes: graph.num_classes,
        directed: graph.directed,
        has_sensitive: graph.sensitive.is_some(),
        weighted: graph.is_weighted(),
    };
    write_json(&dir.join("meta.json"), &meta)?;

    let path: PathBuf = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["u", "v", "w"]).map_err(csv_err(&path))?;
    for u in 0..n {
        let start = if graph.directed { 0 } else { u + 1 };
        for v in start..n {
            let weight = graph.adjacency.get(u, v);
            if u != v && weight != 0.0 {
                w.write_record([u.to_string(), v.to_string(), weight.to_string()])
                    .map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_matrix_csv(&dir.join("features.csv"), &graph.features)?;
    let write_ints = |name: &str, values: &mut dyn Iterator<Item = usize>| -> Result<()> {
        let text: String = values.map(|v| format!("{v}\n")).collect();
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write_ints("labels.csv", &mut graph.labels.iter().copied())?;
    let sensitive_path = dir.join("sensitive.csv");
    match &graph.sensitive {
        Some(s) => write_ints("sensitive.csv", &mut s.iter().map(|&v| v as usize))?,
        None if sensitive_path.exists() => fs::remove_file(&sensitive_path).map_err(|e| Error::io(&sensitive_path, e))?,
        None => {}
    }
    let splits = SplitsFile {
        train: SplitMasks::indices(&graph.splits.train),
        val: SplitMasks::indices(&graph.splits.val),
        test: SplitMasks::indices(&graph.splits.test),
    };
    write_json(&dir.join("splits.json"), &splits)
}
