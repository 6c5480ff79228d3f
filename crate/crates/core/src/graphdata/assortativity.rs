use super::Graph;
use crate::error::{Error, Result};

/// Newman's label assortativity coefficient.
///
/// Builds the label mixing matrix `e` from both directions of every weighted
/// edge and returns `(tr e − Σ aᵢbᵢ) / (1 − Σ aᵢbᵢ)`. When every edge stays
/// inside one class the denominator vanishes; that case returns 1.
pub fn label_assortativity(graph: &Graph) -> Result<f64> {
    let n = graph.n();
    let c = graph.num_classes;
    let mut e = vec![0.0; c * c];
    let mut total = 0.0;
    for u in 0..n {
        for v in 0..n {
            let w = graph.adjacency.get(u, v);
            if u == v || w == 0.0 {
                continue;
            }
            e[graph.labels[u] * c + graph.labels[v]] += w;
            total += w;
        }
    }
    if total == 0.0 {
        return Err(Error::Undefined("assortativity of a graph with no edges".into()));
    }
    let mut trace = 0.0;
    let mut ab = 0.0;
    for i in 0..c {
        trace += e[i * c + i] / total;
        let a: f64 = (0..c).map(|j| e[i * c + j]).sum::<f64>() / total;
        let b: f64 = (0..c).map(|j| e[j * c + i]).sum::<f64>() / total;
        ab += a * b;
    }
    let denom = 1.0 - ab;
    if denom.abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((trace - ab) / denom)
}
