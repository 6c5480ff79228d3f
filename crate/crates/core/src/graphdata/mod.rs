//! Graphs, node splits, the on-disk dataset format and synthetic generators.

mod assortativity;
mod io;
mod normalize;
mod sbm;
mod similarity;
mod spd;

pub use assortativity::label_assortativity;
pub use io::{
    load_dataset, read_attention, read_attention_heads, read_json, read_matrix_csv, read_teacher_logits, save_dataset,
    write_attention, write_attention_heads, write_json, write_matrix_csv, DatasetMeta, TeacherLogits,
};
pub use normalize::{gcn_normalize, gcn_normalize_on_tape};
pub use sbm::{expected_assortativity, generate_sbm, tune_inter_p, SbmConfig};
pub use similarity::{build_similarity_graph, cosine_similarity_matrix};
pub use spd::{shortest_path_distances, SpdMatrix};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Train/validation/test membership, one flag per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    /// Builds masks from index lists.
    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let to_mask = |idx: &[usize], name: &str| -> Result<Vec<bool>> {
            let mut m = vec![false; n];
            for &i in idx {
                if i >= n {
                    return Err(Error::InvalidData(format!("{name} split index {i} out of range for n={n}")));
                }
                m[i] = true;
            }
            Ok(m)
        };
        let masks = SplitMasks {
            train: to_mask(train, "train")?,
            val: to_mask(val, "val")?,
            test: to_mask(test, "test")?,
        };
        masks.validate(n)?;
        Ok(masks)
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |m: &[bool]| m.iter().filter(|&&b| b).count();
        (c(&self.train), c(&self.val), c(&self.test))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::InvalidData(format!("split masks must have length {n}")));
        }
        for i in 0..n {
            let hits = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if hits > 1 {
                return Err(Error::InvalidData(format!("node {i} is in more than one split")));
            }
        }
        Ok(())
    }
}

/// Uniformly random disjoint split. Sizes are `round(n * ratio)`, with the
/// test share trimmed if rounding would overflow `n`.
pub fn split_nodes(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || tr + va + te > 1.0 + 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to at most 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * tr).round() as usize;
    let n_val = (((n as f64) * va).round() as usize).min(n - n_train);
    let n_test = (((n as f64) * te).round() as usize).min(n - n_train - n_val);
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (rank, &node) in order.iter().enumerate() {
        if rank < n_train {
            masks.train[node] = true;
        } else if rank < n_train + n_val {
            masks.val[node] = true;
        } else if rank < n_train + n_val + n_test {
            masks.test[node] = true;
        }
    }
    Ok(masks)
}

/// A node-classification dataset with dense adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    /// n x n, nonnegative.
    pub adjacency: Tensor,
    /// n x d.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: SplitMasks,
    /// Binary sensitive attribute, when the dataset has one.
    pub sensitive: Option<Vec<u8>>,
    pub directed: bool,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// True when some stored weight is neither 0 nor 1.
    pub fn is_weighted(&self) -> bool {
        self.adjacency.data().iter().any(|&w| w != 0.0 && w != 1.0)
    }

    /// Ordered pairs (u, v), u != v, with a nonzero weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        nonzero_pairs(&self.adjacency)
    }

    /// Unweighted degree (count of nonzero off-diagonal entries per row).
    pub fn degrees(&self) -> Vec<usize> {
        let n = self.n();
        (0..n)
            .map(|u| (0..n).filter(|&v| v != u && self.adjacency.get(u, v) != 0.0).count())
            .collect()
    }

    /// Same graph with a different adjacency.
    pub fn with_adjacency(&self, adjacency: Tensor) -> Result<Graph> {
        let g = Graph {
            adjacency,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.rows();
        if self.adjacency.cols() != n {
            return Err(Error::InvalidData(format!("adjacency is {:?}, not square", self.adjacency.shape())));
        }
        if self.features.rows() != n {
            return Err(Error::InvalidData(format!("features have {} rows for {n} nodes", self.features.rows())));
        }
        if let Some(bad) = self.adjacency.data().iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidData(format!("adjacency entry {bad} is negative or non-finite")));
        }
        if !self.features.is_finite() {
            return Err(Error::InvalidData("features contain non-finite values".into()));
        }
        if !self.directed {
            for u in 0..n {
                for v in (u + 1)..n {
                    if self.adjacency.get(u, v) != self.adjacency.get(v, u) {
                        return Err(Error::InvalidData(format!("undirected adjacency is asymmetric at ({u}, {v})")));
                    }
                }
            }
        }
        if self.labels.len() != n {
            return Err(Error::InvalidData(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidData(format!("label {y} outside [0, {})", self.num_classes)));
        }
        self.splits.validate(n)?;
        if let Some(s) = &self.sensitive {
            if s.len() != n {
                return Err(Error::InvalidData(format!("{} sensitive values for {n} nodes", s.len())));
            }
            if let Some(v) = s.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidData(format!("sensitive value {v} is not binary")));
            }
        }
        Ok(())
    }
}

/// Ordered off-diagonal pairs with a nonzero entry, row-major.
pub fn nonzero_pairs(a: &Tensor) -> Vec<(usize, usize)> {
    let n = a.rows();
    let mut out = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && a.get(u, v) != 0.0 {
                out.push((u, v));
            }
        }
    }
    out
}
