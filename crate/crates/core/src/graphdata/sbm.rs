use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{label_assortativity, split_nodes, Graph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::sub_seed;

/// Stochastic block model with a label-correlated sensitive attribute and
/// partly informative features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SbmConfig {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub intra_p: f64,
    pub inter_p: f64,
    /// When set, `inter_p` is solved so the expected label assortativity hits
    /// this value, and samples are redrawn until the realized value lies
    /// within `assortativity_tolerance`.
    pub target_assortativity: Option<f64>,
    pub assortativity_tolerance: f64,
    /// P(s = 1 | y = 1); P(s = 1 | y ≠ 1) is `1 − p_bias`.
    pub p_bias: f64,
    pub d: usize,
    pub d_noise: usize,
    pub signal_gamma: f64,
    pub split_ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            n: 1000,
            block_sizes: vec![600, 400],
            intra_p: 0.05,
            inter_p: 0.005,
            target_assortativity: Some(0.77),
            assortativity_tolerance: 0.05,
            p_bias: 0.7,
            d: 20,
            d_noise: 8,
            signal_gamma: 1.0,
            split_ratios: (0.3, 0.2, 0.5),
            seed: 0,
        }
    }
}

const MAX_ATTEMPTS: u64 = 20;

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.iter().sum::<usize>() != self.n {
            return Err(Error::Config(format!("block sizes {:?} do not sum to n={}", self.block_sizes, self.n)));
        }
        if self.block_sizes.len() < 2 {
            return Err(Error::Config("an SBM needs at least two blocks".into()));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p), ("p_bias", self.p_bias)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} is not a probability")));
            }
        }
        if self.d_noise > self.d {
            return Err(Error::Config(format!("d_noise={} exceeds d={}", self.d_noise, self.d)));
        }
        if let Some(t) = self.target_assortativity {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("target assortativity {t} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// The configuration with `inter_p` replaced by its tuned value, when a
    /// target is set.
    pub fn resolved(&self) -> Result<SbmConfig> {
        self.validate()?;
        let mut out = self.clone();
        if let Some(target) = self.target_assortativity {
            out.inter_p = tune_inter_p(&self.block_sizes, self.intra_p, target)?;
        }
        Ok(out)
    }
}

/// Expected label assortativity of an SBM whose labels are the blocks.
pub fn expected_assortativity(block_sizes: &[usize], intra_p: f64, inter_p: f64) -> f64 {
    let k = block_sizes.len();
    let mut e = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (si, sj) = (block_sizes[i] as f64, block_sizes[j] as f64);
            e[i * k + j] = if i == j { si * (si - 1.0) * intra_p } else { si * sj * inter_p };
        }
    }
    let total: f64 = e.iter().sum();
    let trace: f64 = (0..k).map(|i| e[i * k + i]).sum::<f64>() / total;
    let ab: f64 = (0..k)
        .map(|i| {
            let a = (0..k).map(|j| e[i * k + j]).sum::<f64>() / total;
            a * a
        })
        .sum();
    (trace - ab) / (1.0 - ab)
}

/// Bisects for the `inter_p` in `[0, intra_p]` whose expected assortativity
/// equals `target`.
pub fn tune_inter_p(block_sizes: &[usize], intra_p: f64, target: f64) -> Result<f64> {
    let f = |p: f64| expected_assortativity(block_sizes, intra_p, p) - target;
    let (mut lo, mut hi) = (0.0, intra_p);
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Err(Error::Config(format!(
            "assortativity {target} is unreachable with intra_p={intra_p} and blocks {block_sizes:?}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Samples an undirected simple graph. Nodes are ordered by block, signal
/// columns precede noise columns, and the output is a pure function of the
/// configuration.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    let cfg = cfg.resolved()?;
    let n = cfg.n;
    let labels: Vec<usize> = cfg
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    let sensitive: Vec<u8> = labels
        .iter()
        .map(|&y| {
            let p = if y == 1 { cfg.p_bias } else { 1.0 - cfg.p_bias };
            u8::from(rng.random::<f64>() < p)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2));
    let n_signal = cfg.d - cfg.d_noise;
    let mut features = Vec::with_capacity(n * cfg.d);
    for &y in &labels {
        for j in 0..cfg.d {
            let noise: f64 = rng.sample(StandardNormal);
            let shift = if j < n_signal { cfg.signal_gamma * y as f64 } else { 0.0 };
            features.push(shift + noise);
        }
    }
    let features = Tensor::new(n, cfg.d, features)?;
    let splits = split_nodes(n, cfg.split_ratios, sub_seed(cfg.seed, 3))?;

    let mut attempt = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 100 + attempt));
        let mut a = vec![0.0; n * n];
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if labels[u] == labels[v] { cfg.intra_p } else { cfg.inter_p };
                if rng.random::<f64>() < p {
                    a[u * n + v] = 1.0;
                    a[v * n + u] = 1.0;
                }
            }
        }
        let graph = Graph {
            adjacency: Tensor::new(n, n, a)?,
            features: features.clone(),
            labels: labels.clone(),
            num_classes: cfg.block_sizes.len(),
            splits: splits.clone(),
            sensitive: Some(sensitive.clone()),
            directed: false,
        };
        let Some(target) = cfg.target_assortativity else {
            return Ok(graph);
        };
        let r = label_assortativity(&graph)?;
        if (r - target).abs() <= cfg.assortativity_tolerance {
            return Ok(graph);
        }
        attempt += 1;
        if attempt == MAX_ATTEMPTS {
            return Err(Error::Config(format!(
                "no sample within {} of assortativity {target} after {MAX_ATTEMPTS} draws (last {r:.4})",
                cfg.assortativity_tolerance
            )));
        }
        log::warn!("SBM draw {attempt} had assortativity {r:.4}; redrawing");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SbmConfig {
        SbmConfig {
            n: 200,
            block_sizes: vec![120, 80],
            intra_p: 0.1,
            target_assortativity: None,
            ..SbmConfig::default()
        }
    }

    #[test]
    fn tuning_hits_target_in_expectation() {
        let p = tune_inter_p(&[600, 400], 0.05, 0.77).unwrap();
        assert!((expected_assortativity(&[600, 400], 0.05, p) - 0.77).abs() < 1e-9);
        assert!(p > 0.005 && p < 0.05, "{p}");
    }

    #[test]
    fn equal_probabilities_give_near_zero_expectation() {
        assert!(expected_assortativity(&[600, 400], 0.03, 0.03).abs() < 0.01);
    }

    #[test]
    fn layout_of_small_instance() {
        let g = generate_sbm(&small()).unwrap();
        g.validate().unwrap();
        assert_eq!(g.labels.iter().filter(|&&y| y == 0).count(), 120);
        assert!(g.labels[..120].iter().all(|&y| y == 0));
        assert_eq!(g.d(), 20);
        assert_eq!(g.splits.counts(), (60, 40, 100));
        assert!((0..200).all(|u| g.adjacency.get(u, u) == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_sbm(&small()).unwrap();
        let b = generate_sbm(&small()).unwrap();
        assert!(a.adjacency.bit_eq(&b.adjacency) && a.features.bit_eq(&b.features));
        assert_eq!(a.sensitive, b.sensitive);
        let c = generate_sbm(&SbmConfig { seed: 9, ..small() }).unwrap();
        assert!(!a.adjacency.bit_eq(&c.adjacency));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SbmConfig { n: 999, ..SbmConfig::default() }.validate().is_err());
        assert!(SbmConfig { d_noise: 21, ..SbmConfig::default() }.validate().is_err());
        assert!(SbmConfig { p_bias: 1.5, ..SbmConfig::default() }.validate().is_err());
    }
}
