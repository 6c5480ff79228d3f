//! Classification, fairness and similarity metrics. All label-based metrics
//! take hard predictions (argmax of logits).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of masked nodes predicted correctly.
pub fn accuracy(pred: &[usize], y: &[usize], mask: &[bool]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        total += 1;
        correct += usize::from(pred[i] == y[i]);
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per true class.
    pub per_class: Vec<(usize, usize)>,
}

pub fn classification_report(pred: &[usize], y: &[usize], mask: &[bool], num_classes: usize) -> Result<ClassificationReport> {
    let mut per_class = vec![(0, 0); num_classes];
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        per_class[y[i]].1 += 1;
        per_class[y[i]].0 += usize::from(pred[i] == y[i]);
    }
    let total: usize = per_class.iter().map(|c| c.1).sum();
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    Ok(ClassificationReport {
        accuracy: accuracy(pred, y, mask)?,
        correct,
        total,
        per_class,
    })
}

/// Positive-prediction rate among masked nodes passing `keep`.
fn positive_rate(pred: &[usize], mask: &[bool], keep: impl Fn(usize) -> bool, what: &str) -> Result<f64> {
    let members: Vec<usize> = (0..pred.len()).filter(|&i| mask[i] && keep(i)).collect();
    if members.is_empty() {
        return Err(Error::Undefined(format!("{what} is empty")));
    }
    Ok(members.iter().filter(|&&i| pred[i] == 1).count() as f64 / members.len() as f64)
}

/// `|P(ŷ=1 | s=1) − P(ŷ=1 | s=0)|` over masked nodes.
pub fn demographic_parity(pred: &[usize], s: &[u8], mask: &[bool]) -> Result<f64> {
    let p1 = positive_rate(pred, mask, |i| s[i] == 1, "group s=1")?;
    let p0 = positive_rate(pred, mask, |i| s[i] == 0, "group s=0")?;
    Ok((p1 - p0).abs())
}

/// `|P(ŷ=1 | s=1, y=1) − P(ŷ=1 | s=0, y=1)|` over masked nodes.
pub fn equal_opportunity(pred: &[usize], s: &[u8], y: &[usize], mask: &[bool]) -> Result<f64> {
    let p1 = positive_rate(pred, mask, |i| s[i] == 1 && y[i] == 1, "stratum s=1, y=1")?;
    let p0 = positive_rate(pred, mask, |i| s[i] == 0 && y[i] == 1, "stratum s=0, y=1")?;
    Ok((p1 - p0).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub dp: f64,
    pub eqop: f64,
    /// Masked node counts with s=0 and s=1.
    pub group_counts: (usize, usize),
}

pub fn fairness_report(pred: &[usize], s: &[u8], y: &[usize], mask: &[bool]) -> Result<FairnessReport> {
    let ones = (0..pred.len()).filter(|&i| mask[i] && s[i] == 1).count();
    let all = mask.iter().filter(|&&m| m).count();
    Ok(FairnessReport {
        dp: demographic_parity(pred, s, mask)?,
        eqop: equal_opportunity(pred, s, y, mask)?,
        group_counts: (all - ones, ones),
    })
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Undefined(format!("pearson needs two equal-length series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("pearson correlation of a constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}

/// `exp(−‖zᵢ − zⱼ‖² / (2σ²))`.
pub fn rbf_similarity(zi: &[f64], zj: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("rbf sigma must be positive, got {sigma}")));
    }
    let sq: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const ALL4: [bool; 4] = [true; 4];

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1], &[true; 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 0], &[0, 1, 1], &[true; 3]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1], &ALL4).unwrap(), 0.75);
        assert!(matches!(accuracy(&[0], &[0], &[false]), Err(Error::EmptyMask)));
        let r = classification_report(&[0, 1, 1, 0], &[0, 1, 1, 1], &ALL4, 2).unwrap();
        assert_eq!(r.per_class, vec![(1, 1), (2, 3)]);
    }

    #[test]
    fn demographic_parity_examples() {
        assert_eq!(demographic_parity(&[1, 1, 0, 0], &[1, 0, 1, 0], &ALL4).unwrap(), 0.0);
        assert_eq!(demographic_parity(&[1, 0], &[1, 0], &[true; 2]).unwrap(), 1.0);
        assert_eq!(demographic_parity(&[1, 1, 1, 0], &[1, 1, 0, 0], &ALL4).unwrap(), 0.5);
        assert!(demographic_parity(&[1, 0], &[1, 1], &[true; 2]).is_err());
    }

    #[test]
    fn equal_opportunity_examples() {
        let y = [1, 0, 1, 1];
        assert_eq!(equal_opportunity(&y, &[1, 0, 0, 1], &y, &ALL4).unwrap(), 0.0);
        assert_eq!(equal_opportunity(&[1, 0], &[1, 0], &[1, 1], &[true; 2]).unwrap(), 1.0);
        assert_eq!(equal_opportunity(&[1, 1, 0, 1], &[1, 1, 0, 0], &[1, 1, 1, 1], &ALL4).unwrap(), 0.5);
        assert!(equal_opportunity(&[1, 1], &[1, 0], &[1, 0], &[true; 2]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&a, &a).unwrap(), 1.0);
        assert_eq!(pearson(&a, &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        assert!((pearson(&a, &[1.0, 2.0, 4.0]).unwrap() - 0.9820).abs() < 1e-4);
        assert!(pearson(&a, &[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_handles_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 300.0]).unwrap(), 1.0);
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_similarity(&[0.3, 1.0], &[0.3, 1.0], 1.0).unwrap(), 1.0);
        let v = rbf_similarity(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((1.0 - rbf_similarity(&[0.0], &[3.0], 1e6).unwrap()).abs() < 1e-9);
        assert!(rbf_similarity(&[0.0], &[1.0], 0.0).is_err());
    }

    fn binary() -> impl Strategy<Value = Vec<(usize, u8, usize)>> {
        proptest::collection::vec((0usize..2, 0u8..2, 0usize..2), 8..40)
    }

    proptest! {
        #[test]
        fn fairness_is_invariant_to_group_relabeling(rows in binary()) {
            let pred: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let s: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let flipped: Vec<u8> = s.iter().map(|v| 1 - v).collect();
            let mask = vec![true; rows.len()];
            if let (Ok(a), Ok(b)) = (demographic_parity(&pred, &s, &mask), demographic_parity(&pred, &flipped, &mask)) {
                prop_assert_eq!(a, b);
            }
            if let (Ok(a), Ok(b)) = (equal_opportunity(&pred, &s, &y, &mask), equal_opportunity(&pred, &flipped, &y, &mask)) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn pearson_of_affine_map_is_sign_of_slope(a in proptest::collection::vec(-10.0f64..10.0, 3..20), c in -5.0f64..5.0, d in -5.0f64..5.0) {
            prop_assume!(c.abs() > 1e-3);
            prop_assume!(a.iter().any(|&v| (v - a[0]).abs() > 1e-3));
            let b: Vec<f64> = a.iter().map(|v| c * v + d).collect();
            let r = pearson(&a, &b).unwrap();
            prop_assert!((r - c.signum()).abs() < 1e-9);
        }

        #[test]
        fn rbf_is_symmetric_and_one_only_on_equal_inputs(a in proptest::collection::vec(-3.0f64..3.0, 3), b in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let ab = rbf_similarity(&a, &b, 1.0).unwrap();
            prop_assert_eq!(ab, rbf_similarity(&b, &a, 1.0).unwrap());
            prop_assert!(ab > 0.0 && ab <= 1.0);
            prop_assert_eq!(ab == 1.0, a == b || a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 2.0 == 0.0);
        }
    }
}
