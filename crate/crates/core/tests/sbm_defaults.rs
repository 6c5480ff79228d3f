use m2d::graphdata::{generate_sbm, label_assortativity, load_dataset, save_dataset, SbmConfig};

fn conditional_rate(s: &[u8], labels: &[usize], class: usize) -> f64 {
    let members: Vec<u8> = s.iter().zip(labels).filter(|(_, &y)| y == class).map(|(&v, _)| v).collect();
    members.iter().map(|&v| v as f64).sum::<f64>() / members.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn default_sbm_matches_its_targets() {
    let g = generate_sbm(&SbmConfig::default()).unwrap();
    assert_eq!(g.n(), 1000);
    assert_eq!(g.labels.iter().filter(|&&y| y == 0).count(), 600);
    assert_eq!(g.labels.iter().filter(|&&y| y == 1).count(), 400);
    let r = label_assortativity(&g).unwrap();
    assert!((r - 0.77).abs() <= 0.05, "assortativity {r}");
    let s = g.sensitive.as_ref().unwrap();
    let p = conditional_rate(s, &g.labels, 1);
    assert!((p - 0.7).abs() <= 0.05, "P(s=1|y=1) = {p}");
    assert_eq!(g.splits.counts(), (300, 200, 500));
}

#[test]
fn equal_block_probabilities_remove_label_structure() {
    let cfg = SbmConfig {
        intra_p: 0.02,
        inter_p: 0.02,
        target_assortativity: None,
        seed: 3,
        ..SbmConfig::default()
    };
    let r = label_assortativity(&generate_sbm(&cfg).unwrap()).unwrap();
    assert!(r.abs() < 0.05, "{r}");
}

#[test]
fn unbiased_sensitive_attribute_is_uncorrelated_with_labels() {
    let cfg = SbmConfig {
        p_bias: 0.5,
        seed: 4,
        ..SbmConfig::default()
    };
    let g = generate_sbm(&cfg).unwrap();
    let s: Vec<f64> = g.sensitive.unwrap().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = g.labels.iter().map(|&v| v as f64).collect();
    let c = pearson(&s, &y);
    assert!(c.abs() < 0.05, "{c}");
}

#[test]
fn saved_sbm_is_bit_identical_across_generations() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = SbmConfig {
        seed: 7,
        ..SbmConfig::default()
    };
    save_dataset(&generate_sbm(&cfg).unwrap(), a.path()).unwrap();
    save_dataset(&generate_sbm(&cfg).unwrap(), b.path()).unwrap();
    for f in ["meta.json", "edges.csv", "features.csv", "labels.csv", "sensitive.csv", "splits.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let back = load_dataset(a.path()).unwrap();
    assert_eq!(back, generate_sbm(&cfg).unwrap());
}
