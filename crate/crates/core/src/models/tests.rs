use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::finite_diff_report;
use crate::distill::losses::loss_cls;
use crate::graphdata::{split_nodes, SplitMasks};
use crate::metrics::accuracy;

fn random_graph(seed: u64, n: usize, d: usize, p: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; n * n];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                a[u * n + v] = 1.0;
                a[v * n + u] = 1.0;
            }
        }
    }
    let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|u| u % 2).collect();
    let train: Vec<usize> = (0..n).collect();
    Graph {
        adjacency: Tensor::new(n, n, a).unwrap(),
        features: Tensor::new(n, d, x).unwrap(),
        labels,
        num_classes: 2,
        splits: SplitMasks::from_indices(n, &train, &[], &[]).unwrap(),
        sensitive: Some((0..n).map(|u| u8::from(u % 3 == 0)).collect()),
        directed: false,
    }
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    // node u of the new graph is node perm[u] of the old one
    let n = g.n();
    let d = g.d();
    let mut a = vec![0.0; n * n];
    let mut x = vec![0.0; n * d];
    for u in 0..n {
        for v in 0..n {
            a[u * n + v] = g.adjacency.get(perm[u], perm[v]);
        }
        x[u * d..(u + 1) * d].copy_from_slice(g.features.row(perm[u]));
    }
    Graph {
        adjacency: Tensor::new(n, n, a).unwrap(),
        features: Tensor::new(n, d, x).unwrap(),
        labels: perm.iter().map(|&p| g.labels[p]).collect(),
        sensitive: g.sensitive.as_ref().map(|s| perm.iter().map(|&p| s[p]).collect()),
        ..g.clone()
    }
}

fn embed(kind: ModelKind, g: &Graph, params: &ParamSet, spec: &ModelSpec) -> Tensor {
    let ctx = ModelContext::for_graph(kind, g);
    spec.forward(&mut Tape::new(), params, &ctx, &g.features).unwrap().h
}

#[test]
fn forwards_are_permutation_equivariant() {
    let g = random_graph(1, 6, 3, 0.5);
    let perm = [3, 0, 5, 1, 4, 2];
    let pg = permuted(&g, &perm);
    for kind in [ModelKind::Gcn, ModelKind::Gat, ModelKind::Graphormer, ModelKind::Mlp] {
        let mut spec = ModelSpec::new(kind, 3, 4);
        spec.heads = 2;
        let params = spec.init(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut params = params;
        if kind == ModelKind::Graphormer {
            let table = Tensor::new(SPD_CAP + 2, 1, (0..SPD_CAP + 2).map(|i| 0.3 * i as f64 - 0.5).collect()).unwrap();
            params.set("graphormer.spatial", table).unwrap();
        }
        let h = embed(kind, &g, &params, &spec);
        let hp = embed(kind, &pg, &params, &spec);
        for u in 0..6 {
            for j in 0..4 {
                // summation order differs after relabeling, so equality is up to rounding
                assert!((hp.get(u, j) - h.get(perm[u], j)).abs() < 1e-12, "{kind}");
            }
        }
    }
}

#[test]
fn graphormer_without_structural_tables_ignores_edges() {
    let g = random_graph(3, 6, 3, 0.4);
    let rewired = g.with_adjacency(random_graph(4, 6, 3, 0.6).adjacency).unwrap();
    let spec = ModelSpec::new(ModelKind::Graphormer, 3, 4);
    let mut params = spec.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    params.set("graphormer.centrality", Tensor::zeros(DEGREE_CAP + 1, 4)).unwrap();
    let a = embed(ModelKind::Graphormer, &g, &params, &spec);
    let b = embed(ModelKind::Graphormer, &rewired, &params, &spec);
    assert!(a.bit_eq(&b));
}

#[test]
fn mlp_ignores_structure() {
    let g = random_graph(3, 6, 3, 0.4);
    let rewired = g.with_adjacency(random_graph(4, 6, 3, 0.6).adjacency).unwrap();
    let spec = ModelSpec::new(ModelKind::Mlp, 3, 4);
    let params = spec.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!(embed(ModelKind::Mlp, &g, &params, &spec).bit_eq(&embed(ModelKind::Mlp, &rewired, &params, &spec)));
}

#[test]
fn every_forward_composed_with_cross_entropy_passes_gradcheck() {
    for (kind, seed) in [(ModelKind::Gcn, 11), (ModelKind::Gat, 12), (ModelKind::Graphormer, 13), (ModelKind::Mlp, 14)] {
        let g = random_graph(seed, 7, 3, 0.45);
        let mut spec = ModelSpec::new(kind, 3, 4);
        spec.heads = 2;
        let mut params = init_student(&spec, 2, seed).unwrap();
        if kind == ModelKind::Graphormer {
            let table = Tensor::new(SPD_CAP + 2, 1, (0..SPD_CAP + 2).map(|i| 0.2 * i as f64 - 0.4).collect()).unwrap();
            params.set("graphormer.spatial", table).unwrap();
        }
        let ctx = ModelContext::for_graph(kind, &g);
        let report = finite_diff_report(
            |tape, p| {
                let h = spec.forward(tape, p, &ctx, &g.features)?.h;
                let logits = predict(tape, p, &h)?;
                loss_cls(tape, &logits, &g.labels, &g.splits.train)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{kind}: {report:?}");
    }
}

#[test]
fn fairness_penalty_passes_gradcheck() {
    let g = random_graph(21, 8, 3, 0.4);
    let spec = ModelSpec::new(ModelKind::Gcn, 3, 4);
    let params = init_student(&spec, 2, 21).unwrap();
    let ctx = ModelContext::for_graph(ModelKind::Gcn, &g);
    let s = g.sensitive.clone().unwrap();
    let report = finite_diff_report(
        |tape, p| {
            let h = spec.forward(tape, p, &ctx, &g.features)?.h;
            let logits = predict(tape, p, &h)?;
            fairness_penalty(tape, &logits, &s, &g.splits.train)
        },
        &params,
        1e-4,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

/// Two clusters of ten nodes, separable by the first feature.
fn separable() -> Graph {
    let n = 20;
    let mut a = vec![0.0; n * n];
    for u in 0..n {
        let v = if u % 10 == 9 { u - 9 } else { u + 1 };
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let labels: Vec<usize> = (0..n).map(|u| u / 10).collect();
    let x: Vec<f64> = (0..n)
        .flat_map(|u| {
            let sign = if u < 10 { -1.0 } else { 1.0 };
            [sign * (1.0 + (u % 10) as f64 * 0.1), ((u * 7) % 5) as f64 * 0.2]
        })
        .collect();
    Graph {
        adjacency: Tensor::new(n, n, a).unwrap(),
        features: Tensor::new(n, 2, x).unwrap(),
        labels,
        num_classes: 2,
        splits: split_nodes(n, (0.5, 0.25, 0.25), 1).unwrap(),
        sensitive: None,
        directed: false,
    }
}

#[test]
fn separable_toy_graph_is_fit_perfectly() {
    let g = separable();
    for kind in [ModelKind::Gcn, ModelKind::Gat, ModelKind::Graphormer, ModelKind::Mlp] {
        let cfg = TrainConfig {
            epochs: 200,
            patience: 200,
            ..TrainConfig::default()
        };
        let r = train_supervised(kind, &g, &cfg).unwrap();
        let acc = accuracy(&r.logits.argmax_rows(), &g.labels, &g.splits.train).unwrap();
        assert_eq!(acc, 1.0, "{kind}");
        assert_eq!(r.attention.is_some(), kind == ModelKind::Gat);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let g = separable();
    let cfg = TrainConfig {
        epochs: 30,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train_supervised(ModelKind::Gat, &g, &cfg).unwrap();
    let b = train_supervised(ModelKind::Gat, &g, &cfg).unwrap();
    assert!(a.logits.bit_eq(&b.logits));
    assert!(a.params.bit_eq(&b.params));
    let c = train_supervised(ModelKind::Gat, &g, &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert!(!a.logits.bit_eq(&c.logits));
}

#[test]
fn early_stopping_respects_patience() {
    let g = separable();
    let cfg = TrainConfig {
        epochs: 500,
        patience: 5,
        ..TrainConfig::default()
    };
    let r = train_supervised(ModelKind::Gcn, &g, &cfg).unwrap();
    assert!(r.history.len() < 500);
    assert_eq!(r.history.len(), r.best_epoch + 6);
}

#[test]
fn model_kind_parses() {
    assert_eq!("graphormer".parse::<ModelKind>().unwrap(), ModelKind::Graphormer);
    assert!("transformer".parse::<ModelKind>().is_err());
}
