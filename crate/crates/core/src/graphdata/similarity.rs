use crate::autodiff::Tensor;

/// Pairwise cosine similarity of the rows of `x`. Rows with zero norm have
/// zero similarity to everything, themselves included.
pub fn cosine_similarity_matrix(x: &Tensor) -> Tensor {
    let (n, d) = x.shape();
    let sq_norms: Vec<f64> = (0..n).map(|u| x.row(u).iter().map(|v| v * v).sum::<f64>()).collect();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        if sq_norms[u] == 0.0 {
            continue;
        }
        for v in u..n {
            if sq_norms[v] == 0.0 {
                continue;
            }
            let (ru, rv) = (x.row(u), x.row(v));
            let dot: f64 = (0..d).map(|j| ru[j] * rv[j]).sum();
            // sqrt(a * a) == a exactly, so parallel rows give exactly 1
            let c = (dot / (sq_norms[u] * sq_norms[v]).sqrt()).clamp(-1.0, 1.0);
            out[u * n + v] = c;
            out[v * n + u] = c;
        }
    }
    Tensor::new(n, n, out).expect("n x n")
}

/// Binary symmetric adjacency linking distinct rows whose cosine similarity
/// is at least `threshold`.
pub fn build_similarity_graph(x: &Tensor, threshold: f64) -> Tensor {
    let sim = cosine_similarity_matrix(x);
    let n = x.rows();
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            if u != v && sim.get(u, v) >= threshold {
                out[u * n + v] = 1.0;
            }
        }
    }
    Tensor::new(n, n, out).expect("n x n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        let s = cosine_similarity_matrix(&Tensor::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.0, 2.0], [1.0, 0.0]]));
        assert_eq!(s.get(0, 3), 1.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert!((s.get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(s.get(1, 1), 1.0);
    }

    #[test]
    fn zero_rows_have_zero_similarity() {
        let s = cosine_similarity_matrix(&Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0]]));
        assert_eq!(s.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn similarity_graph_boundaries() {
        let x = Tensor::from_rows(&[[1.0, 0.0], [1.0, 1.0], [0.5, 2.0]]);
        assert!(build_similarity_graph(&x, 1.0).data().iter().all(|&v| v == 0.0));
        let g = build_similarity_graph(&x, 0.0);
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(g.get(u, v), if u == v { 0.0 } else { 1.0 });
            }
        }
        let parallel = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0], [-1.0, 3.0]]);
        let g = build_similarity_graph(&parallel, 0.99);
        assert_eq!(g.data().iter().sum::<f64>(), 2.0);
        assert_eq!(g.get(0, 1), 1.0);
    }

    proptest! {
        #[test]
        fn matches_pairwise_definition(values in proptest::collection::vec(-5.0f64..5.0, 40)) {
            let x = Tensor::new(10, 4, values).unwrap();
            let s = cosine_similarity_matrix(&x);
            for u in 0..10 {
                for v in 0..10 {
                    let (a, b) = (x.row(u), x.row(v));
                    let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                    let na = a.iter().map(|p| p * p).sum::<f64>().sqrt();
                    let nb = b.iter().map(|p| p * p).sum::<f64>().sqrt();
                    let expect = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
                    prop_assert!((s.get(u, v) - expect).abs() < 1e-12);
                    prop_assert_eq!(s.get(u, v), s.get(v, u));
                }
            }
        }
    }
}
