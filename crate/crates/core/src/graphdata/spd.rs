use std::collections::VecDeque;

use crate::autodiff::Tensor;

/// Capped hop distances. Pairs farther than `cap` hops, or unreachable, hold
/// `cap + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpdMatrix {
    pub n: usize,
    pub cap: usize,
    data: Vec<usize>,
}

impl SpdMatrix {
    pub fn get(&self, u: usize, v: usize) -> usize {
        self.data[u * self.n + v]
    }

    /// Row-major bucket indices, each in `0..=cap + 1`.
    pub fn buckets(&self) -> &[usize] {
        &self.data
    }
}

/// Breadth-first hop distances over the nonzero entries of `adjacency`,
/// following out-edges.
pub fn shortest_path_distances(adjacency: &Tensor, cap: usize) -> SpdMatrix {
    let n = adjacency.rows();
    let far = cap + 1;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|u| (0..n).filter(|&v| v != u && adjacency.get(u, v) != 0.0).collect())
        .collect();
    let mut data = vec![far; n * n];
    let mut queue = VecDeque::new();
    for src in 0..n {
        let row = &mut data[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            if du == cap {
                continue;
            }
            for &v in &neighbors[u] {
                if row[v] == far && v != src {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    SpdMatrix { n, cap, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undirected(n: usize, edges: &[(usize, usize)]) -> Tensor {
        let mut a = vec![0.0; n * n];
        for &(u, v) in edges {
            a[u * n + v] = 1.0;
            a[v * n + u] = 1.0;
        }
        Tensor::new(n, n, a).unwrap()
    }

    #[test]
    fn path_and_components() {
        let a = undirected(5, &[(0, 1), (1, 2), (3, 4)]);
        let s = shortest_path_distances(&a, 5);
        for u in 0..5 {
            assert_eq!(s.get(u, u), 0);
        }
        assert_eq!(s.get(0, 2), 2);
        assert_eq!(s.get(0, 3), 6);
        assert_eq!(s.get(4, 1), 6);
        assert_eq!(s.get(3, 4), 1);
    }

    #[test]
    fn distances_beyond_cap_fall_in_far_bucket() {
        let a = undirected(8, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]);
        let s = shortest_path_distances(&a, 5);
        assert_eq!(s.get(0, 5), 5);
        assert_eq!(s.get(0, 6), 6);
        assert_eq!(s.get(0, 7), 6);
    }
}
