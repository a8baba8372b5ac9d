//! Shared hypergraph topology: global cosine affinity, K-nearest-neighbor
//! hyperedges, and the binary incidence matrix used by every modality
//! branch.
//!
//! Topology selection is discrete and recomputed from current embedding
//! values each forward pass; no gradient flows through it.

use thiserror::Error;

use crate::diffcore::Tensor;

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("K = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("affinity requires a rank-2 embedding matrix, got {dims:?}")]
    BadEmbeddings { dims: Vec<usize> },
}

/// Pairwise cosine affinity over node embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinity {
    /// N x N cosine matrix; rows of all-zero embeddings yield zero rows
    /// (including the diagonal), otherwise the diagonal is exactly 1.
    pub matrix: Tensor,
}

impl Affinity {
    pub fn n(&self) -> usize {
        self.matrix.dims()[0]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix.at2(i, j)
    }
}

/// Binary node-by-hyperedge incidence; hyperedge `i` is the K-neighborhood
/// of node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    pub matrix: Tensor,
    pub k: usize,
}

impl Incidence {
    pub fn n(&self) -> usize {
        self.matrix.dims()[0]
    }
}

/// Computes the global affinity matrix from aggregate embeddings (N x 3D).
///
/// `A[i][j] = <h_i, h_j> / (|h_i| |h_j|)`; the diagonal is set to exactly 1
/// for nonzero rows so self-similarity is always maximal under ties.
pub fn affinity(h_agg: &Tensor) -> Result<Affinity, TopoError> {
    if h_agg.rank() != 2 {
        return Err(TopoError::BadEmbeddings {
            dims: h_agg.dims().to_vec(),
        });
    }
    let (n, d) = (h_agg.dims()[0], h_agg.dims()[1]);

    let mut unit = vec![0.0; n * d];
    let mut nonzero = vec![false; n];
    for i in 0..n {
        let row = h_agg.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            nonzero[i] = true;
            for (j, v) in row.iter().enumerate() {
                unit[i * d + j] = v / norm;
            }
        }
    }

    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = (0..d).map(|c| unit[i * d + c] * unit[j * d + c]).sum();
            a.set2(i, j, dot);
            a.set2(j, i, dot);
        }
        if nonzero[i] {
            a.set2(i, i, 1.0);
        }
    }
    Ok(Affinity { matrix: a })
}

/// K nearest neighbors of every node by affinity column, self included.
///
/// Ties break toward the lower node index; the result is the exact set of
/// indices of the K largest `A[., i]` values.
pub fn knn_neighbors(affinity: &Affinity, k: usize) -> Result<Vec<Vec<usize>>, TopoError> {
    let n = affinity.n();
    if k == 0 || k > n {
        return Err(TopoError::KOutOfRange { k, n });
    }
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            affinity
                .at(b, i)
                .partial_cmp(&affinity.at(a, i))
                .expect("finite affinities")
                .then(a.cmp(&b))
        });
        order.truncate(k);
        neighbors.push(order);
    }
    Ok(neighbors)
}

/// Incidence matrix per the neighbor sets: `H[j][i] = 1` iff node `j`
/// belongs to hyperedge `i`. One shared topology serves all modalities.
pub fn incidence(neighbors: &[Vec<usize>], n: usize) -> Incidence {
    let mut h = Tensor::zeros(&[n, n]);
    let mut k = 0;
    for (i, set) in neighbors.iter().enumerate() {
        k = k.max(set.len());
        for &j in set {
            h.set2(j, i, 1.0);
        }
    }
    Incidence { matrix: h, k }
}

/// Affinity + kNN + incidence in one step.
pub fn build_topology(h_agg: &Tensor, k: usize) -> Result<(Affinity, Incidence), TopoError> {
    let aff = affinity(h_agg)?;
    let neighbors = knn_neighbors(&aff, k)?;
    let n = aff.n();
    Ok((aff, incidence(&neighbors, n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    /// Brute-force oracle: fully sort each affinity column with the same
    /// tie rule and take the prefix.
    fn oracle_neighbors(a: &Affinity, k: usize) -> Vec<Vec<usize>> {
        let n = a.n();
        (0..n)
            .map(|i| {
                let mut all: Vec<usize> = (0..n).collect();
                all.sort_by(|&x, &y| {
                    a.at(y, i)
                        .partial_cmp(&a.at(x, i))
                        .unwrap()
                        .then(x.cmp(&y))
                });
                all[..k].to_vec()
            })
            .collect()
    }

    #[test]
    fn identical_vectors_have_unit_affinity() {
        let a = affinity(&rows(&[vec![1.0, 2.0], vec![1.0, 2.0]])).unwrap();
        assert!((a.at(0, 1) - 1.0).abs() < 1e-12);
        assert!(a.at(0, 1) <= 1.0 + 1e-12);
        // Diagonal is exact so self always wins ties.
        assert_eq!(a.at(0, 0), 1.0);
    }

    #[test]
    fn orthogonal_and_diagonal_cases() {
        let a = affinity(&rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])).unwrap();
        assert_eq!(a.at(0, 1), 0.0);
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a.at(0, 2) - expected).abs() < 1e-9);
        assert!((a.at(0, 2) - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn zero_row_is_documented_degenerate() {
        let a = affinity(&rows(&[vec![0.0, 0.0], vec![1.0, 0.0]])).unwrap();
        assert_eq!(a.at(0, 0), 0.0);
        assert_eq!(a.at(0, 1), 0.0);
        assert_eq!(a.at(1, 1), 1.0);
    }

    #[test]
    fn k_equals_one_selects_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(1..7);
            let emb = Tensor::new(
                vec![n, 4],
                (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let a = affinity(&emb).unwrap();
            let nb = knn_neighbors(&a, 1).unwrap();
            for (i, set) in nb.iter().enumerate() {
                assert_eq!(set, &vec![i]);
            }
        }
    }

    #[test]
    fn k_equals_n_is_the_full_graph() {
        let emb = rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
        let a = affinity(&emb).unwrap();
        let nb = knn_neighbors(&a, 3).unwrap();
        for set in &nb {
            let mut sorted = set.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2]);
        }
    }

    #[test]
    fn worked_three_node_example() {
        // A12 = 0.9, A13 = 0.1, A23 = 0.5 (1-indexed in the comments).
        let mut a = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            a.set2(i, i, 1.0);
        }
        a.set2(0, 1, 0.9);
        a.set2(1, 0, 0.9);
        a.set2(0, 2, 0.1);
        a.set2(2, 0, 0.1);
        a.set2(1, 2, 0.5);
        a.set2(2, 1, 0.5);
        let aff = Affinity { matrix: a };

        let nb = knn_neighbors(&aff, 2).unwrap();
        assert_eq!(nb[0], vec![0, 1]);
        assert_eq!(nb[1], vec![1, 0]);
        assert_eq!(nb[2], vec![2, 1]);

        let inc = incidence(&nb, 3);
        for i in 0..3 {
            let col_sum: f64 = (0..3).map(|j| inc.matrix.at2(j, i)).sum();
            assert_eq!(col_sum, 2.0);
        }
        // Asymmetry: node 1 is in edge 2's neighborhood but not vice versa.
        assert_eq!(inc.matrix.at2(2, 1), 0.0);
        assert_eq!(inc.matrix.at2(1, 2), 1.0);
    }

    #[test]
    fn knn_matches_full_sort_oracle_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..=8);
            let d = rng.gen_range(2..6);
            let mut emb = Tensor::zeros(&[n, d]);
            for v in emb.data_mut() {
                // Coarse values provoke ties.
                *v = (rng.gen_range(-2i32..3) as f64) * 0.5;
            }
            let a = affinity(&emb).unwrap();
            for k in 1..=n {
                let fast = knn_neighbors(&a, k).unwrap();
                let slow = oracle_neighbors(&a, k);
                assert_eq!(fast, slow, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn scale_invariance_power_of_two_is_bitwise() {
        let emb = rows(&[vec![0.3, -1.2, 0.7], vec![1.0, 0.4, -0.2], vec![-0.5, 0.9, 2.0]]);
        let base = affinity(&emb).unwrap();
        let mut scaled = emb.clone();
        for v in scaled.data_mut()[3..6].iter_mut() {
            *v *= 4.0;
        }
        let after = affinity(&scaled).unwrap();
        assert_eq!(base.matrix, after.matrix);
    }

    #[test]
    fn column_sums_and_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..=8);
            let k = rng.gen_range(1..=n);
            let emb = Tensor::new(
                vec![n, 5],
                (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let (_, inc) = build_topology(&emb, k).unwrap();
            for i in 0..n {
                let col: f64 = (0..n).map(|j| inc.matrix.at2(j, i)).sum();
                assert_eq!(col, k as f64);
                assert_eq!(inc.matrix.at2(i, i), 1.0, "self-inclusion");
            }
            assert!(inc.matrix.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn k_out_of_range_rejected() {
        let a = affinity(&rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert!(matches!(
            knn_neighbors(&a, 0),
            Err(TopoError::KOutOfRange { k: 0, n: 2 })
        ));
        assert!(matches!(
            knn_neighbors(&a, 3),
            Err(TopoError::KOutOfRange { k: 3, n: 2 })
        ));
    }
}
