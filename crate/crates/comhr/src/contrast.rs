//! Dual contrastive regularization of the per-modality feature spaces:
//! intra-modal clustering of similarly posed persons and a cross-modal
//! orthogonality hinge, combined with a balancing weight.
//!
//! Positives come from ground-truth pose proximity (root-aligned MPJPE
//! below a threshold) within one forward group. The intra objective is an
//! NCE-style softmax whose denominator ranges over the positive set only;
//! an all-pairs denominator is available for ablation.

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffResult, Graph, NodeId, Tensor};
use crate::metrics::root_aligned_mpjpe;

/// Per-node positive index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PositiveSets {
    pub sets: Vec<Vec<usize>>,
    pub eps_mpjpe: f64,
}

impl PositiveSets {
    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// Nodes with at least one positive.
    pub fn contributing(&self) -> usize {
        self.sets.iter().filter(|s| !s.is_empty()).count()
    }
}

/// How anchor terms are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorReduction {
    /// Average over contributing anchors.
    Mean,
    /// Plain sum over anchors.
    Sum,
}

/// What the softmax denominator ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Positives only (negatives masked out).
    PositivesOnly,
    /// Every other node; the conventional NCE denominator, for ablations.
    AllPairs,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub eps_mpjpe: f64,
    pub anchor_reduction: AnchorReduction,
    pub denominator: DenominatorMode,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            temperature: 0.07,
            alpha: 0.03,
            eps_mpjpe: 0.15,
            anchor_reduction: AnchorReduction::Mean,
            denominator: DenominatorMode::PositivesOnly,
        }
    }
}

/// Pairwise root-aligned MPJPE matrix over persons.
pub fn pairwise_mpjpe(poses: &[&[[f64; 3]]]) -> Tensor {
    let n = poses.len();
    let mut d = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = root_aligned_mpjpe(poses[i], poses[j]);
            d.set2(i, j, v);
            d.set2(j, i, v);
        }
    }
    d
}

/// Positive sets from a precomputed distance matrix: `P(i) = { j != i :
/// D[i][j] < eps }` (strict).
pub fn positive_sets_from_distances(distances: &Tensor, eps_mpjpe: f64) -> PositiveSets {
    let n = distances.dims()[0];
    let sets = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && distances.at2(i, j) < eps_mpjpe)
                .collect()
        })
        .collect();
    PositiveSets { sets, eps_mpjpe }
}

/// Positive sets from ground-truth joints.
pub fn positive_sets(poses: &[&[[f64; 3]]], eps_mpjpe: f64) -> PositiveSets {
    positive_sets_from_distances(&pairwise_mpjpe(poses), eps_mpjpe)
}

/// Intra-modal clustering loss over one modality's embeddings (`N x D`).
///
/// Returns the scalar loss node and a warning flag set when every positive
/// set is empty (the loss is then the constant zero).
pub fn intra_loss(
    g: &mut Graph,
    h_m: NodeId,
    positives: &PositiveSets,
    cfg: &ContrastConfig,
) -> DiffResult<(NodeId, bool)> {
    let n = g.value(h_m).dims()[0];
    debug_assert_eq!(positives.n(), n);

    let contributing = positives.contributing();
    if contributing == 0 {
        return Ok((g.constant_scalar(0.0), true));
    }

    let unit = g.l2_normalize(h_m)?;
    let unit_t = g.transpose(unit)?;
    let sims = g.matmul(unit, unit_t)?;
    let scaled = g.scale(sims, 1.0 / cfg.temperature)?;

    let mut terms = Vec::with_capacity(contributing);
    for (i, set) in positives.sets.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        let row = g.slice(scaled, i * n, vec![n])?;

        let mut pos_mask = Tensor::zeros(&[n]);
        for &p in set {
            pos_mask.data_mut()[p] = 1.0;
        }
        let denom_mask = match cfg.denominator {
            DenominatorMode::PositivesOnly => pos_mask.clone(),
            DenominatorMode::AllPairs => {
                let mut m = Tensor::full(&[n], 1.0);
                m.data_mut()[i] = 0.0;
                m
            }
        };

        let pos_mask = g.constant(pos_mask);
        let denom_mask = g.constant(denom_mask);

        let exps = g.exp(row)?;
        let masked_exps = g.mul(exps, denom_mask)?;
        let denom = g.sum(masked_exps)?;
        let lse = g.log(denom)?;

        let pos_sims = g.mul(row, pos_mask)?;
        let pos_sum = g.sum(pos_sims)?;
        let pos_mean = g.scale(pos_sum, 1.0 / set.len() as f64)?;

        terms.push(g.sub(lse, pos_mean)?);
    }

    let stacked = g.concat(0, &terms)?;
    let total = g.sum(stacked)?;
    let loss = match cfg.anchor_reduction {
        AnchorReduction::Mean => g.scale(total, 1.0 / contributing as f64)?,
        AnchorReduction::Sum => total,
    };
    Ok((loss, false))
}

/// Cross-modal orthogonality hinge: per node, the ReLU of the negated mean
/// pairwise cosine among the three modality embeddings, averaged over nodes.
pub fn cross_loss(
    g: &mut Graph,
    h_rgb: NodeId,
    h_depth: NodeId,
    h_pose: NodeId,
) -> DiffResult<NodeId> {
    let n = g.value(h_rgb).dims()[0];
    let mut per_node = Vec::with_capacity(n);
    for i in 0..n {
        let r = g.row(h_rgb, i)?;
        let d = g.row(h_depth, i)?;
        let p = g.row(h_pose, i)?;
        let rd = g.cosine(r, d)?;
        let rp = g.cosine(r, p)?;
        let dp = g.cosine(d, p)?;
        let sum = g.concat(0, &[rd, rp, dp])?;
        let total = g.sum(sum)?;
        let neg_mean = g.scale(total, -1.0 / 3.0)?;
        per_node.push(g.relu(neg_mean)?);
    }
    let stacked = g.concat(0, &per_node)?;
    let total = g.sum(stacked)?;
    g.scale(total, 1.0 / n as f64)
}

/// `sum_m intra^(m) + alpha * cross`.
pub fn contrastive_total(
    g: &mut Graph,
    intra: [NodeId; 3],
    cross: NodeId,
    alpha: f64,
) -> DiffResult<NodeId> {
    let a = g.add(intra[0], intra[1])?;
    let intra_sum = g.add(a, intra[2])?;
    let weighted = g.scale(cross, alpha)?;
    g.add(intra_sum, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamSet;

    fn embed(g: &mut Graph, rows: &[Vec<f64>]) -> NodeId {
        g.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn positive_sets_threshold_is_strict() {
        let mut d = Tensor::zeros(&[3, 3]);
        d.set2(0, 1, 0.1);
        d.set2(1, 0, 0.1);
        d.set2(0, 2, 0.4);
        d.set2(2, 0, 0.4);
        d.set2(1, 2, 0.4);
        d.set2(2, 1, 0.4);
        let p = positive_sets_from_distances(&d, 0.15);
        assert_eq!(p.sets, vec![vec![1], vec![0], vec![]]);
    }

    #[test]
    fn identical_poses_are_mutual_positives() {
        let pose: Vec<[f64; 3]> = (0..24).map(|k| [k as f64 * 0.1, 0.0, 0.0]).collect();
        let shifted: Vec<[f64; 3]> = pose.iter().map(|p| [p[0] + 3.0, p[1], p[2] + 1.0]).collect();
        let p = positive_sets(&[&pose, &shifted], 1e-6);
        assert_eq!(p.sets, vec![vec![1], vec![0]]);
    }

    #[test]
    fn singleton_positive_sets_give_zero_loss() {
        let mut g = Graph::new();
        let h = embed(
            &mut g,
            &[vec![1.0, 0.2], vec![0.4, -0.8], vec![-0.3, 0.9]],
        );
        let positives = PositiveSets {
            sets: vec![vec![1], vec![0], vec![]],
            eps_mpjpe: 0.15,
        };
        let (loss, warned) = intra_loss(&mut g, h, &positives, &ContrastConfig::default()).unwrap();
        assert!(!warned);
        assert!(g.value(loss).item().abs() < 1e-12);
    }

    #[test]
    fn two_equal_similarity_positives_contribute_ln2() {
        // Anchor 0 with positives 1 and 2 at identical similarity.
        let mut g = Graph::new();
        let h = embed(
            &mut g,
            &[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.6, -0.8]],
        );
        let positives = PositiveSets {
            sets: vec![vec![1, 2], vec![], vec![]],
            eps_mpjpe: 0.15,
        };
        let (loss, _) = intra_loss(&mut g, h, &positives, &ContrastConfig::default()).unwrap();
        assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn temperature_drops_out_under_uniform_similarities() {
        for temp in [0.05, 0.07, 0.08, 0.5] {
            let mut g = Graph::new();
            let h = embed(
                &mut g,
                &[vec![1.0, 0.0], vec![0.6, 0.8], vec![0.6, -0.8]],
            );
            let positives = PositiveSets {
                sets: vec![vec![1, 2], vec![], vec![]],
                eps_mpjpe: 0.15,
            };
            let cfg = ContrastConfig {
                temperature: temp,
                ..ContrastConfig::default()
            };
            let (loss, _) = intra_loss(&mut g, h, &positives, &cfg).unwrap();
            assert!(
                (g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-9,
                "temp {temp}"
            );
        }
    }

    #[test]
    fn empty_positives_warn_and_return_zero() {
        let mut g = Graph::new();
        let h = embed(&mut g, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let positives = PositiveSets {
            sets: vec![vec![], vec![]],
            eps_mpjpe: 0.15,
        };
        let (loss, warned) = intra_loss(&mut g, h, &positives, &ContrastConfig::default()).unwrap();
        assert!(warned);
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn intra_loss_is_nonnegative_and_permutation_invariant() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let n = rng.gen_range(2..6);
            let d = rng.gen_range(2..5);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let sets: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| j != i && rng.gen_bool(0.5))
                        .collect()
                })
                .collect();
            let positives = PositiveSets {
                sets: sets.clone(),
                eps_mpjpe: 0.15,
            };
            let mut g = Graph::new();
            let h = embed(&mut g, &rows);
            let (loss, _) = intra_loss(&mut g, h, &positives, &ContrastConfig::default()).unwrap();
            let base = g.value(loss).item();
            assert!(base >= -1e-12, "intra loss must be nonnegative, got {base}");

            // Rotate node indices by one and permute sets accordingly.
            let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
            let mut prows = vec![Vec::new(); n];
            let mut psets = vec![Vec::new(); n];
            for i in 0..n {
                prows[perm[i]] = rows[i].clone();
                psets[perm[i]] = sets[i].iter().map(|&j| perm[j]).collect();
            }
            let mut g2 = Graph::new();
            let h2 = embed(&mut g2, &prows);
            let (loss2, _) = intra_loss(
                &mut g2,
                h2,
                &PositiveSets {
                    sets: psets,
                    eps_mpjpe: 0.15,
                },
                &ContrastConfig::default(),
            )
            .unwrap();
            assert!((g2.value(loss2).item() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_empty_anchor_gets_exactly_zero_gradient() {
        let mut ps = ParamSet::new();
        ps.insert(
            "h",
            Tensor::from_rows(&[vec![1.0, 0.2], vec![0.4, -0.8], vec![-0.3, 0.9]]).unwrap(),
        )
        .unwrap();
        let mut g = Graph::new();
        let h = g.param(&ps, 0);
        // Node 2 has no positives and appears in nobody's positive set.
        let positives = PositiveSets {
            sets: vec![vec![1], vec![0], vec![]],
            eps_mpjpe: 0.15,
        };
        let (loss, _) = intra_loss(&mut g, h, &positives, &ContrastConfig::default()).unwrap();
        let grads = g.backward(loss, &ps).unwrap();
        let gh = grads.slot(0);
        assert_eq!(gh.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn cross_loss_zero_for_identical_and_orthogonal() {
        let mut g = Graph::new();
        let same = embed(&mut g, &[vec![0.3, 0.4, 0.1]]);
        let loss = cross_loss(&mut g, same, same, same).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);

        let r = embed(&mut g, &[vec![1.0, 0.0, 0.0]]);
        let d = embed(&mut g, &[vec![0.0, 1.0, 0.0]]);
        let p = embed(&mut g, &[vec![0.0, 0.0, 1.0]]);
        let loss = cross_loss(&mut g, r, d, p).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn planar_120_degree_triple_costs_half() {
        let mut g = Graph::new();
        let sqrt3_2 = 3f64.sqrt() / 2.0;
        let r = embed(&mut g, &[vec![1.0, 0.0]]);
        let d = embed(&mut g, &[vec![-0.5, sqrt3_2]]);
        let p = embed(&mut g, &[vec![-0.5, -sqrt3_2]]);
        let loss = cross_loss(&mut g, r, d, p).unwrap();
        assert!((g.value(loss).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_loss_stays_in_unit_interval() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(1..5);
            let d = rng.gen_range(2..5);
            let mut g = Graph::new();
            let mut make = |rng: &mut rand_chacha::ChaCha8Rng| {
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                g.constant(Tensor::from_rows(&rows).unwrap())
            };
            let r = make(&mut rng);
            let dd = make(&mut rng);
            let p = make(&mut rng);
            let loss = cross_loss(&mut g, r, dd, p).unwrap();
            let v = g.value(loss).item();
            assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
        }
    }

    #[test]
    fn total_reproduces_weighted_example() {
        let mut g = Graph::new();
        let zero = g.constant_scalar(0.0);
        let cross = g.constant_scalar(0.5);
        let total = contrastive_total(&mut g, [zero, zero, zero], cross, 0.03).unwrap();
        assert!((g.value(total).item() - 0.015).abs() < 1e-15);

        let total = contrastive_total(&mut g, [zero, zero, zero], cross, 0.0).unwrap();
        assert_eq!(g.value(total).item(), 0.0);
    }
}
