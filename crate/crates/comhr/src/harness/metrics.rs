//! Evaluation: root-aligned MPJPE and pairwise depth-ordering accuracy.

use serde::Serialize;

use crate::diffcore::Graph;
use crate::metrics::root_aligned_mpjpe;
use crate::model::{LossBreakdown, Model};
use crate::scenegen::Scene;

use super::partition::partition_subgroups;
use super::TrainError;

/// Aggregate evaluation results. MPJPE is reported in millimeters with one
/// skeleton unit read as one meter; depth ordering counts an unordered
/// person pair as correct only when the predicted pelvis-depth order
/// strictly matches ground truth (ties are incorrect).
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub mpjpe_mm: f64,
    pub depth_order_acc: f64,
    pub persons: usize,
    pub pairs: usize,
    pub mean_loss: LossBreakdown,
}

pub(crate) fn accumulate_breakdown(acc: &mut LossBreakdown, one: &LossBreakdown) {
    acc.total += one.total;
    acc.reproj += one.reproj;
    acc.smpl += one.smpl;
    acc.joint += one.joint;
    acc.intra_rgb += one.intra_rgb;
    acc.intra_depth += one.intra_depth;
    acc.intra_pose += one.intra_pose;
    acc.cross += one.cross;
    acc.contrastive += one.contrastive;
}

pub(crate) fn scale_breakdown(acc: &mut LossBreakdown, by: f64) {
    acc.total *= by;
    acc.reproj *= by;
    acc.smpl *= by;
    acc.joint *= by;
    acc.intra_rgb *= by;
    acc.intra_depth *= by;
    acc.intra_pose *= by;
    acc.cross *= by;
    acc.contrastive *= by;
}

/// Evaluates the model over scenes, reasoning per subgroup.
pub fn evaluate(
    model: &Model,
    scenes: &[Scene],
    max_subgroup: usize,
) -> Result<MetricsReport, TrainError> {
    let mut mpjpe_sum = 0.0;
    let mut persons = 0usize;
    let mut correct_pairs = 0usize;
    let mut pairs = 0usize;
    let mut mean_loss = LossBreakdown::default();
    let mut groups = 0usize;

    for scene in scenes {
        let mut predicted_tz = vec![0.0; scene.persons.len()];
        for group in partition_subgroups(scene, &model.cfg.encoder, max_subgroup) {
            let mut g = Graph::inference();
            let out = model.forward_group(&mut g, scene, &group.persons, None)?;
            accumulate_breakdown(&mut mean_loss, &out.breakdown);
            groups += 1;
            for (slot, &pi) in group.persons.iter().enumerate() {
                let pred_joints = out.predictions[slot].joints(&model.skeleton);
                mpjpe_sum +=
                    root_aligned_mpjpe(&pred_joints, &scene.persons[pi].gt_joints3d) * 1000.0;
                persons += 1;
                predicted_tz[pi] = out.tz[slot];
            }
        }

        let gt_depth = scene.gt_pelvis_relative_depths();
        let n = scene.persons.len();
        for i in 0..n {
            for j in (i + 1)..n {
                pairs += 1;
                let predicted = predicted_tz[i].partial_cmp(&predicted_tz[j]);
                let actual = gt_depth[i].partial_cmp(&gt_depth[j]);
                if let (Some(p), Some(a)) = (predicted, actual) {
                    if p == a && p != std::cmp::Ordering::Equal {
                        correct_pairs += 1;
                    }
                }
            }
        }
    }

    if groups > 0 {
        scale_breakdown(&mut mean_loss, 1.0 / groups as f64);
    }

    Ok(MetricsReport {
        mpjpe_mm: if persons > 0 {
            mpjpe_sum / persons as f64
        } else {
            0.0
        },
        depth_order_acc: if pairs > 0 {
            correct_pairs as f64 / pairs as f64
        } else {
            1.0
        },
        persons,
        pairs,
        mean_loss,
    })
}

/// Depth-ordering accuracy of externally supplied per-person depth
/// estimates against ground truth, ties incorrect.
pub fn depth_order_accuracy(predicted: &[f64], ground_truth: &[f64]) -> f64 {
    let n = predicted.len();
    if n < 2 {
        return 1.0;
    }
    let mut correct = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            pairs += 1;
            let p = predicted[i].total_cmp(&predicted[j]);
            let a = ground_truth[i].total_cmp(&ground_truth[j]);
            if p == a && p != std::cmp::Ordering::Equal {
                correct += 1;
            }
        }
    }
    correct as f64 / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predictions_score_zero_by_the_tie_rule() {
        let acc = depth_order_accuracy(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3]);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn swapped_two_person_ordering_scores_zero() {
        let acc = depth_order_accuracy(&[0.2, 0.8], &[0.8, 0.2]);
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn perfect_ordering_scores_one() {
        let acc = depth_order_accuracy(&[0.1, 0.5, 0.9], &[1.0, 2.0, 3.0]);
        assert_eq!(acc, 1.0);
    }
}
