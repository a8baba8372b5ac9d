//! Regression losses: visibility-masked 2D reprojection, parameter-space
//! error, root-aligned 3D joint error, and the weighted total.

use serde::{Deserialize, Serialize};

use super::diffkin::{forward_kinematics_node, pose6d_to_rotations, project_node};
use super::skeleton::{DeskSkeleton, JOINT_COUNT, SHAPE_DIM};
use crate::diffcore::{DiffResult, Graph, NodeId, Tensor};
use crate::nodeinit::visibility_mask;
use crate::scenegen::PersonRecord;

/// Balancing weights of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub reproj: f64,
    pub smpl: f64,
    pub joint: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reproj: 1.0,
            smpl: 1.0,
            joint: 1.0,
            contrastive: 1.0,
        }
    }
}

/// One person's differentiable prediction chain.
pub struct PersonPrediction {
    /// `[24, 6]`.
    pub pose6d: NodeId,
    /// `[1, 10]`.
    pub shape: NodeId,
    /// `[1, 3]` weak-perspective `(s, t_x, t_y)`.
    pub camera: NodeId,
    /// Root-relative FK joints, `[24, 3]`.
    pub joints3d: NodeId,
    /// Projected joints in focal-normalized units, `[24, 2]`.
    pub joints2d: NodeId,
    pub degenerate_rotations: usize,
}

/// Runs rotations, FK, and projection for one person's head rows.
pub fn predict_person(
    g: &mut Graph,
    skeleton: &DeskSkeleton,
    pose_row: NodeId,
    shape_row: NodeId,
    camera_row: NodeId,
) -> DiffResult<PersonPrediction> {
    let pose6d = g.reshape(pose_row, vec![JOINT_COUNT, 6])?;
    let (rotations, degenerate_rotations) = pose6d_to_rotations(g, pose6d)?;
    let joints3d = forward_kinematics_node(g, skeleton, &rotations, shape_row)?;
    let joints2d = project_node(g, joints3d, camera_row)?;
    Ok(PersonPrediction {
        pose6d,
        shape: shape_row,
        camera: camera_row,
        joints3d,
        joints2d,
        degenerate_rotations,
    })
}

/// Mean squared 2D error over visible joints (`m_k = 1`), in
/// focal-normalized pixel units. Fully occluded persons contribute zero.
pub fn reproj_loss(
    g: &mut Graph,
    pred2d: NodeId,
    person: &PersonRecord,
    camera_f: f64,
    tau_vis: f64,
) -> DiffResult<NodeId> {
    let gt: Vec<f64> = person
        .joints2d
        .iter()
        .flat_map(|j| [j.x / camera_f, j.y / camera_f])
        .collect();
    let gt = g.constant(Tensor::new(vec![JOINT_COUNT, 2], gt).expect("gt dims"));
    let mask = g.constant(Tensor::vector(visibility_mask(&person.joints2d, tau_vis)));
    let diff = g.sub(pred2d, gt)?;
    let sq = g.mul(diff, diff)?;
    let per_axis = g.masked_mean(sq, mask)?;
    g.mean(per_axis)
}

/// Mean squared error over the stacked `(pose6d, beta)` parameters against
/// ground truth; `None` when the scene carries no parameter annotations.
pub fn smpl_param_loss(
    g: &mut Graph,
    pred: &PersonPrediction,
    person: &PersonRecord,
) -> DiffResult<Option<NodeId>> {
    let (Some(gt_pose), Some(gt_shape)) = (&person.gt_pose6d, &person.gt_shape) else {
        return Ok(None);
    };
    let pred_pose = g.reshape(pred.pose6d, vec![1, JOINT_COUNT * 6])?;
    let pred_all = g.concat(1, &[pred_pose, pred.shape])?;
    let mut gt: Vec<f64> = gt_pose.data().to_vec();
    gt.extend_from_slice(gt_shape);
    let gt = g.constant(Tensor::new(vec![1, JOINT_COUNT * 6 + SHAPE_DIM], gt).expect("gt dims"));
    Ok(Some(g.squared_error(pred_all, gt)?))
}

/// Mean squared 3D joint error after root alignment of both sides.
pub fn joint_loss(
    g: &mut Graph,
    pred_joints: NodeId,
    person: &PersonRecord,
) -> DiffResult<NodeId> {
    let root = person.gt_joints3d[0];
    let gt: Vec<f64> = person
        .gt_joints3d
        .iter()
        .flat_map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]])
        .collect();
    let gt = g.constant(Tensor::new(vec![JOINT_COUNT, 3], gt).expect("gt dims"));

    let pred_root = g.slice(pred_joints, 0, vec![1, 3])?;
    let root_rows = g.concat(0, &vec![pred_root; JOINT_COUNT])?;
    let aligned = g.sub(pred_joints, root_rows)?;
    g.squared_error(aligned, gt)
}

/// `w1 L_reproj + w2 L_smpl + w3 L_joint + w4 L_contrastive`.
pub fn combine_total(
    g: &mut Graph,
    reproj: NodeId,
    smpl: NodeId,
    joint: NodeId,
    contrastive: NodeId,
    weights: &LossWeights,
) -> DiffResult<NodeId> {
    let a = g.scale(reproj, weights.reproj)?;
    let b = g.scale(smpl, weights.smpl)?;
    let c = g.scale(joint, weights.joint)?;
    let d = g.scale(contrastive, weights.contrastive)?;
    let ab = g.add(a, b)?;
    let cd = g.add(c, d)?;
    g.add(ab, cd)
}
