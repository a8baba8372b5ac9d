//! Final fusion, parameter heads, the desk-scale kinematic skeleton and
//! camera model, and the regression losses.

pub mod diffkin;
pub mod heads;
pub mod kinematics;
pub mod losses;
pub mod skeleton;

pub use diffkin::{forward_kinematics_node, pose6d_to_rotations, project_node, rot6d_node};
pub use heads::{box_embedding, fuse_final, regress, HeadOutputs, RegressorConfig};
pub use kinematics::{forward_kinematics, project, rot6d_to_matrix, Mat3, MAT3_IDENTITY};
pub use losses::{
    combine_total, joint_loss, predict_person, reproj_loss, smpl_param_loss, LossWeights,
    PersonPrediction,
};
pub use skeleton::{DeskSkeleton, JOINT_COUNT, LEFT_HIP, PELVIS, RIGHT_HIP, SHAPE_DIM};

/// Plain-value prediction for one person, decoded from head outputs.
#[derive(Clone, Debug)]
pub struct ParamPrediction {
    /// `24 x 6` rotation representation.
    pub pose6d: crate::diffcore::Tensor,
    /// 10-component shape vector.
    pub shape: Vec<f64>,
    /// Weak-perspective `(s, t_x, t_y)`.
    pub camera: [f64; 3],
}

impl ParamPrediction {
    /// Root-relative joints via the value-level kinematics chain.
    pub fn joints(&self, skeleton: &DeskSkeleton) -> [[f64; 3]; JOINT_COUNT] {
        let mut rots = [MAT3_IDENTITY; JOINT_COUNT];
        for (k, rot) in rots.iter_mut().enumerate() {
            let r6: [f64; 6] = std::array::from_fn(|c| self.pose6d.at2(k, c));
            *rot = rot6d_to_matrix(&r6).0;
        }
        forward_kinematics(skeleton, &rots, &self.shape)
    }
}
