//! Desk-scale kinematic skeleton: a 24-joint rigid tree with linear
//! shape-dependent bone scaling.
//!
//! Joint `k` sits at `parent_pos + R_global(parent) * (offset_k * s_k)` with
//! `s_k = 1 + 0.1 * (B beta)_k`; the root (pelvis) is at the origin. Every
//! row of the blend matrix `B` has L1 norm <= 2.5, so bone lengths stay
//! positive for `|beta|_inf <= 3`.

use crate::diffcore::Tensor;

pub const JOINT_COUNT: usize = 24;
pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const SHAPE_DIM: usize = 10;

/// Parent index per joint; the root is its own parent.
pub const PARENTS: [usize; JOINT_COUNT] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "l_hip",
    "r_hip",
    "spine1",
    "l_knee",
    "r_knee",
    "spine2",
    "l_ankle",
    "r_ankle",
    "spine3",
    "l_foot",
    "r_foot",
    "neck",
    "l_collar",
    "r_collar",
    "head",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hand",
    "r_hand",
];

/// Rest-pose bone vectors in meters (x right, y up, z forward).
pub const BASE_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],     // pelvis
    [0.09, -0.05, 0.0],  // l_hip
    [-0.09, -0.05, 0.0], // r_hip
    [0.0, 0.11, 0.0],    // spine1
    [0.0, -0.38, 0.0],   // l_knee
    [0.0, -0.38, 0.0],   // r_knee
    [0.0, 0.12, 0.0],    // spine2
    [0.0, -0.40, 0.0],   // l_ankle
    [0.0, -0.40, 0.0],   // r_ankle
    [0.0, 0.12, 0.0],    // spine3
    [0.0, -0.05, 0.12],  // l_foot
    [0.0, -0.05, 0.12],  // r_foot
    [0.0, 0.09, 0.0],    // neck
    [0.07, 0.06, 0.0],   // l_collar
    [-0.07, 0.06, 0.0],  // r_collar
    [0.0, 0.11, 0.0],    // head
    [0.09, 0.02, 0.0],   // l_shoulder
    [-0.09, 0.02, 0.0],  // r_shoulder
    [0.26, 0.0, 0.0],    // l_elbow
    [-0.26, 0.0, 0.0],   // r_elbow
    [0.25, 0.0, 0.0],    // l_wrist
    [-0.25, 0.0, 0.0],   // r_wrist
    [0.08, 0.0, 0.0],    // l_hand
    [-0.08, 0.0, 0.0],   // r_hand
];

/// A 24-joint rigid kinematic tree with a fixed 10-component shape blend.
#[derive(Clone, Debug)]
pub struct DeskSkeleton {
    pub parent: [usize; JOINT_COUNT],
    pub base_offsets: [[f64; 3]; JOINT_COUNT],
    /// 24x10 bone-scale blend matrix, row-major.
    pub shape_blend: Tensor,
}

impl Default for DeskSkeleton {
    fn default() -> Self {
        Self::desk()
    }
}

impl DeskSkeleton {
    /// The fixed desk-scale skeleton.
    ///
    /// Shape components act on bone groups: 0 overall size, 1 legs, 2 arms,
    /// 3 torso, 4 head and collars, 5 hips, 6 shoulders, 7 hands and feet,
    /// 8 upper limbs, 9 lower limbs.
    pub fn desk() -> Self {
        let mut blend = Tensor::zeros(&[JOINT_COUNT, SHAPE_DIM]);
        let legs = [4usize, 5, 7, 8, 10, 11];
        let arms = [18usize, 19, 20, 21, 22, 23];
        let torso = [3usize, 6, 9, 12];

        for k in 0..JOINT_COUNT {
            blend.set2(k, 0, 1.0);
        }
        for &k in &legs {
            blend.set2(k, 1, 1.0);
        }
        for &k in &arms {
            blend.set2(k, 2, 1.0);
        }
        for &k in &torso {
            blend.set2(k, 3, 1.0);
        }
        blend.set2(15, 4, 1.0);
        blend.set2(13, 4, 0.5);
        blend.set2(14, 4, 0.5);
        blend.set2(1, 5, 1.0);
        blend.set2(2, 5, 1.0);
        blend.set2(16, 6, 1.0);
        blend.set2(17, 6, 1.0);
        for &k in &[10usize, 11, 22, 23] {
            blend.set2(k, 7, 0.5);
        }
        for &k in &[4usize, 5, 18, 19] {
            blend.set2(k, 8, 0.5);
        }
        for &k in &[7usize, 8, 20, 21] {
            blend.set2(k, 9, 0.5);
        }

        DeskSkeleton {
            parent: PARENTS,
            base_offsets: BASE_OFFSETS,
            shape_blend: blend,
        }
    }

    /// Per-bone scale factors `1 + 0.1 * (B beta)_k`.
    pub fn bone_scales(&self, beta: &[f64]) -> [f64; JOINT_COUNT] {
        debug_assert_eq!(beta.len(), SHAPE_DIM);
        let mut scales = [1.0; JOINT_COUNT];
        for (k, s) in scales.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, b) in beta.iter().enumerate() {
                acc += self.shape_blend.at2(k, j) * b;
            }
            *s = 1.0 + 0.1 * acc;
        }
        scales
    }
}
