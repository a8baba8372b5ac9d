//! Plain-value rotation recovery, forward kinematics, and projection.
//!
//! These run outside the differentiation graph: scene synthesis and metric
//! evaluation use them directly, and the graph builders in this module are
//! cross-checked against them in tests.

use super::skeleton::{DeskSkeleton, JOINT_COUNT, SHAPE_DIM};

/// Row-major 3x3 matrix.
pub type Mat3 = [f64; 9];

pub const MAT3_IDENTITY: Mat3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] =
                a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
        }
    }
    out
}

pub fn mat3_apply(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Recovers a rotation matrix from a 6-number representation by
/// Gram-Schmidt: `a1 = normalize(r[0..3])`, `a2 = normalize(r[3..6] -
/// <a1, r[3..6]> a1)`, `a3 = a1 x a2`, columns `(a1, a2, a3)`.
///
/// Degenerate input (first half near zero, or collinear halves) returns the
/// identity with the flag set.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> (Mat3, bool) {
    const EPS: f64 = 1e-8;
    let u = [r[0], r[1], r[2]];
    let nu = norm3(&u);
    if nu < EPS {
        return (MAT3_IDENTITY, true);
    }
    let a1 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let w = [r[3], r[4], r[5]];
    let d = a1[0] * w[0] + a1[1] * w[1] + a1[2] * w[2];
    let b = [w[0] - d * a1[0], w[1] - d * a1[1], w[2] - d * a1[2]];
    let nb = norm3(&b);
    if nb < EPS {
        return (MAT3_IDENTITY, true);
    }
    let a2 = [b[0] / nb, b[1] / nb, b[2] / nb];
    let a3 = cross3(&a1, &a2);
    (
        [
            a1[0], a2[0], a3[0], //
            a1[1], a2[1], a3[1], //
            a1[2], a2[2], a3[2],
        ],
        false,
    )
}

/// Forward kinematics over the desk skeleton: per-joint local rotations and
/// a shape vector to root-relative 3D joints (root at the origin).
pub fn forward_kinematics(
    skeleton: &DeskSkeleton,
    local_rots: &[Mat3; JOINT_COUNT],
    beta: &[f64],
) -> [[f64; 3]; JOINT_COUNT] {
    debug_assert_eq!(beta.len(), SHAPE_DIM);
    let scales = skeleton.bone_scales(beta);
    let mut global: [Mat3; JOINT_COUNT] = [MAT3_IDENTITY; JOINT_COUNT];
    let mut joints = [[0.0; 3]; JOINT_COUNT];

    global[0] = local_rots[0];
    for k in 1..JOINT_COUNT {
        let p = skeleton.parent[k];
        let bone = [
            skeleton.base_offsets[k][0] * scales[k],
            skeleton.base_offsets[k][1] * scales[k],
            skeleton.base_offsets[k][2] * scales[k],
        ];
        let step = mat3_apply(&global[p], &bone);
        joints[k] = [
            joints[p][0] + step[0],
            joints[p][1] + step[1],
            joints[p][2] + step[2],
        ];
        global[k] = mat3_mul(&global[p], &local_rots[k]);
    }
    joints
}

/// Weak-perspective projection `(x, y) = s * (X, Y) + (tx, ty)`.
pub fn project(joints: &[[f64; 3]], camera: &[f64; 3]) -> Vec<[f64; 2]> {
    let (s, tx, ty) = (camera[0], camera[1], camera[2]);
    joints
        .iter()
        .map(|j| [s * j[0] + tx, s * j[1] + ty])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn canonical_6d_gives_identity() {
        let (m, degenerate) = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(!degenerate);
        assert!(max_abs_diff(&m, &MAT3_IDENTITY) < 1e-15);
    }

    #[test]
    fn scaled_and_sheared_6d_still_identity() {
        // Normalization removes the 2x; orthogonalization removes the
        // component of (3,1,0) along x.
        let (m, degenerate) = rot6d_to_matrix(&[2.0, 0.0, 0.0, 3.0, 1.0, 0.0]);
        assert!(!degenerate);
        assert!(max_abs_diff(&m, &MAT3_IDENTITY) < 1e-15);
    }

    #[test]
    fn zero_6d_degenerates_to_flagged_identity() {
        let (m, degenerate) = rot6d_to_matrix(&[0.0; 6]);
        assert!(degenerate);
        assert_eq!(m, MAT3_IDENTITY);
    }

    #[test]
    fn collinear_halves_degenerate() {
        let (m, degenerate) = rot6d_to_matrix(&[1.0, 2.0, 0.0, 2.0, 4.0, 0.0]);
        assert!(degenerate);
        assert_eq!(m, MAT3_IDENTITY);
    }

    #[test]
    fn rest_pose_joints_are_cumulative_offsets() {
        let sk = DeskSkeleton::desk();
        let rots = [MAT3_IDENTITY; JOINT_COUNT];
        let joints = forward_kinematics(&sk, &rots, &[0.0; SHAPE_DIM]);
        // l_ankle = l_hip + l_knee + l_ankle offsets.
        let expect_y = -0.05 - 0.38 - 0.40;
        assert!((joints[7][0] - 0.09).abs() < 1e-12);
        assert!((joints[7][1] - expect_y).abs() < 1e-12);
        assert_eq!(joints[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn leg_shape_component_moves_only_leg_joints() {
        let sk = DeskSkeleton::desk();
        let rots = [MAT3_IDENTITY; JOINT_COUNT];
        let base = forward_kinematics(&sk, &rots, &[0.0; SHAPE_DIM]);
        let mut beta = [0.0; SHAPE_DIM];
        beta[1] = 1.0;
        let shaped = forward_kinematics(&sk, &rots, &beta);
        let legs = [4usize, 5, 7, 8, 10, 11];
        for k in 0..JOINT_COUNT {
            let moved = (0..3).any(|c| (base[k][c] - shaped[k][c]).abs() > 1e-12);
            assert_eq!(moved, legs.contains(&k), "joint {k}");
        }
    }

    #[test]
    fn global_root_rotation_rotates_all_joints_rigidly() {
        let sk = DeskSkeleton::desk();
        // Rotation of 90 degrees about z in the root; a bent elbow below.
        let rz: Mat3 = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let (elbow, _) = rot6d_to_matrix(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);

        let mut rots = [MAT3_IDENTITY; JOINT_COUNT];
        rots[18] = elbow;
        let plain = forward_kinematics(&sk, &rots, &[0.0; SHAPE_DIM]);

        let mut rooted = rots;
        rooted[0] = rz;
        let rotated = forward_kinematics(&sk, &rooted, &[0.0; SHAPE_DIM]);

        for k in 0..JOINT_COUNT {
            let expect = mat3_apply(&rz, &plain[k]);
            for c in 0..3 {
                assert!((rotated[k][c] - expect[c]).abs() < 1e-12, "joint {k}");
            }
        }
    }

    #[test]
    fn weak_perspective_drops_depth() {
        let pts = [[0.5, -0.5, 3.0]];
        let out = project(&pts, &[2.0, 1.0, 1.0]);
        assert_eq!(out[0], [2.0, 0.0]);
        let far = project(&[[0.5, -0.5, 99.0]], &[2.0, 1.0, 1.0]);
        assert_eq!(out, far.as_slice());
    }
}
