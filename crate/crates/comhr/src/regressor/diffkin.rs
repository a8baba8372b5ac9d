//! Graph-recorded rotation recovery, forward kinematics, and projection,
//! mirroring the plain-value versions in `kinematics` so regression losses
//! can differentiate through the whole chain.

use super::kinematics::MAT3_IDENTITY;
use super::skeleton::{DeskSkeleton, JOINT_COUNT, SHAPE_DIM};
use crate::diffcore::{DiffResult, Graph, NodeId, Tensor};

/// Gram-Schmidt 6D-to-rotation on the tape. The degenerate fallback
/// (near-zero or collinear halves) emits a constant identity and records
/// the branch so gradchecks can detect flips.
pub fn rot6d_node(g: &mut Graph, r6: NodeId) -> DiffResult<(NodeId, bool)> {
    const EPS: f64 = 1e-8;
    let v = g.value(r6).data();
    let u = [v[0], v[1], v[2]];
    let w = [v[3], v[4], v[5]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let degenerate = if nu < EPS {
        true
    } else {
        let a1 = [u[0] / nu, u[1] / nu, u[2] / nu];
        let d = a1[0] * w[0] + a1[1] * w[1] + a1[2] * w[2];
        let b = [w[0] - d * a1[0], w[1] - d * a1[1], w[2] - d * a1[2]];
        (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt() < EPS
    };
    g.record_branch(degenerate);
    if degenerate {
        return Ok((
            g.constant(Tensor::new(vec![3, 3], MAT3_IDENTITY.to_vec()).unwrap()),
            true,
        ));
    }

    let u = g.slice(r6, 0, vec![3])?;
    let w = g.slice(r6, 3, vec![3])?;
    let a1 = g.l2_normalize(u)?;
    let dw = g.mul(a1, w)?;
    let d = g.sum(dw)?;
    let proj = g.scalar_mul(d, a1)?;
    let b = g.sub(w, proj)?;
    let a2 = g.l2_normalize(b)?;
    let a3 = g.cross(a1, a2)?;

    let r1 = g.reshape(a1, vec![1, 3])?;
    let r2 = g.reshape(a2, vec![1, 3])?;
    let r3 = g.reshape(a3, vec![1, 3])?;
    let transposed = g.concat(0, &[r1, r2, r3])?;
    let rot = g.transpose(transposed)?;
    Ok((rot, false))
}

/// Per-joint rotations from a `[24, 6]` pose node; returns the rotation
/// nodes and how many joints hit the degenerate fallback.
pub fn pose6d_to_rotations(
    g: &mut Graph,
    pose6d: NodeId,
) -> DiffResult<(Vec<NodeId>, usize)> {
    let mut rots = Vec::with_capacity(JOINT_COUNT);
    let mut degenerate = 0;
    for k in 0..JOINT_COUNT {
        let r6 = g.slice(pose6d, k * 6, vec![6])?;
        let (rot, flag) = rot6d_node(g, r6)?;
        if flag {
            degenerate += 1;
        }
        rots.push(rot);
    }
    Ok((rots, degenerate))
}

/// Differentiable forward kinematics: local rotations and the shape vector
/// to root-relative joints, `[24, 3]`.
pub fn forward_kinematics_node(
    g: &mut Graph,
    skeleton: &DeskSkeleton,
    rotations: &[NodeId],
    shape: NodeId,
) -> DiffResult<NodeId> {
    debug_assert_eq!(rotations.len(), JOINT_COUNT);

    let blend = g.constant(skeleton.shape_blend.clone());
    let beta_col = g.reshape(shape, vec![SHAPE_DIM, 1])?;
    let mixed = g.matmul(blend, beta_col)?;
    let scaled = g.scale(mixed, 0.1)?;
    let scales = g.offset(scaled, 1.0)?;

    let mut global = Vec::with_capacity(JOINT_COUNT);
    let mut positions = Vec::with_capacity(JOINT_COUNT);
    global.push(rotations[0]);
    positions.push(g.constant(Tensor::zeros(&[1, 3])));

    for k in 1..JOINT_COUNT {
        let p = skeleton.parent[k];
        let s_k = g.slice(scales, k, vec![1])?;
        let offset = g.constant(
            Tensor::new(vec![3, 1], skeleton.base_offsets[k].to_vec()).unwrap(),
        );
        let bone = g.scalar_mul(s_k, offset)?;
        let step = g.matmul(global[p], bone)?;
        let step_row = g.reshape(step, vec![1, 3])?;
        let pos = g.add(positions[p], step_row)?;
        positions.push(pos);
        let glob = g.matmul(global[p], rotations[k])?;
        global.push(glob);
    }

    g.concat(0, &positions)
}

/// Differentiable weak-perspective projection of `[K, 3]` joints with a
/// `[1, 3]` camera `(s, t_x, t_y)`, producing `[K, 2]`.
pub fn project_node(g: &mut Graph, joints: NodeId, camera: NodeId) -> DiffResult<NodeId> {
    let k = g.value(joints).dims()[0];
    let drop_z = g.constant(
        Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
    );
    let xy = g.matmul(joints, drop_z)?;
    let s = g.slice(camera, 0, vec![1])?;
    let t = g.slice(camera, 1, vec![1, 2])?;
    let sxy = g.scalar_mul(s, xy)?;
    let t_rows = g.concat(0, &vec![t; k])?;
    g.add(sxy, t_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressor::kinematics::{
        forward_kinematics, project, rot6d_to_matrix, Mat3,
    };
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_rot6d_matches_value_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let r: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let (expect, flag) = rot6d_to_matrix(&r);
            let mut g = Graph::new();
            let r6 = g.constant(Tensor::vector(r.to_vec()));
            let (rot, gflag) = rot6d_node(&mut g, r6).unwrap();
            assert_eq!(flag, gflag);
            for (a, b) in g.value(rot).data().iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rot6d_orthonormality_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..500 {
            let r: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
            let (m, degenerate) = rot6d_to_matrix(&r);
            if degenerate {
                continue;
            }
            // R^T R = I within 1e-9.
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[k * 3 + i] * m[k * 3 + j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-9);
                }
            }
            // det R = +1 within 1e-9.
            let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6]);
            assert!((det - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn graph_fk_matches_value_fk() {
        let skeleton = DeskSkeleton::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut pose = Tensor::zeros(&[JOINT_COUNT, 6]);
            let mut rots_v: [Mat3; JOINT_COUNT] = [MAT3_IDENTITY; JOINT_COUNT];
            for k in 0..JOINT_COUNT {
                let mut r6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
                for (c, s) in r6.iter_mut().enumerate() {
                    *s += rng.gen_range(-0.5..0.5);
                    pose.set2(k, c, *s);
                }
                rots_v[k] = rot6d_to_matrix(&r6).0;
            }
            let beta: Vec<f64> = (0..SHAPE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expect = forward_kinematics(&skeleton, &rots_v, &beta);

            let mut g = Graph::new();
            let pose_node = g.constant(pose);
            let shape_node = g.constant(Tensor::new(vec![1, SHAPE_DIM], beta.clone()).unwrap());
            let (rots, degenerate) = pose6d_to_rotations(&mut g, pose_node).unwrap();
            assert_eq!(degenerate, 0);
            let joints = forward_kinematics_node(&mut g, &skeleton, &rots, shape_node).unwrap();
            let got = g.value(joints);
            for k in 0..JOINT_COUNT {
                for c in 0..3 {
                    assert!((got.at2(k, c) - expect[k][c]).abs() < 1e-12, "joint {k}");
                }
            }
        }
    }

    #[test]
    fn graph_projection_matches_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let pts: Vec<[f64; 3]> =
            (0..5).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let cam = [rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0), 0.3];
        let expect = project(&pts, &cam);

        let mut g = Graph::new();
        let joints = g.constant(
            Tensor::new(vec![5, 3], pts.iter().flatten().copied().collect()).unwrap(),
        );
        let camera = g.constant(Tensor::new(vec![1, 3], cam.to_vec()).unwrap());
        let out = project_node(&mut g, joints, camera).unwrap();
        for (row, e) in (0..5).map(|i| g.value(out).row(i).to_vec()).zip(expect) {
            assert!((row[0] - e[0]).abs() < 1e-14);
            assert!((row[1] - e[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn fk_gradients_pass_gradcheck() {
        use crate::diffcore::{gradcheck, Evaluation, GradCheckOpts, ParamSet};
        let skeleton = DeskSkeleton::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(77);

        let mut pose = Tensor::zeros(&[JOINT_COUNT, 6]);
        for k in 0..JOINT_COUNT {
            let mut r6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
            for (c, s) in r6.iter_mut().enumerate() {
                *s += rng.gen_range(-0.4..0.4);
                pose.set2(k, c, *s);
            }
        }
        let beta = Tensor::new(
            vec![1, SHAPE_DIM],
            (0..SHAPE_DIM).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        )
        .unwrap();
        let weight = Tensor::new(
            vec![JOINT_COUNT, 3],
            (0..JOINT_COUNT * 3).map(|_| rng.gen_range(0.5..1.5)).collect(),
        )
        .unwrap();

        let skeleton_ref = &skeleton;
        let weight_ref = &weight;
        let report = gradcheck(
            move |values: &[Tensor]| {
                let mut ps = ParamSet::new();
                ps.insert("pose", values[0].clone())?;
                ps.insert("shape", values[1].clone())?;
                let mut g = Graph::new();
                let pose_node = g.param(&ps, 0);
                let shape_node = g.param(&ps, 1);
                let (rots, _) = pose6d_to_rotations(&mut g, pose_node)?;
                let joints = forward_kinematics_node(&mut g, skeleton_ref, &rots, shape_node)?;
                let w = g.constant(weight_ref.clone());
                let weighted = g.mul(joints, w)?;
                let loss = g.sum(weighted)?;
                let value = g.value(loss).item();
                let grads = g.backward(loss, &ps)?.into_vec();
                Ok(Evaluation {
                    value,
                    grads,
                    signature: g.signature().clone(),
                })
            },
            &[
                ("pose".to_string(), pose),
                ("shape".to_string(), beta),
            ],
            GradCheckOpts::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {:e}", report.max_rel_err);
    }
}
