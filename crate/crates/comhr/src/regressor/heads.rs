//! Final fusion and the parameter heads: three linear heads over a shared
//! two-layer trunk, fed by the refined embeddings concatenated with a
//! CLIFF-style bounding-box embedding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::{JOINT_COUNT, SHAPE_DIM};
use crate::diffcore::{DiffResult, Graph, NodeId, ParamSet, Tensor};
use crate::hyperreason::RefinedEmbeddings;
use crate::scenegen::BBox;

pub const CAMERA_DIM: usize = 3;
pub const POSE6D_DIM: usize = JOINT_COUNT * 6;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub box_embed_dim: usize,
    pub trunk_hidden: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            box_embed_dim: 32,
            trunk_hidden: 128,
        }
    }
}

impl RegressorConfig {
    pub fn tiny() -> Self {
        RegressorConfig {
            box_embed_dim: 8,
            trunk_hidden: 16,
        }
    }

    /// Width of the fused final vector.
    pub fn fused_width(&self, latent_dim: usize) -> usize {
        3 * latent_dim + self.box_embed_dim
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("init dims")
}

fn he_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    normal(rng, rows, cols, (2.0 / rows as f64).sqrt())
}

/// Registers fusion and head parameters.
///
/// Head weights start small so initial predictions sit near the neutral
/// biases (identity 6D pose, mean shape, mild positive camera scale) while
/// still letting gradients reach the trunk and everything upstream.
pub fn register_params(
    ps: &mut ParamSet,
    latent_dim: usize,
    cfg: &RegressorConfig,
    rng: &mut ChaCha8Rng,
) -> DiffResult<()> {
    const HEAD_STD: f64 = 0.01;

    ps.insert("box.embed.w", he_normal(rng, 3, cfg.box_embed_dim))?;

    let fused = cfg.fused_width(latent_dim);
    ps.insert("head.trunk.l1.w", he_normal(rng, fused, cfg.trunk_hidden))?;
    ps.insert("head.trunk.l1.b", Tensor::zeros(&[1, cfg.trunk_hidden]))?;
    ps.insert(
        "head.trunk.l2.w",
        he_normal(rng, cfg.trunk_hidden, cfg.trunk_hidden),
    )?;
    ps.insert("head.trunk.l2.b", Tensor::zeros(&[1, cfg.trunk_hidden]))?;

    ps.insert(
        "head.pose.w",
        normal(rng, cfg.trunk_hidden, POSE6D_DIM, HEAD_STD),
    )?;
    let identity6d: Vec<f64> = (0..JOINT_COUNT)
        .flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        .collect();
    ps.insert(
        "head.pose.b",
        Tensor::new(vec![1, POSE6D_DIM], identity6d).expect("bias dims"),
    )?;

    ps.insert(
        "head.shape.w",
        normal(rng, cfg.trunk_hidden, SHAPE_DIM, HEAD_STD),
    )?;
    ps.insert("head.shape.b", Tensor::zeros(&[1, SHAPE_DIM]))?;

    ps.insert(
        "head.camera.w",
        normal(rng, cfg.trunk_hidden, CAMERA_DIM, HEAD_STD),
    )?;
    ps.insert(
        "head.camera.b",
        Tensor::new(vec![1, CAMERA_DIM], vec![0.2, 0.0, 0.0]).expect("bias dims"),
    )?;
    Ok(())
}

/// CLIFF-style box embedding: `(c_x / f, c_y / f, s / f)` through a linear
/// map, `[1, box_embed_dim]`.
pub fn box_embedding(
    g: &mut Graph,
    ps: &ParamSet,
    bbox: &BBox,
    camera_f: f64,
) -> DiffResult<NodeId> {
    let raw = g.constant(
        Tensor::new(
            vec![1, 3],
            vec![
                bbox.cx / camera_f,
                bbox.cy / camera_f,
                bbox.s / camera_f,
            ],
        )
        .expect("box dims"),
    );
    let w = g.param_named(ps, "box.embed.w")?;
    g.matmul(raw, w)
}

/// `v_final = [h~_rgb | h~_depth | h~_pose | phi_box(b)]`, `N x (3D + 32)`.
pub fn fuse_final(
    g: &mut Graph,
    refined: &RefinedEmbeddings,
    box_embeds: &[NodeId],
) -> DiffResult<NodeId> {
    let boxes = g.concat(0, box_embeds)?;
    g.concat(1, &[refined.rgb, refined.depth, refined.pose, boxes])
}

/// Raw head outputs for a batch of fused vectors.
pub struct HeadOutputs {
    /// `N x 144` person-major 6D pose rows.
    pub pose6d: NodeId,
    /// `N x 10`.
    pub shape: NodeId,
    /// `N x 3` weak-perspective `(s, t_x, t_y)`.
    pub camera: NodeId,
}

fn bias_rows(g: &mut Graph, bias: NodeId, rows: usize) -> DiffResult<NodeId> {
    g.concat(0, &vec![bias; rows])
}

/// Two-layer trunk plus the three linear heads.
pub fn regress(g: &mut Graph, ps: &ParamSet, v_final: NodeId) -> DiffResult<HeadOutputs> {
    let n = g.value(v_final).dims()[0];

    let mut x = v_final;
    for layer in ["head.trunk.l1", "head.trunk.l2"] {
        let w = g.param_named(ps, &format!("{layer}.w"))?;
        let b = g.param_named(ps, &format!("{layer}.b"))?;
        let xw = g.matmul(x, w)?;
        let b_rows = bias_rows(g, b, n)?;
        let pre = g.add(xw, b_rows)?;
        x = g.relu(pre)?;
    }

    let mut head = |g: &mut Graph, name: &str| -> DiffResult<NodeId> {
        let w = g.param_named(ps, &format!("head.{name}.w"))?;
        let b = g.param_named(ps, &format!("head.{name}.b"))?;
        let xw = g.matmul(x, w)?;
        let b_rows = bias_rows(g, b, n)?;
        g.add(xw, b_rows)
    };

    Ok(HeadOutputs {
        pose6d: head(g, "pose")?,
        shape: head(g, "shape")?,
        camera: head(g, "camera")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperreason::RefinedEmbeddings;
    use rand::SeedableRng;

    fn setup(latent: usize) -> (ParamSet, RegressorConfig) {
        let mut ps = ParamSet::new();
        let cfg = RegressorConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        register_params(&mut ps, latent, &cfg, &mut rng).unwrap();
        (ps, cfg)
    }

    #[test]
    fn fused_width_matches_desk_arithmetic() {
        let cfg = RegressorConfig::default();
        assert_eq!(cfg.fused_width(64), 224);
    }

    #[test]
    fn fusion_slices_recover_components() {
        let latent = 4;
        let (ps, cfg) = setup(latent);
        let mut g = Graph::new();
        let rgb = g.constant(Tensor::from_rows(&[vec![1.0; 4], vec![2.0; 4]]).unwrap());
        let depth = g.constant(Tensor::from_rows(&[vec![3.0; 4], vec![4.0; 4]]).unwrap());
        let pose = g.constant(Tensor::from_rows(&[vec![5.0; 4], vec![6.0; 4]]).unwrap());
        let refined = RefinedEmbeddings {
            rgb,
            depth,
            pose,
        };
        let bbox = BBox {
            cx: 10.0,
            cy: -4.0,
            s: 80.0,
        };
        let b0 = box_embedding(&mut g, &ps, &bbox, 256.0).unwrap();
        let b1 = box_embedding(&mut g, &ps, &bbox, 256.0).unwrap();
        let v = fuse_final(&mut g, &refined, &[b0, b1]).unwrap();
        assert_eq!(g.value(v).dims(), &[2, 3 * latent + cfg.box_embed_dim]);
        let row = g.value(v).row(1);
        assert_eq!(&row[0..4], &[2.0; 4]);
        assert_eq!(&row[4..8], &[4.0; 4]);
        assert_eq!(&row[8..12], &[6.0; 4]);
        assert_eq!(&row[12..], g.value(b1).data());
    }

    #[test]
    fn zero_box_embedding_preserves_embedding_columns() {
        let latent = 4;
        let (ps, _) = setup(latent);
        let mut g = Graph::new();
        let rgb = g.constant(Tensor::from_rows(&[vec![1.0; 4]]).unwrap());
        let refined = RefinedEmbeddings {
            rgb,
            depth: rgb,
            pose: rgb,
        };
        let zero_box = g.constant(Tensor::zeros(&[1, 8]));
        let v = fuse_final(&mut g, &refined, &[zero_box]).unwrap();
        let _ = ps;
        assert_eq!(&g.value(v).row(0)[0..12], &[1.0; 12]);
        assert_eq!(&g.value(v).row(0)[12..], &[0.0; 8]);
    }

    #[test]
    fn initial_heads_predict_neutral_parameters() {
        let latent = 4;
        let (ps, cfg) = setup(latent);
        let mut g = Graph::new();
        let v = g.constant(Tensor::full(&[2, cfg.fused_width(latent)], 0.3));
        let out = regress(&mut g, &ps, v).unwrap();
        assert_eq!(g.value(out.pose6d).dims(), &[2, POSE6D_DIM]);
        assert_eq!(g.value(out.shape).dims(), &[2, SHAPE_DIM]);
        assert_eq!(g.value(out.camera).dims(), &[2, CAMERA_DIM]);
        // Small head weights keep outputs near the neutral biases.
        let neutral = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (v, n) in g.value(out.pose6d).row(0)[0..6].iter().zip(neutral) {
            assert!((v - n).abs() < 0.2, "{v} vs {n}");
        }
        assert!(g.value(out.shape).row(1).iter().all(|v| v.abs() < 0.2));
        assert!((g.value(out.camera).row(0)[0] - 0.2).abs() < 0.2);
    }

    #[test]
    fn regression_is_deterministic() {
        let latent = 4;
        let (ps, cfg) = setup(latent);
        let run = || {
            let mut g = Graph::new();
            let v = g.constant(Tensor::full(&[3, cfg.fused_width(latent)], -0.7));
            let out = regress(&mut g, &ps, v).unwrap();
            g.value(out.camera).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
