//! Multi-modal node initialization: per-person visual, geometric, and pose
//! embeddings, the pelvis depth anchor, and the aggregate node feature.
//!
//! The three branches consume disjoint inputs and disjoint weights; the
//! anchor (pelvis depth plus normalized crop position) is concatenated into
//! the visual branch only, so anchor corruption cannot reach the depth or
//! pose embeddings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Graph, NodeId, ParamSet, Tensor};
use crate::regressor::{JOINT_COUNT, LEFT_HIP, RIGHT_HIP};
use crate::scenegen::{BBox, Joint2D, PersonRecord, Scene};

#[derive(Debug, Error)]
pub enum NodeInitError {
    #[error("visual feature length {got}, expected {expected}")]
    WrongFeatureLength { got: usize, expected: usize },

    #[error("person {id} has no precomputed visual feature but ingest mode is on")]
    MissingVisualFeature { id: u32 },

    #[error("depth patch has {got} values, expected {expected}")]
    WrongPatchSize { got: usize, expected: usize },

    #[error("invalid encoder config: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type NodeInitResult<T> = Result<T, NodeInitError>;

/// How the pelvis anchor is packed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Single relative-depth value.
    Scalar,
    /// `[T_z, c_x / f, c_y / f]`: depth plus normalized crop position.
    Wide3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSampling {
    Nearest,
    Bilinear,
}

/// Which branches are live; disabled branches contribute zero embeddings
/// and receive no gradient.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchToggles {
    pub rgb: bool,
    pub depth: bool,
    pub pose: bool,
    pub tz_anchor: bool,
}

impl Default for BranchToggles {
    fn default() -> Self {
        BranchToggles {
            rgb: true,
            depth: true,
            pose: true,
            tz_anchor: true,
        }
    }
}

/// Encoder and projection dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Raw per-modality feature width (2048 at paper scale).
    pub feature_dim_raw: usize,
    /// Unified latent width D.
    pub latent_dim: usize,
    pub visibility_threshold: f64,
    /// Conv channel stack over the joint sequence; the last entry must equal
    /// `feature_dim_raw`.
    pub pose_conv_channels: Vec<usize>,
    pub pose_kernel: usize,
    /// Flattened patch length consumed by the patch encoders.
    pub patch_numel: usize,
    /// Hidden width of the two-layer patch encoders.
    pub encoder_hidden: usize,
    /// Hidden width of the per-modality projection MLPs.
    pub mlp_hidden: usize,
    pub anchor: AnchorMode,
    pub depth_sampling: DepthSampling,
    /// Pass precomputed visual features through instead of encoding patches.
    pub ingest_visual: bool,
    /// Optional LayerNorm + linear projection of the fused vector, for the
    /// regressor path.
    pub fused_projection: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim_raw: 128,
            latent_dim: 64,
            visibility_threshold: 0.5,
            pose_conv_channels: vec![32, 128],
            pose_kernel: 3,
            patch_numel: 32 * 32,
            encoder_hidden: 64,
            mlp_hidden: 96,
            anchor: AnchorMode::Wide3,
            depth_sampling: DepthSampling::Nearest,
            ingest_visual: true,
            fused_projection: None,
        }
    }
}

impl EncoderConfig {
    /// Small dims for exhaustive gradient checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            feature_dim_raw: 12,
            latent_dim: 6,
            pose_conv_channels: vec![8, 12],
            patch_numel: 8 * 8,
            encoder_hidden: 10,
            mlp_hidden: 10,
            ..EncoderConfig::default()
        }
    }

    pub fn anchor_width(&self) -> usize {
        match self.anchor {
            AnchorMode::Scalar => 1,
            AnchorMode::Wide3 => 3,
        }
    }

    /// Width of all raw modality features plus the anchor slot.
    pub fn fused_raw_width(&self) -> usize {
        3 * self.feature_dim_raw + self.anchor_width()
    }

    pub fn validate(&self) -> NodeInitResult<()> {
        if self.feature_dim_raw == 0 || self.latent_dim == 0 || self.encoder_hidden == 0 {
            return Err(NodeInitError::BadConfig("zero dimension".into()));
        }
        if !(0.0..1.0).contains(&self.visibility_threshold)
            || self.visibility_threshold <= 0.0
        {
            return Err(NodeInitError::BadConfig(format!(
                "visibility threshold {} outside (0, 1)",
                self.visibility_threshold
            )));
        }
        if self.pose_conv_channels.is_empty()
            || *self.pose_conv_channels.last().unwrap() != self.feature_dim_raw
        {
            return Err(NodeInitError::BadConfig(
                "pose conv stack must end at feature_dim_raw".into(),
            ));
        }
        if self.pose_kernel == 0 || self.pose_kernel % 2 == 0 {
            return Err(NodeInitError::BadConfig(
                "pose conv kernel must be odd".into(),
            ));
        }
        Ok(())
    }
}

/// Per-person degradation flags raised while encoding.
#[derive(Clone, Copy, Debug, Default)]
pub struct DegradedFlags {
    /// No joint passed the visibility mask; the pose embedding is zero.
    pub pose: bool,
    /// No visible joint could anchor the pelvis depth; the anchor is zero.
    pub pelvis: bool,
}

/// Initialized node features for one forward group.
pub struct ModalEmbeddings {
    pub h_rgb: NodeId,
    pub h_depth: NodeId,
    pub h_pose: NodeId,
    /// `[h_rgb | h_depth | h_pose]`, N x 3D.
    pub h_agg: NodeId,
    /// Optional LayerNorm + projection of the fused vector.
    pub fused: Option<NodeId>,
    /// Anchor depth per person, perturbation bias included.
    pub tz: Vec<f64>,
    pub degraded: Vec<DegradedFlags>,
}

fn he_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let std = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            // Box-Muller on uniforms keeps the draw order independent of
            // rejection-sampling internals.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("init dims")
}

fn register_linear(
    ps: &mut ParamSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    rows: usize,
    cols: usize,
) -> NodeInitResult<()> {
    ps.insert(&format!("{prefix}.w"), he_normal(rng, rows, cols))
        .map_err(NodeInitError::from)?;
    ps.insert(&format!("{prefix}.b"), Tensor::zeros(&[1, cols]))
        .map_err(NodeInitError::from)?;
    Ok(())
}

/// Registers every node-initialization parameter.
pub fn register_params(
    ps: &mut ParamSet,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> NodeInitResult<()> {
    cfg.validate()?;
    if !cfg.ingest_visual {
        register_linear(ps, rng, "enc.visual.l1", cfg.patch_numel, cfg.encoder_hidden)?;
        register_linear(ps, rng, "enc.visual.l2", cfg.encoder_hidden, cfg.feature_dim_raw)?;
    }
    register_linear(ps, rng, "enc.depth.l1", cfg.patch_numel, cfg.encoder_hidden)?;
    register_linear(ps, rng, "enc.depth.l2", cfg.encoder_hidden, cfg.feature_dim_raw)?;

    let mut c_in = 3;
    for (i, &c_out) in cfg.pose_conv_channels.iter().enumerate() {
        register_linear(
            ps,
            rng,
            &format!("enc.pose.conv{i}"),
            cfg.pose_kernel * c_in,
            c_out,
        )?;
        c_in = c_out;
    }

    let rgb_in = cfg.feature_dim_raw + cfg.anchor_width();
    register_linear(ps, rng, "proj.rgb.l1", rgb_in, cfg.mlp_hidden)?;
    register_linear(ps, rng, "proj.rgb.l2", cfg.mlp_hidden, cfg.latent_dim)?;
    register_linear(ps, rng, "proj.depth.l1", cfg.feature_dim_raw, cfg.mlp_hidden)?;
    register_linear(ps, rng, "proj.depth.l2", cfg.mlp_hidden, cfg.latent_dim)?;
    register_linear(ps, rng, "proj.pose.l1", cfg.feature_dim_raw, cfg.mlp_hidden)?;
    register_linear(ps, rng, "proj.pose.l2", cfg.mlp_hidden, cfg.latent_dim)?;

    if let Some(fused_dim) = cfg.fused_projection {
        register_linear(ps, rng, "proj.fused", 3 * cfg.latent_dim, fused_dim)?;
    }
    Ok(())
}

/// `x W + b` for a `[1, in]` row.
fn linear(g: &mut Graph, ps: &ParamSet, prefix: &str, x: NodeId) -> NodeInitResult<NodeId> {
    let w = g.param_named(ps, &format!("{prefix}.w"))?;
    let b = g.param_named(ps, &format!("{prefix}.b"))?;
    let wx = g.matmul(x, w)?;
    Ok(g.add(wx, b)?)
}

/// Two-layer MLP with a ReLU between the layers; the output stays linear.
fn mlp2(g: &mut Graph, ps: &ParamSet, prefix: &str, x: NodeId) -> NodeInitResult<NodeId> {
    let h = linear(g, ps, &format!("{prefix}.l1"), x)?;
    let h = g.relu(h)?;
    linear(g, ps, &format!("{prefix}.l2"), h)
}

/// Visual input: a precomputed feature or a raw patch.
pub enum VisualInput<'a> {
    Feature(&'a [f64]),
    Patch(&'a Tensor),
}

/// Raw visual feature `[1, feature_dim_raw]`.
///
/// Ingest mode passes precomputed features through unchanged; patch mode
/// runs the stand-in patch encoder.
pub fn encode_visual(
    g: &mut Graph,
    ps: &ParamSet,
    cfg: &EncoderConfig,
    input: VisualInput<'_>,
) -> NodeInitResult<NodeId> {
    match input {
        VisualInput::Feature(f) => {
            if f.len() != cfg.feature_dim_raw {
                return Err(NodeInitError::WrongFeatureLength {
                    got: f.len(),
                    expected: cfg.feature_dim_raw,
                });
            }
            Ok(g.constant(
                Tensor::new(vec![1, f.len()], f.to_vec()).expect("feature dims"),
            ))
        }
        VisualInput::Patch(patch) => {
            if patch.numel() != cfg.patch_numel {
                return Err(NodeInitError::WrongPatchSize {
                    got: patch.numel(),
                    expected: cfg.patch_numel,
                });
            }
            let flat = g.constant(
                Tensor::new(vec![1, patch.numel()], patch.data().to_vec()).expect("patch dims"),
            );
            mlp2(g, ps, "enc.visual", flat)
        }
    }
}

/// Raw geometric feature `[1, feature_dim_raw]` from a single-channel patch.
pub fn encode_geometric(
    g: &mut Graph,
    ps: &ParamSet,
    cfg: &EncoderConfig,
    patch: &Tensor,
) -> NodeInitResult<NodeId> {
    if patch.numel() != cfg.patch_numel {
        return Err(NodeInitError::WrongPatchSize {
            got: patch.numel(),
            expected: cfg.patch_numel,
        });
    }
    let flat = g.constant(
        Tensor::new(vec![1, patch.numel()], patch.data().to_vec()).expect("patch dims"),
    );
    mlp2(g, ps, "enc.depth", flat)
}

/// Samples the patch at crop-relative joint coordinates, clamped to the
/// border.
pub fn sample_patch(
    patch: &Tensor,
    bbox: &BBox,
    x: f64,
    y: f64,
    mode: DepthSampling,
) -> f64 {
    let (h, w) = (patch.dims()[0], patch.dims()[1]);
    let px = (x - (bbox.cx - bbox.s / 2.0)) / bbox.s * w as f64;
    let py = (y - (bbox.cy - bbox.s / 2.0)) / bbox.s * h as f64;
    match mode {
        DepthSampling::Nearest => {
            let c = px.floor().clamp(0.0, w as f64 - 1.0) as usize;
            let r = py.floor().clamp(0.0, h as f64 - 1.0) as usize;
            patch.at2(r, c)
        }
        DepthSampling::Bilinear => {
            let fx = (px - 0.5).clamp(0.0, w as f64 - 1.0);
            let fy = (py - 0.5).clamp(0.0, h as f64 - 1.0);
            let c0 = fx.floor() as usize;
            let r0 = fy.floor() as usize;
            let c1 = (c0 + 1).min(w - 1);
            let r1 = (r0 + 1).min(h - 1);
            let tx = fx - c0 as f64;
            let ty = fy - r0 as f64;
            let top = patch.at2(r0, c0) * (1.0 - tx) + patch.at2(r0, c1) * tx;
            let bot = patch.at2(r1, c0) * (1.0 - tx) + patch.at2(r1, c1) * tx;
            top * (1.0 - ty) + bot * ty
        }
    }
}

/// Visibility mask `m_k = 1(c_k > tau)`; the threshold itself is masked out
/// (strict inequality).
pub fn visibility_mask(joints: &[Joint2D], tau: f64) -> Vec<f64> {
    joints
        .iter()
        .map(|j| if j.c > tau { 1.0 } else { 0.0 })
        .collect()
}

/// Raw pose feature via 1-D convolution over the joint sequence and
/// visibility-weighted mean pooling. Returns the `[1, feature_dim_raw]`
/// node and whether the person was fully masked out.
pub fn encode_pose(
    g: &mut Graph,
    ps: &ParamSet,
    cfg: &EncoderConfig,
    joints2d: &[Joint2D],
    depth_patch: &Tensor,
    bbox: &BBox,
) -> NodeInitResult<(NodeId, bool)> {
    let mask = visibility_mask(joints2d, cfg.visibility_threshold);
    let degraded = mask.iter().all(|&m| m == 0.0);

    // Joint sequence rows: crop-normalized (x, y) and sampled depth.
    let mut seq = Vec::with_capacity(JOINT_COUNT * 3);
    for j in joints2d {
        let px = ((j.x - (bbox.cx - bbox.s / 2.0)) / bbox.s).clamp(0.0, 1.0);
        let py = ((j.y - (bbox.cy - bbox.s / 2.0)) / bbox.s).clamp(0.0, 1.0);
        let z = sample_patch(depth_patch, bbox, j.x, j.y, cfg.depth_sampling);
        seq.extend_from_slice(&[px, py, z]);
    }
    let mut x = g.constant(Tensor::new(vec![JOINT_COUNT, 3], seq).expect("seq dims"));

    let pad = cfg.pose_kernel / 2;
    let mut c_in = 3;
    let layers = cfg.pose_conv_channels.len();
    for (i, &c_out) in cfg.pose_conv_channels.iter().enumerate() {
        let zero_row = g.constant(Tensor::zeros(&[pad, c_in]));
        let padded = g.concat(0, &[zero_row, x, zero_row])?;
        let mut windows = Vec::with_capacity(JOINT_COUNT);
        for t in 0..JOINT_COUNT {
            windows.push(g.slice(padded, t * c_in, vec![1, cfg.pose_kernel * c_in])?);
        }
        let im2col = g.concat(0, &windows)?;
        let wmat = g.param_named(ps, &format!("enc.pose.conv{i}.w"))?;
        let bias = g.param_named(ps, &format!("enc.pose.conv{i}.b"))?;
        let bias_rows = g.concat(0, &vec![bias; JOINT_COUNT])?;
        let conv = g.matmul(im2col, wmat)?;
        x = g.add(conv, bias_rows)?;
        if i + 1 < layers {
            x = g.relu(x)?;
        }
        c_in = c_out;
    }

    let mask_node = g.constant(Tensor::vector(mask));
    let pooled = g.masked_mean(x, mask_node)?;
    let out = g.reshape(pooled, vec![1, cfg.feature_dim_raw])?;
    Ok((out, degraded))
}

/// Pelvis depth anchor: mean of visible hip depths, falling back to the
/// masked mean of all visible joints, then to zero with a degraded flag.
pub fn pelvis_depth(
    joints2d: &[Joint2D],
    depth_patch: &Tensor,
    bbox: &BBox,
    cfg: &EncoderConfig,
) -> (f64, bool) {
    let tau = cfg.visibility_threshold;
    let z = |k: usize| {
        sample_patch(
            depth_patch,
            bbox,
            joints2d[k].x,
            joints2d[k].y,
            cfg.depth_sampling,
        )
    };
    let l_vis = joints2d[LEFT_HIP].c > tau;
    let r_vis = joints2d[RIGHT_HIP].c > tau;
    match (l_vis, r_vis) {
        (true, true) => ((z(LEFT_HIP) + z(RIGHT_HIP)) / 2.0, false),
        (true, false) => (z(LEFT_HIP), false),
        (false, true) => (z(RIGHT_HIP), false),
        (false, false) => {
            let visible: Vec<usize> = (0..joints2d.len())
                .filter(|&k| joints2d[k].c > tau)
                .collect();
            if visible.is_empty() {
                (0.0, true)
            } else {
                (
                    visible.iter().map(|&k| z(k)).sum::<f64>() / visible.len() as f64,
                    false,
                )
            }
        }
    }
}

fn anchor_tensor(cfg: &EncoderConfig, tz: f64, bbox: &BBox, camera_f: f64) -> Tensor {
    match cfg.anchor {
        AnchorMode::Scalar => Tensor::new(vec![1, 1], vec![tz]).unwrap(),
        AnchorMode::Wide3 => Tensor::new(
            vec![1, 3],
            vec![tz, bbox.cx / camera_f, bbox.cy / camera_f],
        )
        .unwrap(),
    }
}

/// Builds all modality embeddings for the given persons (one forward group).
pub fn build_embeddings(
    g: &mut Graph,
    ps: &ParamSet,
    cfg: &EncoderConfig,
    scene: &Scene,
    persons: &[usize],
    toggles: &BranchToggles,
) -> NodeInitResult<ModalEmbeddings> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let mut rgb_rows = Vec::with_capacity(persons.len());
    let mut depth_rows = Vec::with_capacity(persons.len());
    let mut pose_rows = Vec::with_capacity(persons.len());
    let mut tz_values = Vec::with_capacity(persons.len());
    let mut degraded = Vec::with_capacity(persons.len());

    for &pi in persons {
        let person: &PersonRecord = &scene.persons[pi];
        let mut flags = DegradedFlags::default();

        let (tz_raw, pelvis_degraded) =
            pelvis_depth(&person.joints2d, &person.depth_patch, &person.bbox, cfg);
        flags.pelvis = pelvis_degraded;
        let tz = tz_raw + person.tz_bias;
        tz_values.push(tz);

        if toggles.rgb {
            let feature = match (&person.rgb_patch_feature, cfg.ingest_visual) {
                (Some(f), true) => {
                    encode_visual(g, ps, cfg, VisualInput::Feature(f))?
                }
                (_, false) => {
                    encode_visual(g, ps, cfg, VisualInput::Patch(&person.depth_patch))?
                }
                (None, true) => {
                    return Err(NodeInitError::MissingVisualFeature { id: person.id })
                }
            };
            let anchor = if toggles.tz_anchor {
                g.constant(anchor_tensor(cfg, tz, &person.bbox, scene.camera_f))
            } else {
                g.constant(Tensor::zeros(&[1, cfg.anchor_width()]))
            };
            let with_anchor = g.concat(1, &[feature, anchor])?;
            rgb_rows.push(mlp2(g, ps, "proj.rgb", with_anchor)?);
        } else {
            rgb_rows.push(g.constant(Tensor::zeros(&[1, d])));
        }

        if toggles.depth {
            let f_depth = encode_geometric(g, ps, cfg, &person.depth_patch)?;
            depth_rows.push(mlp2(g, ps, "proj.depth", f_depth)?);
        } else {
            depth_rows.push(g.constant(Tensor::zeros(&[1, d])));
        }

        if toggles.pose {
            let (f_pose, pose_degraded) = encode_pose(
                g,
                ps,
                cfg,
                &person.joints2d,
                &person.depth_patch,
                &person.bbox,
            )?;
            flags.pose = pose_degraded;
            pose_rows.push(mlp2(g, ps, "proj.pose", f_pose)?);
        } else {
            pose_rows.push(g.constant(Tensor::zeros(&[1, d])));
        }

        degraded.push(flags);
    }

    let h_rgb = g.concat(0, &rgb_rows)?;
    let h_depth = g.concat(0, &depth_rows)?;
    let h_pose = g.concat(0, &pose_rows)?;
    let h_agg = g.concat(1, &[h_rgb, h_depth, h_pose])?;

    let fused = match cfg.fused_projection {
        Some(_) => {
            let normed = g.layer_norm(h_agg, 1e-6)?;
            let w = g.param_named(ps, "proj.fused.w")?;
            let b = g.param_named(ps, "proj.fused.b")?;
            let proj = g.matmul(normed, w)?;
            let bias_rows = g.concat(0, &vec![b; persons.len()])?;
            Some(g.add(proj, bias_rows)?)
        }
        None => None,
    };

    Ok(ModalEmbeddings {
        h_rgb,
        h_depth,
        h_pose,
        h_agg,
        fused,
        tz: tz_values,
        degraded,
    })
}
