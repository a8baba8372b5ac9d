//! The full relational model: node initialization, shared topology,
//! message passing, regression heads, and the composite objective, wired
//! over the differentiation substrate for one forward group at a time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrast::{
    contrastive_total, cross_loss, intra_loss, positive_sets, ContrastConfig, PositiveSets,
};
use crate::diffcore::{DiffError, Graph, NodeId, ParamSet, Tensor};
use crate::hyperreason::{reason, ReasonConfig, RefinedEmbeddings};
use crate::hypertopo::{build_topology, Incidence, TopoError};
use crate::nodeinit::{
    build_embeddings, BranchToggles, EncoderConfig, ModalEmbeddings, NodeInitError,
};
use crate::regressor::{
    box_embedding, combine_total, fuse_final, joint_loss, predict_person, regress, reproj_loss,
    smpl_param_loss, DeskSkeleton, LossWeights, ParamPrediction, RegressorConfig, JOINT_COUNT,
    SHAPE_DIM,
};
use crate::scenegen::{Scene, SceneError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    NodeInit(#[from] NodeInitError),

    #[error(transparent)]
    Topo(#[from] TopoError),

    #[error(transparent)]
    Scene(#[from] SceneError),

    #[error("empty forward group")]
    EmptyGroup,
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Everything that defines a model instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub contrast: ContrastConfig,
    pub reason: ReasonConfig,
    pub regressor: RegressorConfig,
    /// Hyperedge size; clamped to the group size per forward group.
    pub k_neighbors: usize,
    pub loss_weights: LossWeights,
    pub toggles: BranchToggles,
    pub contrastive_enabled: bool,
    /// Weight-initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            contrast: ContrastConfig::default(),
            reason: ReasonConfig::default(),
            regressor: RegressorConfig::default(),
            k_neighbors: 4,
            loss_weights: LossWeights::default(),
            toggles: BranchToggles::default(),
            contrastive_enabled: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small dims for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig::tiny(),
            regressor: RegressorConfig::tiny(),
            k_neighbors: 2,
            ..ModelConfig::default()
        }
    }

    pub fn enabled_modalities(&self) -> usize {
        [self.toggles.rgb, self.toggles.depth, self.toggles.pose]
            .iter()
            .filter(|&&t| t)
            .count()
    }

    /// High-order reasoning activates once at least two modalities feed the
    /// shared topology.
    pub fn hypergraph_active(&self) -> bool {
        self.enabled_modalities() >= 2
    }
}

/// Per-component loss values of one forward, for logs and tables.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reproj: f64,
    pub smpl: f64,
    pub joint: f64,
    pub intra_rgb: f64,
    pub intra_depth: f64,
    pub intra_pose: f64,
    pub cross: f64,
    pub contrastive: f64,
}

/// Outcome of one forward group.
pub struct GroupForward {
    /// Scalar objective node (present for gradient work).
    pub total: NodeId,
    pub breakdown: LossBreakdown,
    pub predictions: Vec<ParamPrediction>,
    pub incidence: Incidence,
    /// Anchor depth per person, as consumed by the visual branch.
    pub tz: Vec<f64>,
    /// Count of rotations that hit the degenerate fallback.
    pub degenerate_rotations: usize,
}

/// Model = config + parameters + skeleton.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub skeleton: DeskSkeleton,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> ModelResult<Model> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        crate::nodeinit::register_params(&mut params, &cfg.encoder, &mut rng)?;
        crate::hyperreason::register_params(&mut params, cfg.encoder.latent_dim, &mut rng)?;
        crate::regressor::heads::register_params(
            &mut params,
            cfg.encoder.latent_dim,
            &cfg.regressor,
            &mut rng,
        )?;
        Ok(Model {
            cfg,
            params,
            skeleton: DeskSkeleton::desk(),
        })
    }

    /// Forward over `persons` of `scene` with the model's own parameters.
    pub fn forward_group(
        &self,
        g: &mut Graph,
        scene: &Scene,
        persons: &[usize],
        fixed_topology: Option<&Incidence>,
    ) -> ModelResult<GroupForward> {
        self.forward_group_with(g, &self.params, scene, persons, fixed_topology)
    }

    /// Forward with explicit parameter values (the gradcheck surface).
    pub fn forward_group_with(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        scene: &Scene,
        persons: &[usize],
        fixed_topology: Option<&Incidence>,
    ) -> ModelResult<GroupForward> {
        if persons.is_empty() {
            return Err(ModelError::EmptyGroup);
        }
        let cfg = &self.cfg;
        let n = persons.len();

        let emb = build_embeddings(g, params, &cfg.encoder, scene, persons, &cfg.toggles)?;

        let incidence = match fixed_topology {
            Some(h) => h.clone(),
            None => {
                let k = cfg.k_neighbors.clamp(1, n);
                build_topology(g.value(emb.h_agg), k)?.1
            }
        };

        let refined = if cfg.hypergraph_active() {
            reason(
                g,
                params,
                emb.h_rgb,
                emb.h_depth,
                emb.h_pose,
                &incidence,
                &cfg.reason,
            )?
        } else {
            RefinedEmbeddings {
                rgb: emb.h_rgb,
                depth: emb.h_depth,
                pose: emb.h_pose,
            }
        };

        let mut box_embeds = Vec::with_capacity(n);
        for &pi in persons {
            box_embeds.push(box_embedding(
                g,
                params,
                &scene.persons[pi].bbox,
                scene.camera_f,
            )?);
        }
        let v_final = fuse_final(g, &refined, &box_embeds)?;
        let heads = regress(g, params, v_final)?;

        let mut reproj_terms = Vec::with_capacity(n);
        let mut smpl_terms = Vec::with_capacity(n);
        let mut joint_terms = Vec::with_capacity(n);
        let mut predictions = Vec::with_capacity(n);
        let mut degenerate_rotations = 0;

        for (row, &pi) in persons.iter().enumerate() {
            let person = &scene.persons[pi];
            let pose_row = g.row(heads.pose6d, row)?;
            let shape_row = g.row(heads.shape, row)?;
            let camera_row = g.row(heads.camera, row)?;
            let pred = predict_person(g, &self.skeleton, pose_row, shape_row, camera_row)?;
            degenerate_rotations += pred.degenerate_rotations;

            reproj_terms.push(reproj_loss(
                g,
                pred.joints2d,
                person,
                scene.camera_f,
                cfg.encoder.visibility_threshold,
            )?);
            if let Some(l) = smpl_param_loss(g, &pred, person)? {
                smpl_terms.push(l);
            }
            joint_terms.push(joint_loss(g, pred.joints3d, person)?);

            predictions.push(ParamPrediction {
                pose6d: Tensor::new(
                    vec![JOINT_COUNT, 6],
                    g.value(pred.pose6d).data().to_vec(),
                )
                .expect("pose dims"),
                shape: g.value(pred.shape).data().to_vec(),
                camera: {
                    let c = g.value(pred.camera).data();
                    [c[0], c[1], c[2]]
                },
            });
            debug_assert_eq!(predictions.last().unwrap().shape.len(), SHAPE_DIM);
        }

        let mean_of = |g: &mut Graph, terms: &[NodeId]| -> ModelResult<NodeId> {
            if terms.is_empty() {
                return Ok(g.constant_scalar(0.0));
            }
            let stacked = g.concat(0, terms)?;
            Ok(g.mean(stacked)?)
        };
        let reproj = mean_of(g, &reproj_terms)?;
        let smpl = mean_of(g, &smpl_terms)?;
        let joint = mean_of(g, &joint_terms)?;

        let (contrastive, intra_values, cross_value) =
            self.contrastive_terms(g, scene, persons, &emb)?;

        let total = combine_total(g, reproj, smpl, joint, contrastive, &cfg.loss_weights)?;

        let breakdown = LossBreakdown {
            total: g.value(total).item(),
            reproj: g.value(reproj).item(),
            smpl: g.value(smpl).item(),
            joint: g.value(joint).item(),
            intra_rgb: intra_values[0],
            intra_depth: intra_values[1],
            intra_pose: intra_values[2],
            cross: cross_value,
            contrastive: g.value(contrastive).item(),
        };

        Ok(GroupForward {
            total,
            breakdown,
            predictions,
            incidence,
            tz: emb.tz,
            degenerate_rotations,
        })
    }

    fn contrastive_terms(
        &self,
        g: &mut Graph,
        scene: &Scene,
        persons: &[usize],
        emb: &ModalEmbeddings,
    ) -> ModelResult<(NodeId, [f64; 3], f64)> {
        let cfg = &self.cfg;
        if !cfg.contrastive_enabled || persons.len() < 2 {
            return Ok((g.constant_scalar(0.0), [0.0; 3], 0.0));
        }

        let poses: Vec<&[[f64; 3]]> = persons
            .iter()
            .map(|&pi| scene.persons[pi].gt_joints3d.as_slice())
            .collect();
        let positives: PositiveSets = positive_sets(&poses, cfg.contrast.eps_mpjpe);

        let branches = [
            (cfg.toggles.rgb, emb.h_rgb),
            (cfg.toggles.depth, emb.h_depth),
            (cfg.toggles.pose, emb.h_pose),
        ];
        let mut intra_nodes = [None; 3];
        let mut intra_values = [0.0; 3];
        for (m, (enabled, h)) in branches.iter().enumerate() {
            if *enabled {
                let (node, _warned) = intra_loss(g, *h, &positives, &cfg.contrast)?;
                intra_values[m] = g.value(node).item();
                intra_nodes[m] = Some(node);
            }
        }
        let zero = g.constant_scalar(0.0);
        let intra = [
            intra_nodes[0].unwrap_or(zero),
            intra_nodes[1].unwrap_or(zero),
            intra_nodes[2].unwrap_or(zero),
        ];

        let cross = cross_loss(g, emb.h_rgb, emb.h_depth, emb.h_pose)?;
        let cross_value = g.value(cross).item();
        let total = contrastive_total(g, intra, cross, cfg.contrast.alpha)?;
        Ok((total, intra_values, cross_value))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scenegen::{generate_scene_with, GenConfig};

    pub(crate) fn tiny_model_and_scene(n: usize, seed: u64) -> (Model, Scene) {
        let cfg = ModelConfig::tiny();
        let gen = GenConfig {
            patch_size: 8,
            rgb_feature_dim: cfg.encoder.feature_dim_raw,
            ..GenConfig::default()
        };
        let scene = generate_scene_with(n, seed, &gen).unwrap();
        (Model::new(cfg).unwrap(), scene)
    }

    #[test]
    fn forward_produces_finite_losses_and_predictions() {
        let (model, scene) = tiny_model_and_scene(4, 11);
        let mut g = Graph::new();
        let persons: Vec<usize> = (0..4).collect();
        let out = model.forward_group(&mut g, &scene, &persons, None).unwrap();
        assert!(out.breakdown.total.is_finite());
        assert!(out.breakdown.reproj >= 0.0);
        assert!(out.breakdown.joint >= 0.0);
        assert!(out.breakdown.smpl >= 0.0);
        assert_eq!(out.predictions.len(), 4);
        assert_eq!(out.tz.len(), 4);
        for p in &out.predictions {
            assert!(p.pose6d.all_finite());
            assert!(p.camera.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (model, scene) = tiny_model_and_scene(3, 5);
        let run = || {
            let mut g = Graph::new();
            let out = model
                .forward_group(&mut g, &scene, &[0, 1, 2], None)
                .unwrap();
            (out.breakdown.total, g.value(out.total).item())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_touches_every_active_parameter_family() {
        let (model, scene) = tiny_model_and_scene(4, 3);
        let mut g = Graph::new();
        let out = model.forward_group(&mut g, &scene, &[0, 1, 2, 3], None).unwrap();
        let grads = g.backward(out.total, &model.params).unwrap();
        let mut nonzero_families = std::collections::BTreeSet::new();
        for (slot, p) in model.params.iter().enumerate() {
            if grads.slot(slot).data().iter().any(|&v| v != 0.0) {
                nonzero_families.insert(p.name.split('.').next().unwrap().to_string());
            }
        }
        for family in ["enc", "proj", "reason", "head", "box"] {
            assert!(
                nonzero_families.contains(family),
                "family {family} received no gradient; got {nonzero_families:?}"
            );
        }
    }

    #[test]
    fn single_modality_skips_hypergraph() {
        let mut cfg = ModelConfig::tiny();
        cfg.toggles.depth = false;
        cfg.toggles.pose = false;
        assert!(!cfg.hypergraph_active());
        let gen = GenConfig {
            patch_size: 8,
            rgb_feature_dim: cfg.encoder.feature_dim_raw,
            ..GenConfig::default()
        };
        let scene = generate_scene_with(3, 2, &gen).unwrap();
        let model = Model::new(cfg).unwrap();
        let mut g = Graph::new();
        let out = model.forward_group(&mut g, &scene, &[0, 1, 2], None).unwrap();
        // Reasoning weights stay untouched by backward.
        let grads = g.backward(out.total, &model.params).unwrap();
        for (slot, p) in model.params.iter().enumerate() {
            if p.name.starts_with("reason.") {
                assert!(grads.slot(slot).data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn fixed_topology_is_respected() {
        let (model, scene) = tiny_model_and_scene(4, 9);
        let mut g0 = Graph::new();
        let base = model.forward_group(&mut g0, &scene, &[0, 1, 2, 3], None).unwrap();
        let mut g1 = Graph::new();
        let replay = model
            .forward_group(&mut g1, &scene, &[0, 1, 2, 3], Some(&base.incidence))
            .unwrap();
        assert_eq!(base.breakdown.total, replay.breakdown.total);
        assert_eq!(base.incidence, replay.incidence);
    }
}
