//! Synthetic crowd scenes, the perturbation harness, and file ingestion.
//!
//! Scenes stand in for upstream detectors: ground-truth bodies come from the
//! desk skeleton, 2D detections are noisy weak-perspective projections with
//! occlusion-degraded confidences, pseudo-depth patches are rendered as
//! per-joint discs in relative depth (nearer = larger), and visual features
//! are a fixed deterministic projection of the observed 2D layout.
//!
//! All persisted numeric payloads are quantized through f32 at generation
//! time so container round-trips are bitwise exact.

mod container;
mod manifest;

pub use container::{decode, encode, read_tensor, write_tensor, ContainerError};
pub use manifest::{load_scene, save_scene};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Tensor;
use crate::regressor::{
    forward_kinematics, rot6d_to_matrix, DeskSkeleton, Mat3, JOINT_COUNT, SHAPE_DIM,
};

/// Seed of the fixed projection that synthesizes visual features; constant
/// so identical observations map to identical features across scenes.
const RGB_PROJECTION_SEED: u64 = 0x434f_4d48_5200;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("person count {n} outside supported range 1..=512")]
    PersonCountOutOfRange { n: usize },

    #[error("perturbation parameter {name} = {value} outside {range}")]
    InvalidPerturbParam {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("unknown perturbation kind {0:?}")]
    UnknownPerturbKind(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("manifest io at {path}: {source}")]
    ManifestIo {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse at {path}: {source}")]
    ManifestJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    BadManifest(String),
}

/// One detected 2D joint with confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Joint2D {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

/// Square person crop: center and scale in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub s: f64,
}

/// Observations and ground truth for one person.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonRecord {
    pub id: u32,
    /// World-frame ground-truth joints (root translation included), meters.
    pub gt_joints3d: Vec<[f64; 3]>,
    pub joints2d: Vec<Joint2D>,
    /// `H_p x W_p` relative-depth crop in `[0, 1]`, nearer = larger.
    pub depth_patch: Tensor,
    /// Precomputed visual feature (synthetic or ingested).
    pub rgb_patch_feature: Option<Vec<f64>>,
    pub bbox: BBox,
    /// Ground-truth pose in 6D representation, `24 x 6`; present for
    /// synthetic scenes, optional for ingested ones.
    pub gt_pose6d: Option<Tensor>,
    pub gt_shape: Option<Vec<f64>>,
    /// Additive pelvis-anchor bias injected by the tz-bias perturbation;
    /// consumed at encoding time only.
    pub tz_bias: f64,
}

/// A crowd scene: persons plus the weak-perspective camera scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub persons: Vec<PersonRecord>,
    pub seed: u64,
    pub camera_f: f64,
}

impl Scene {
    /// Depth normalization window derived from ground-truth root depths,
    /// padded so relative depths stay inside (0, 1).
    pub fn relative_depth_window(&self) -> (f64, f64) {
        let mut z_min = f64::INFINITY;
        let mut z_max = f64::NEG_INFINITY;
        for p in &self.persons {
            let z = p.gt_joints3d[0][2];
            z_min = z_min.min(z);
            z_max = z_max.max(z);
        }
        (z_min - 0.5, z_max + 0.5)
    }

    /// Maps a world depth to relative depth in `[0, 1]`, nearer = larger.
    pub fn relative_depth(&self, z: f64) -> f64 {
        let (near, far) = self.relative_depth_window();
        let t = (far - z) / (far - near);
        (0.05 + 0.9 * t).clamp(0.0, 1.0)
    }

    /// Ground-truth pelvis depths in relative units, one per person.
    pub fn gt_pelvis_relative_depths(&self) -> Vec<f64> {
        self.persons
            .iter()
            .map(|p| self.relative_depth(p.gt_joints3d[0][2]))
            .collect()
    }
}

/// Generator knobs; `spread` controls horizontal spacing and therefore how
/// often persons overlap in the image.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub patch_size: usize,
    pub spread: f64,
    pub pixel_noise: f64,
    pub rgb_feature_dim: usize,
    pub camera_f: f64,
    pub depth_near: f64,
    pub depth_far: f64,
    pub occlusion_factor: f64,
    /// Probability that a person shares (with jitter) an earlier person's
    /// pose, giving crowds the similar-action clusters the contrastive
    /// objective feeds on.
    pub pose_similarity: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            patch_size: 32,
            spread: 1.0,
            pixel_noise: 1.0,
            rgb_feature_dim: 128,
            camera_f: 256.0,
            depth_near: 3.0,
            depth_far: 8.0,
            occlusion_factor: 0.2,
            pose_similarity: 0.35,
        }
    }
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

fn sample_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Rational squash `x / (1 + |x|)`; avoids libm so features are
/// platform-stable.
fn squash(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

fn to_patch_coords(bbox: &BBox, size: usize, u: f64, v: f64) -> (f64, f64) {
    let side = size as f64;
    let px = (u - (bbox.cx - bbox.s / 2.0)) / bbox.s * side;
    let py = (v - (bbox.cy - bbox.s / 2.0)) / bbox.s * side;
    (px, py)
}

/// Deterministic synthetic crowd scene for `(n_persons, seed)`.
pub fn generate_scene(n_persons: usize, seed: u64) -> Result<Scene, SceneError> {
    generate_scene_with(n_persons, seed, &GenConfig::default())
}

pub fn generate_scene_with(
    n_persons: usize,
    seed: u64,
    cfg: &GenConfig,
) -> Result<Scene, SceneError> {
    if n_persons == 0 || n_persons > 512 {
        return Err(SceneError::PersonCountOutOfRange { n: n_persons });
    }
    let n = n_persons;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = DeskSkeleton::desk();

    // Distinct depth slots, shuffled so depth is independent of x order.
    let gap = (cfg.depth_far - cfg.depth_near) / n as f64;
    let mut slots: Vec<f64> = (0..n)
        .map(|i| cfg.depth_near + (i as f64 + 0.5) * gap + rng.gen_range(-0.2..0.2) * gap)
        .collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        slots.swap(i, j);
    }

    struct Draft {
        world: Vec<[f64; 3]>,
        true2d: Vec<[f64; 2]>,
        pose6d: Tensor,
        shape: Vec<f64>,
        root_z: f64,
    }

    let mut drafts = Vec::with_capacity(n);
    let mut persons = Vec::with_capacity(n);

    for i in 0..n {
        let root_x = (i as f64 - (n as f64 - 1.0) / 2.0) * 0.9 * cfg.spread
            + rng.gen_range(-0.2..0.2);
        let root_y = rng.gen_range(-0.15..0.15);
        let root_z = slots[i];

        // Crowds cluster around shared actions: some persons borrow an
        // earlier pose with jitter instead of sampling a fresh one.
        let copy_from = if i > 0 && cfg.pose_similarity > 0.0 && rng.gen_bool(cfg.pose_similarity)
        {
            Some(rng.gen_range(0..i))
        } else {
            None
        };

        let mut pose6d = Tensor::zeros(&[JOINT_COUNT, 6]);
        let mut rots: [Mat3; JOINT_COUNT] = [crate::regressor::MAT3_IDENTITY; JOINT_COUNT];
        for k in 0..JOINT_COUNT {
            let mut r6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
            for (c, slot) in r6.iter_mut().enumerate() {
                let (base, sigma) = match copy_from {
                    Some(src) => {
                        let d: &Draft = &drafts[src];
                        (d.pose6d.at2(k, c), 0.04)
                    }
                    None => (*slot, if k == 0 { 0.6 } else { 0.35 }),
                };
                *slot = q(base + sample_normal(&mut rng, sigma));
                pose6d.set2(k, c, *slot);
            }
            let (m, _) = rot6d_to_matrix(&r6);
            rots[k] = m;
        }
        let shape: Vec<f64> = match copy_from {
            Some(src) => drafts[src]
                .shape
                .iter()
                .map(|&b| q((b + sample_normal(&mut rng, 0.05)).clamp(-2.0, 2.0)))
                .collect(),
            None => (0..SHAPE_DIM)
                .map(|_| q(sample_normal(&mut rng, 0.5).clamp(-2.0, 2.0)))
                .collect(),
        };

        let local = forward_kinematics(&skeleton, &rots, &shape);
        let world: Vec<[f64; 3]> = local
            .iter()
            .map(|p| [q(p[0] + root_x), q(p[1] + root_y), q(p[2] + root_z)])
            .collect();

        // Weak-perspective projection at the person's root depth.
        let scale = cfg.camera_f / root_z;
        let true2d: Vec<[f64; 2]> = world
            .iter()
            .map(|p| [scale * p[0], scale * p[1]])
            .collect();
        let joints2d: Vec<Joint2D> = true2d
            .iter()
            .map(|p| Joint2D {
                x: q(p[0] + sample_normal(&mut rng, cfg.pixel_noise)),
                y: q(p[1] + sample_normal(&mut rng, cfg.pixel_noise)),
                c: q(rng.gen_range(0.7..1.0)),
            })
            .collect();

        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in &joints2d {
            umin = umin.min(j.x);
            umax = umax.max(j.x);
            vmin = vmin.min(j.y);
            vmax = vmax.max(j.y);
        }
        let bbox = BBox {
            cx: q((umin + umax) / 2.0),
            cy: q((vmin + vmax) / 2.0),
            s: q(1.15 * (umax - umin).max(vmax - vmin).max(1.0)),
        };

        drafts.push(Draft {
            world: world.clone(),
            true2d,
            pose6d,
            shape: shape.clone(),
            root_z,
        });
        persons.push(PersonRecord {
            id: i as u32,
            gt_joints3d: world,
            joints2d,
            depth_patch: Tensor::zeros(&[cfg.patch_size, cfg.patch_size]),
            rgb_patch_feature: None,
            bbox,
            gt_pose6d: None,
            gt_shape: Some(shape),
            tz_bias: 0.0,
        });
    }
    for (p, d) in persons.iter_mut().zip(drafts.iter()) {
        p.gt_pose6d = Some(d.pose6d.clone());
    }

    // Occlusion: a joint inside any strictly nearer person's bbox keeps only
    // a fraction of its confidence.
    for i in 0..n {
        for k in 0..JOINT_COUNT {
            let (jx, jy) = (persons[i].joints2d[k].x, persons[i].joints2d[k].y);
            let occluded = (0..n).any(|j| {
                j != i && drafts[j].root_z < drafts[i].root_z - 1e-9 && {
                    let b = &persons[j].bbox;
                    (jx - b.cx).abs() <= b.s / 2.0 && (jy - b.cy).abs() <= b.s / 2.0
                }
            });
            if occluded {
                persons[i].joints2d[k].c = q(persons[i].joints2d[k].c * cfg.occlusion_factor);
            }
        }
    }

    let scene_for_depth = Scene {
        persons: persons.clone(),
        seed,
        camera_f: cfg.camera_f,
    };

    // Pseudo-depth crops: every person's joints paint discs into every
    // overlapping crop; max-blend keeps the nearest surface.
    let size = cfg.patch_size;
    let radius = (0.05 * size as f64).max(1.5);
    for i in 0..n {
        let bbox = persons[i].bbox;
        let mut patch = vec![0.0f64; size * size];
        for j in 0..n {
            for k in 0..JOINT_COUNT {
                let (u, v) = (drafts[j].true2d[k][0], drafts[j].true2d[k][1]);
                let (px, py) = to_patch_coords(&bbox, size, u, v);
                if px < -radius || py < -radius || px > size as f64 + radius
                    || py > size as f64 + radius
                {
                    continue;
                }
                let val = scene_for_depth.relative_depth(drafts[j].world[k][2]);
                let r0 = ((py - radius).floor().max(0.0)) as usize;
                let r1 = ((py + radius).ceil().min(size as f64 - 1.0)) as usize;
                let c0 = ((px - radius).floor().max(0.0)) as usize;
                let c1 = ((px + radius).ceil().min(size as f64 - 1.0)) as usize;
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let dx = c as f64 + 0.5 - px;
                        let dy = r as f64 + 0.5 - py;
                        if dx * dx + dy * dy <= radius * radius {
                            let cell = &mut patch[r * size + c];
                            *cell = cell.max(val);
                        }
                    }
                }
            }
        }
        for v in patch.iter_mut() {
            *v = q(*v);
        }
        persons[i].depth_patch = Tensor::new(vec![size, size], patch).expect("patch dims");
    }

    // Synthetic visual features: fixed random projection of the observed 2D
    // layout in crop coordinates plus CLIFF-style bbox terms.
    let desc_dim = JOINT_COUNT * 3 + 3;
    let mut proj_rng = ChaCha8Rng::seed_from_u64(RGB_PROJECTION_SEED);
    let proj_scale = 1.0 / (desc_dim as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.rgb_feature_dim * desc_dim)
        .map(|_| proj_rng.gen_range(-1.732..1.732) * proj_scale)
        .collect();
    for person in persons.iter_mut() {
        let mut desc = Vec::with_capacity(desc_dim);
        for k in 0..JOINT_COUNT {
            let (px, py) = to_patch_coords(
                &person.bbox,
                size,
                person.joints2d[k].x,
                person.joints2d[k].y,
            );
            desc.push((px / size as f64 - 0.5).clamp(-0.5, 0.5));
            desc.push((py / size as f64 - 0.5).clamp(-0.5, 0.5));
            desc.push(person.joints2d[k].c);
        }
        desc.push(person.bbox.cx / cfg.camera_f);
        desc.push(person.bbox.cy / cfg.camera_f);
        desc.push(person.bbox.s / cfg.camera_f);
        let feature: Vec<f64> = (0..cfg.rgb_feature_dim)
            .map(|r| {
                let row = &projection[r * desc_dim..(r + 1) * desc_dim];
                q(squash(row.iter().zip(&desc).map(|(w, d)| w * d).sum()))
            })
            .collect();
        person.rgb_patch_feature = Some(feature);
    }

    Ok(Scene {
        persons,
        seed,
        camera_f: cfg.camera_f,
    })
}

/// Observation corruptions; ground truth is never touched.
#[derive(Clone, Debug, PartialEq)]
pub enum PerturbationSpec {
    /// Zeroes the bottom `s_i ~ U(0, max_fraction)` rows of each person's
    /// depth patch and the confidences of joints inside the zeroed band.
    ForegroundTruncation { max_fraction: f64, seed: u64 },
    /// Adds i.i.d. Gaussian noise to every depth-patch value, clamped back
    /// to `[0, 1]`.
    SensorNoise { sigma: f64, seed: u64 },
    /// Zeroes the central `fraction x fraction` block of each depth patch.
    DepthHole { fraction: f64 },
    /// Flags each person with probability `prob` for an additive
    /// `N(0, (sigma_factor * sigma_z)^2)` pelvis-anchor bias, where
    /// `sigma_z` is the scene's depth standard deviation.
    TzBias {
        prob: f64,
        sigma_factor: f64,
        seed: u64,
    },
}

impl PerturbationSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PerturbationSpec::ForegroundTruncation { .. } => "foreground-truncation",
            PerturbationSpec::SensorNoise { .. } => "sensor-noise",
            PerturbationSpec::DepthHole { .. } => "depth-hole",
            PerturbationSpec::TzBias { .. } => "tz-bias",
        }
    }

    /// The four supplement corruptions at their documented strengths.
    pub fn standard_suite(seed: u64) -> Vec<PerturbationSpec> {
        vec![
            PerturbationSpec::ForegroundTruncation {
                max_fraction: 0.1,
                seed,
            },
            PerturbationSpec::SensorNoise { sigma: 0.1, seed },
            PerturbationSpec::DepthHole { fraction: 0.6 },
            PerturbationSpec::TzBias {
                prob: 0.3,
                sigma_factor: 3.0,
                seed,
            },
        ]
    }

    /// Builds a spec from a kind name and optional overrides (CLI surface).
    pub fn from_kind(kind: &str, strength: Option<f64>, seed: u64) -> Result<Self, SceneError> {
        let spec = match kind {
            "foreground-truncation" => PerturbationSpec::ForegroundTruncation {
                max_fraction: strength.unwrap_or(0.1),
                seed,
            },
            "sensor-noise" => PerturbationSpec::SensorNoise {
                sigma: strength.unwrap_or(0.1),
                seed,
            },
            "depth-hole" => PerturbationSpec::DepthHole {
                fraction: strength.unwrap_or(0.6),
            },
            "tz-bias" => PerturbationSpec::TzBias {
                prob: strength.unwrap_or(0.3),
                sigma_factor: 3.0,
                seed,
            },
            other => return Err(SceneError::UnknownPerturbKind(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let unit = |name: &'static str, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(SceneError::InvalidPerturbParam {
                    name,
                    value,
                    range: "[0, 1]",
                })
            }
        };
        match *self {
            PerturbationSpec::ForegroundTruncation { max_fraction, .. } => {
                unit("max_fraction", max_fraction)
            }
            PerturbationSpec::SensorNoise { sigma, .. } => {
                if sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(SceneError::InvalidPerturbParam {
                        name: "sigma",
                        value: sigma,
                        range: "[0, inf)",
                    })
                }
            }
            PerturbationSpec::DepthHole { fraction } => unit("fraction", fraction),
            PerturbationSpec::TzBias {
                prob, sigma_factor, ..
            } => {
                unit("prob", prob)?;
                if sigma_factor >= 0.0 {
                    Ok(())
                } else {
                    Err(SceneError::InvalidPerturbParam {
                        name: "sigma_factor",
                        value: sigma_factor,
                        range: "[0, inf)",
                    })
                }
            }
        }
    }
}

/// Applies one perturbation, returning the degraded scene.
pub fn perturb(scene: &Scene, spec: &PerturbationSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let mut out = scene.clone();
    match *spec {
        PerturbationSpec::ForegroundTruncation { max_fraction, seed } => {
            for person in out.persons.iter_mut() {
                if max_fraction == 0.0 {
                    continue;
                }
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (0x7472 << 32) ^ person.id as u64);
                let s_i = rng.gen_range(0.0..max_fraction);
                let h = person.depth_patch.dims()[0];
                let w = person.depth_patch.dims()[1];
                let band = (s_i * h as f64).round() as usize;
                if band == 0 {
                    continue;
                }
                let first_zeroed = h - band;
                for r in first_zeroed..h {
                    for c in 0..w {
                        person.depth_patch.set2(r, c, 0.0);
                    }
                }
                let bbox = person.bbox;
                for j in person.joints2d.iter_mut() {
                    let (_, py) = to_patch_coords(&bbox, h, j.x, j.y);
                    let row = py.floor().clamp(0.0, h as f64 - 1.0) as usize;
                    if row >= first_zeroed {
                        j.c = 0.0;
                    }
                }
            }
        }
        PerturbationSpec::SensorNoise { sigma, seed } => {
            if sigma > 0.0 {
                for person in out.persons.iter_mut() {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(seed ^ (0x6e73 << 32) ^ person.id as u64);
                    for v in person.depth_patch.data_mut() {
                        *v = q((*v + sample_normal(&mut rng, sigma)).clamp(0.0, 1.0));
                    }
                }
            }
        }
        PerturbationSpec::DepthHole { fraction } => {
            for person in out.persons.iter_mut() {
                let h = person.depth_patch.dims()[0];
                let w = person.depth_patch.dims()[1];
                let bh = (fraction * h as f64).ceil() as usize;
                let bw = (fraction * w as f64).ceil() as usize;
                let r0 = (h - bh) / 2;
                let c0 = (w - bw) / 2;
                for r in r0..r0 + bh {
                    for c in c0..c0 + bw {
                        person.depth_patch.set2(r, c, 0.0);
                    }
                }
            }
        }
        PerturbationSpec::TzBias {
            prob,
            sigma_factor,
            seed,
        } => {
            if prob > 0.0 {
                let depths = out.gt_pelvis_relative_depths();
                let mean = depths.iter().sum::<f64>() / depths.len() as f64;
                let var = depths.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
                    / depths.len() as f64;
                let sigma_z = var.sqrt();
                for person in out.persons.iter_mut() {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(seed ^ (0x747a << 32) ^ person.id as u64);
                    if rng.gen_bool(prob) {
                        person.tz_bias = sample_normal(&mut rng, sigma_factor * sigma_z);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(1, 7).unwrap();
        let b = generate_scene(1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn person_count_and_unique_ids() {
        let s = generate_scene(6, 0).unwrap();
        assert_eq!(s.persons.len(), 6);
        let mut ids: Vec<u32> = s.persons.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn out_of_range_counts_rejected() {
        assert!(matches!(
            generate_scene(0, 1),
            Err(SceneError::PersonCountOutOfRange { n: 0 })
        ));
        assert!(matches!(
            generate_scene(513, 1),
            Err(SceneError::PersonCountOutOfRange { n: 513 })
        ));
    }

    #[test]
    fn depths_are_distinct_and_patches_in_unit_range() {
        let s = generate_scene(8, 3).unwrap();
        let mut depths: Vec<f64> = s.persons.iter().map(|p| p.gt_joints3d[0][2]).collect();
        depths.sort_by(f64::total_cmp);
        for w in depths.windows(2) {
            assert!(w[1] - w[0] > 1e-6);
        }
        for p in &s.persons {
            assert!(p.depth_patch.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(p.bbox.s > 0.0);
            assert!(p.joints2d.iter().all(|j| (0.0..=1.0).contains(&j.c)));
        }
    }

    #[test]
    fn overlap_increases_low_confidence_fraction() {
        // Monte-Carlo over seeds: crowded layouts must occlude strictly more
        // joints than spread-out ones.
        let frac_low = |spread: f64| -> f64 {
            let mut low = 0usize;
            let mut total = 0usize;
            for seed in 0..100 {
                let cfg = GenConfig {
                    spread,
                    ..GenConfig::default()
                };
                let s = generate_scene_with(8, seed, &cfg).unwrap();
                for p in &s.persons {
                    for j in &p.joints2d {
                        total += 1;
                        if j.c <= 0.5 {
                            low += 1;
                        }
                    }
                }
            }
            low as f64 / total as f64
        };
        let crowded = frac_low(0.15);
        let spread = frac_low(2.0);
        assert!(
            crowded > spread,
            "crowded {crowded} should exceed spread {spread}"
        );
    }

    #[test]
    fn depth_hole_zeroes_central_block_only() {
        let mut scene = generate_scene(1, 5).unwrap();
        scene.persons[0].depth_patch = Tensor::full(&[8, 8], 1.0);
        let holed = perturb(&scene, &PerturbationSpec::DepthHole { fraction: 0.6 }).unwrap();
        let p = &holed.persons[0].depth_patch;
        // ceil(0.6 * 8) = 5, centered at offset (8 - 5) / 2 = 1.
        for r in 0..8 {
            for c in 0..8 {
                let inside = (1..6).contains(&r) && (1..6).contains(&c);
                assert_eq!(p.at2(r, c), if inside { 0.0 } else { 1.0 }, "({r},{c})");
            }
        }
    }

    #[test]
    fn depth_hole_is_idempotent() {
        let scene = generate_scene(3, 11).unwrap();
        let spec = PerturbationSpec::DepthHole { fraction: 0.6 };
        let once = perturb(&scene, &spec).unwrap();
        let twice = perturb(&once, &spec).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_strength_perturbations_change_nothing() {
        let scene = generate_scene(4, 2).unwrap();
        let same = perturb(
            &scene,
            &PerturbationSpec::SensorNoise { sigma: 0.0, seed: 9 },
        )
        .unwrap();
        assert_eq!(scene, same);
        let same = perturb(
            &scene,
            &PerturbationSpec::TzBias {
                prob: 0.0,
                sigma_factor: 3.0,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(scene, same);
    }

    #[test]
    fn perturb_never_touches_ground_truth() {
        let scene = generate_scene(5, 13).unwrap();
        for spec in PerturbationSpec::standard_suite(21) {
            let out = perturb(&scene, &spec).unwrap();
            for (a, b) in scene.persons.iter().zip(&out.persons) {
                assert_eq!(a.gt_joints3d, b.gt_joints3d, "{}", spec.kind_name());
                assert_eq!(a.gt_pose6d, b.gt_pose6d);
                assert_eq!(a.gt_shape, b.gt_shape);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(matches!(
            perturb(
                &generate_scene(2, 1).unwrap(),
                &PerturbationSpec::DepthHole { fraction: 1.5 }
            ),
            Err(SceneError::InvalidPerturbParam { name: "fraction", .. })
        ));
        assert!(matches!(
            PerturbationSpec::from_kind("melt", None, 0),
            Err(SceneError::UnknownPerturbKind(_))
        ));
    }

    #[test]
    fn truncation_zeroes_band_and_matching_confidences() {
        let scene = generate_scene(3, 17).unwrap();
        let out = perturb(
            &scene,
            &PerturbationSpec::ForegroundTruncation {
                max_fraction: 0.5,
                seed: 4,
            },
        )
        .unwrap();
        let mut any_band = false;
        for (orig, p) in scene.persons.iter().zip(&out.persons) {
            let h = p.depth_patch.dims()[0];
            let w = p.depth_patch.dims()[1];
            // Find the zeroed suffix of rows, if any.
            let mut first_zeroed = h;
            for r in (0..h).rev() {
                if (0..w).all(|c| p.depth_patch.at2(r, c) == 0.0) {
                    first_zeroed = r;
                } else {
                    break;
                }
            }
            if first_zeroed < h {
                any_band = true;
            }
            for r in 0..first_zeroed {
                for c in 0..w {
                    assert_eq!(p.depth_patch.at2(r, c), orig.depth_patch.at2(r, c));
                }
            }
            for (jo, jp) in orig.joints2d.iter().zip(&p.joints2d) {
                let (_, py) = to_patch_coords(&p.bbox, h, jp.x, jp.y);
                let row = py.floor().clamp(0.0, h as f64 - 1.0) as usize;
                if row >= first_zeroed {
                    assert_eq!(jp.c, 0.0);
                } else {
                    assert_eq!(jp.c, jo.c);
                }
            }
        }
        assert!(any_band, "with max_fraction 0.5 some band should be zeroed");
    }
}
