//! Scene manifests: a JSON document naming per-field tensor containers.
//!
//! `save_scene` writes `manifest.json` plus one `.cmhr` container per
//! numeric field into a directory; `load_scene` reverses it. Paths in the
//! manifest are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{read_tensor, write_tensor};
use super::{BBox, Joint2D, PersonRecord, Scene, SceneError};
use crate::diffcore::Tensor;
use crate::regressor::{JOINT_COUNT, SHAPE_DIM};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT: &str = "comhr-scene";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    format: String,
    version: u32,
    seed: u64,
    camera_f: f64,
    persons: Vec<ManifestPerson>,
}

#[derive(Serialize, Deserialize)]
struct ManifestPerson {
    id: u32,
    bbox: [f64; 3],
    tz_bias: f64,
    gt_joints3d: String,
    joints2d: String,
    depth_patch: String,
    rgb_patch_feature: Option<String>,
    gt_pose6d: Option<String>,
    gt_shape: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::ManifestIo {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `scene` into `dir` (created if absent), returning the manifest path.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<PathBuf, SceneError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut persons = Vec::with_capacity(scene.persons.len());
    for p in &scene.persons {
        let stem = format!("p{:03}", p.id);
        let write = |suffix: &str, tensor: &Tensor| -> Result<String, SceneError> {
            let name = format!("{stem}_{suffix}.cmhr");
            write_tensor(&dir.join(&name), tensor)?;
            Ok(name)
        };

        let gt = Tensor::new(
            vec![JOINT_COUNT, 3],
            p.gt_joints3d.iter().flatten().copied().collect(),
        )
        .expect("joint dims");
        let j2d = Tensor::new(
            vec![JOINT_COUNT, 3],
            p.joints2d.iter().flat_map(|j| [j.x, j.y, j.c]).collect(),
        )
        .expect("joint dims");

        persons.push(ManifestPerson {
            id: p.id,
            bbox: [p.bbox.cx, p.bbox.cy, p.bbox.s],
            tz_bias: p.tz_bias,
            gt_joints3d: write("gt_joints3d", &gt)?,
            joints2d: write("joints2d", &j2d)?,
            depth_patch: write("depth_patch", &p.depth_patch)?,
            rgb_patch_feature: p
                .rgb_patch_feature
                .as_ref()
                .map(|f| write("rgb_feature", &Tensor::vector(f.clone())))
                .transpose()?,
            gt_pose6d: p
                .gt_pose6d
                .as_ref()
                .map(|t| write("gt_pose6d", t))
                .transpose()?,
            gt_shape: p
                .gt_shape
                .as_ref()
                .map(|s| write("gt_shape", &Tensor::vector(s.clone())))
                .transpose()?,
        });
    }

    let doc = ManifestDoc {
        format: FORMAT.to_string(),
        version: MANIFEST_VERSION,
        seed: scene.seed,
        camera_f: scene.camera_f,
        persons,
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Loads a scene from a manifest path (or a directory containing
/// `manifest.json`).
pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| SceneError::ManifestJson {
            path: manifest_path.display().to_string(),
            source: e,
        })?;
    if doc.format != FORMAT {
        return Err(SceneError::BadManifest(format!(
            "unexpected format {:?}",
            doc.format
        )));
    }
    if doc.version != MANIFEST_VERSION {
        return Err(SceneError::BadManifest(format!(
            "unsupported manifest version {}",
            doc.version
        )));
    }
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let mut persons = Vec::with_capacity(doc.persons.len());
    for mp in &doc.persons {
        let gt = expect_dims(read_tensor(&base.join(&mp.gt_joints3d))?, &[JOINT_COUNT, 3])?;
        let j2d = expect_dims(read_tensor(&base.join(&mp.joints2d))?, &[JOINT_COUNT, 3])?;
        let depth_patch = read_tensor(&base.join(&mp.depth_patch))?;
        if depth_patch.rank() != 2 {
            return Err(SceneError::BadManifest(format!(
                "depth patch must be rank 2, got {:?}",
                depth_patch.dims()
            )));
        }
        let rgb = mp
            .rgb_patch_feature
            .as_ref()
            .map(|p| read_tensor(&base.join(p)))
            .transpose()?
            .map(|t| t.data().to_vec());
        let pose6d = mp
            .gt_pose6d
            .as_ref()
            .map(|p| read_tensor(&base.join(p)))
            .transpose()?
            .map(|t| expect_dims(t, &[JOINT_COUNT, 6]))
            .transpose()?;
        let shape = mp
            .gt_shape
            .as_ref()
            .map(|p| read_tensor(&base.join(p)))
            .transpose()?
            .map(|t| expect_dims(t, &[SHAPE_DIM]))
            .transpose()?
            .map(|t| t.data().to_vec());

        let gt_joints3d: Vec<[f64; 3]> = (0..JOINT_COUNT)
            .map(|k| [gt.at2(k, 0), gt.at2(k, 1), gt.at2(k, 2)])
            .collect();
        let joints2d: Vec<Joint2D> = (0..JOINT_COUNT)
            .map(|k| Joint2D {
                x: j2d.at2(k, 0),
                y: j2d.at2(k, 1),
                c: j2d.at2(k, 2),
            })
            .collect();

        persons.push(PersonRecord {
            id: mp.id,
            gt_joints3d,
            joints2d,
            depth_patch,
            rgb_patch_feature: rgb,
            bbox: BBox {
                cx: mp.bbox[0],
                cy: mp.bbox[1],
                s: mp.bbox[2],
            },
            gt_pose6d: pose6d,
            gt_shape: shape,
            tz_bias: mp.tz_bias,
        });
    }

    Ok(Scene {
        persons,
        seed: doc.seed,
        camera_f: doc.camera_f,
    })
}

fn expect_dims(t: Tensor, dims: &[usize]) -> Result<Tensor, SceneError> {
    if t.dims() != dims {
        return Err(SceneError::BadManifest(format!(
            "container dims {:?}, expected {:?}",
            t.dims(),
            dims
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::generate_scene;

    #[test]
    fn save_load_round_trips_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(4, 3).unwrap();
        let manifest = save_scene(&scene, dir.path()).unwrap();
        let back = load_scene(&manifest).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let scene = generate_scene(3, 9).unwrap();
        save_scene(&scene, dir_a.path()).unwrap();
        let back = load_scene(dir_a.path()).unwrap();
        save_scene(&back, dir_b.path()).unwrap();

        let mut names: Vec<String> = fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for name in names {
            let a = fs::read(dir_a.path().join(&name)).unwrap();
            let b = fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name} differs");
        }
    }

    #[test]
    fn missing_container_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(2, 1).unwrap();
        let manifest = save_scene(&scene, dir.path()).unwrap();
        fs::remove_file(dir.path().join("p000_depth_patch.cmhr")).unwrap();
        let err = load_scene(&manifest).unwrap_err();
        assert!(
            err.to_string().contains("p000_depth_patch.cmhr"),
            "{err}"
        );
    }

    #[test]
    fn corrupt_magic_surfaces_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(2, 1).unwrap();
        let manifest = save_scene(&scene, dir.path()).unwrap();
        let victim = dir.path().join("p001_joints2d.cmhr");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        fs::write(&victim, bytes).unwrap();
        let err = load_scene(&manifest).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }
}
