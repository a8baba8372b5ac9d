//! Checkpoints: one tensor container per parameter plus a JSON index and
//! the model configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamSet;
use crate::model::ModelConfig;
use crate::scenegen::{read_tensor, write_tensor};

use super::TrainError;

pub const INDEX_NAME: &str = "index.json";
pub const CONFIG_NAME: &str = "config.json";

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    format: String,
    parameters: BTreeMap<String, IndexEntry>,
}

/// Writes every parameter container, the index, and the config into `dir`.
pub fn save_checkpoint(
    params: &ParamSet,
    cfg: &ModelConfig,
    dir: &Path,
) -> Result<PathBuf, TrainError> {
    fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    let mut index = BTreeMap::new();
    for p in params.iter() {
        let file = format!("{}.cmhr", p.name);
        write_tensor(&dir.join(&file), &p.value)?;
        index.insert(
            p.name.clone(),
            IndexEntry {
                file,
                dims: p.value.dims().to_vec(),
            },
        );
    }
    let doc = CheckpointIndex {
        format: "comhr-checkpoint".to_string(),
        parameters: index,
    };
    let index_path = dir.join(INDEX_NAME);
    fs::write(
        &index_path,
        serde_json::to_string_pretty(&doc).expect("index serializes"),
    )
    .map_err(|e| TrainError::io(&index_path, e))?;
    let cfg_path = dir.join(CONFIG_NAME);
    fs::write(
        &cfg_path,
        serde_json::to_string_pretty(cfg).expect("config serializes"),
    )
    .map_err(|e| TrainError::io(&cfg_path, e))?;
    Ok(index_path)
}

/// Loads parameters (insertion-ordered by index key) and the config.
pub fn load_checkpoint(dir: &Path) -> Result<(ParamSet, ModelConfig), TrainError> {
    let index_path = dir.join(INDEX_NAME);
    let text = fs::read_to_string(&index_path).map_err(|e| TrainError::io(&index_path, e))?;
    let doc: CheckpointIndex =
        serde_json::from_str(&text).map_err(|e| TrainError::Json {
            path: index_path.display().to_string(),
            source: e,
        })?;
    if doc.format != "comhr-checkpoint" {
        return Err(TrainError::BadCheckpoint(format!(
            "unexpected format {:?}",
            doc.format
        )));
    }

    let mut params = ParamSet::new();
    for (name, entry) in &doc.parameters {
        let tensor = read_tensor(&dir.join(&entry.file))?;
        if tensor.dims() != entry.dims.as_slice() {
            return Err(TrainError::BadCheckpoint(format!(
                "parameter {name}: dims {:?} on disk, {:?} in index",
                tensor.dims(),
                entry.dims
            )));
        }
        params.insert(name, tensor)?;
    }

    let cfg_path = dir.join(CONFIG_NAME);
    let text = fs::read_to_string(&cfg_path).map_err(|e| TrainError::io(&cfg_path, e))?;
    let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| TrainError::Json {
        path: cfg_path.display().to_string(),
        source: e,
    })?;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;

    #[test]
    fn checkpoint_round_trip_preserves_values_and_resaves_identically() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        save_checkpoint(&model.params, &model.cfg, dir_a.path()).unwrap();
        let (loaded, cfg) = load_checkpoint(dir_a.path()).unwrap();
        assert_eq!(cfg.k_neighbors, model.cfg.k_neighbors);
        // Containers store f32, so a value round-trips to its f32 image;
        // re-saving must then be byte-identical.
        save_checkpoint(&loaded, &cfg, dir_b.path()).unwrap();
        for entry in fs::read_dir(dir_a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(dir_a.path().join(&name)).unwrap();
            let b = fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?}");
        }
        for p in loaded.iter() {
            let orig = model.params.value(&p.name).unwrap();
            for (l, o) in p.value.data().iter().zip(orig.data()) {
                assert_eq!(*l, *o as f32 as f64);
            }
        }
    }

    #[test]
    fn corrupt_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(INDEX_NAME), "{\"format\": \"other\"}").unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
