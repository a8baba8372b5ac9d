//! Ablation runner: trains one model per configuration cell and seed,
//! evaluating each on a held-out pool.

use serde::Serialize;

use crate::model::Model;
use crate::nodeinit::BranchToggles;

use super::metrics::evaluate;
use super::train::{train, TrainConfig};
use super::TrainError;

/// One configuration row of the ablation grid.
#[derive(Clone, Debug, Serialize)]
pub struct AblationCell {
    pub name: String,
    pub rgb: bool,
    pub depth: bool,
    pub pose: bool,
    pub tz_anchor: bool,
    pub contrastive: bool,
}

impl AblationCell {
    fn new(name: &str, rgb: bool, depth: bool, pose: bool, tz: bool, contrastive: bool) -> Self {
        AblationCell {
            name: name.to_string(),
            rgb,
            depth,
            pose,
            tz_anchor: tz,
            contrastive,
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        cfg.model.toggles = BranchToggles {
            rgb: self.rgb,
            depth: self.depth,
            pose: self.pose,
            tz_anchor: self.tz_anchor,
        };
        cfg.model.contrastive_enabled = self.contrastive;
    }
}

/// The eight standard rows: single modalities, pairs, the full set, the
/// depth anchor, and contrastive learning.
pub fn standard_grid() -> Vec<AblationCell> {
    vec![
        AblationCell::new("rgb_only", true, false, false, false, false),
        AblationCell::new("depth_only", false, true, false, false, false),
        AblationCell::new("pose_only", false, false, true, false, false),
        AblationCell::new("rgb_depth", true, true, false, false, false),
        AblationCell::new("rgb_pose", true, false, true, false, false),
        AblationCell::new("rgb_depth_pose", true, true, true, false, false),
        AblationCell::new("full_no_contrastive", true, true, true, true, false),
        AblationCell::new("full", true, true, true, true, true),
    ]
}

/// Per-cell results across seeds.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub seeds: Vec<u64>,
    pub mpjpe_mm_per_seed: Vec<f64>,
    pub mean_mpjpe_mm: f64,
    pub mean_depth_order_acc: f64,
}

/// Trains and evaluates every cell for every seed. Seeds are shared across
/// cells so rows differ only in configuration.
pub fn run_ablation(
    base: &TrainConfig,
    cells: &[AblationCell],
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut mpjpes = Vec::with_capacity(seeds.len());
        let mut depth_accs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.init_seed = seed;
            cell.apply(&mut cfg);
            let (trainer, _) = train(&cfg, None)?;
            let eval_scenes = cfg.eval_pool()?;
            let report = evaluate(&trainer.model, &eval_scenes, cfg.max_subgroup)?;
            mpjpes.push(report.mpjpe_mm);
            depth_accs.push(report.depth_order_acc);
        }
        let mean = mpjpes.iter().sum::<f64>() / mpjpes.len() as f64;
        let mean_acc = depth_accs.iter().sum::<f64>() / depth_accs.len() as f64;
        rows.push(AblationRow {
            name: cell.name.clone(),
            seeds: seeds.to_vec(),
            mpjpe_mm_per_seed: mpjpes,
            mean_mpjpe_mm: mean,
            mean_depth_order_acc: mean_acc,
        });
    }
    Ok(rows)
}

/// Quick structural check that a freshly built model really silences the
/// branches a cell disables.
pub fn dead_branch_gradients_are_zero(cell: &AblationCell, base: &TrainConfig) -> Result<bool, TrainError> {
    use crate::diffcore::Graph;
    let mut cfg = base.clone();
    cell.apply(&mut cfg);
    let scene = crate::scenegen::generate_scene_with(
        cfg.scene_persons,
        cfg.scene_seed(7),
        &cfg.gen,
    )?;
    let model = Model::new(cfg.model.clone())?;
    let mut g = Graph::new();
    let persons: Vec<usize> = (0..scene.persons.len()).collect();
    let out = model.forward_group(&mut g, &scene, &persons, None)?;
    let grads = g.backward(out.total, &model.params)?;
    for (slot, p) in model.params.iter().enumerate() {
        let dead = (!cell.depth && (p.name.starts_with("enc.depth") || p.name.starts_with("proj.depth")))
            || (!cell.pose && (p.name.starts_with("enc.pose") || p.name.starts_with("proj.pose")))
            || (!cell.rgb && p.name.starts_with("proj.rgb"));
        if dead && grads.slot(slot).data().iter().any(|&v| v != 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}
