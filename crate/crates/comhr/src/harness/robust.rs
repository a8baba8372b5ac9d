//! Robustness suite: evaluates a trained model on clean scenes and under
//! each observation corruption, reporting metric deltas.

use serde::Serialize;

use crate::model::Model;
use crate::scenegen::{perturb, PerturbationSpec, Scene};

use super::metrics::evaluate;
use super::TrainError;

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessRow {
    pub name: String,
    pub mpjpe_mm: f64,
    pub delta_mpjpe_mm: f64,
    pub depth_order_acc: f64,
    pub delta_depth_order_acc: f64,
}

/// Clean baseline first, then one row per perturbation.
pub fn run_robustness(
    model: &Model,
    scenes: &[Scene],
    suite: &[PerturbationSpec],
    max_subgroup: usize,
) -> Result<Vec<RobustnessRow>, TrainError> {
    let clean = evaluate(model, scenes, max_subgroup)?;
    let mut rows = vec![RobustnessRow {
        name: "clean".to_string(),
        mpjpe_mm: clean.mpjpe_mm,
        delta_mpjpe_mm: 0.0,
        depth_order_acc: clean.depth_order_acc,
        delta_depth_order_acc: 0.0,
    }];

    for spec in suite {
        let degraded: Vec<Scene> = scenes
            .iter()
            .map(|s| perturb(s, spec))
            .collect::<Result<_, _>>()?;
        let report = evaluate(model, &degraded, max_subgroup)?;
        rows.push(RobustnessRow {
            name: spec.kind_name().to_string(),
            mpjpe_mm: report.mpjpe_mm,
            delta_mpjpe_mm: report.mpjpe_mm - clean.mpjpe_mm,
            depth_order_acc: report.depth_order_acc,
            delta_depth_order_acc: report.depth_order_acc - clean.depth_order_acc,
        });
    }
    Ok(rows)
}
