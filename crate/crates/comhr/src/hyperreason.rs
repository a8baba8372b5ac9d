//! Two-stage hypergraph message passing over the shared topology, run
//! independently per modality branch with modality-specific weights.
//!
//! Stage one aggregates node features into hyperedge features,
//! `F = relu(H^T (h W_agg))`; stage two propagates them back,
//! `h~ = relu(H (F W_update))`. Sums are unnormalized by default; degree
//! averaging and a residual connection sit behind config flags.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffResult, Graph, NodeId, ParamSet, Tensor};
use crate::hypertopo::Incidence;

pub const MODALITIES: [&str; 3] = ["rgb", "depth", "pose"];

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonConfig {
    /// Rounds of the two-stage update.
    pub rounds: usize,
    /// Average instead of sum inside both stages.
    pub degree_normalize: bool,
    /// Add the stage input back onto the stage-two output.
    pub residual: bool,
}

impl Default for ReasonConfig {
    fn default() -> Self {
        ReasonConfig {
            rounds: 1,
            degree_normalize: false,
            residual: false,
        }
    }
}

/// Refined per-modality embeddings, same dims as the inputs.
pub struct RefinedEmbeddings {
    pub rgb: NodeId,
    pub depth: NodeId,
    pub pose: NodeId,
}

fn he_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    use rand::Rng;
    let std = (2.0 / rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("init dims")
}

/// Registers `W_agg` and `W_update` for each modality branch.
pub fn register_params(
    ps: &mut ParamSet,
    latent_dim: usize,
    rng: &mut ChaCha8Rng,
) -> DiffResult<()> {
    for m in MODALITIES {
        ps.insert(&format!("reason.{m}.w_agg"), he_normal(rng, latent_dim, latent_dim))?;
        ps.insert(
            &format!("reason.{m}.w_update"),
            he_normal(rng, latent_dim, latent_dim),
        )?;
    }
    Ok(())
}

fn incidence_constants(
    g: &mut Graph,
    incidence: &Incidence,
    normalize: bool,
) -> (NodeId, NodeId) {
    let n = incidence.n();
    let h = &incidence.matrix;
    for i in 0..n {
        let row_deg: f64 = (0..n).map(|j| h.at2(i, j)).sum();
        assert!(row_deg > 0.0, "node {i} belongs to no hyperedge");
    }
    if !normalize {
        let c = g.constant(h.clone());
        return (c, c);
    }
    // Column-scaled copy for edge aggregation, row-scaled for node update.
    let mut by_edge = h.clone();
    let mut by_node = h.clone();
    for i in 0..n {
        let col_deg: f64 = (0..n).map(|j| h.at2(j, i)).sum();
        let row_deg: f64 = (0..n).map(|j| h.at2(i, j)).sum();
        for j in 0..n {
            by_edge.set2(j, i, h.at2(j, i) / col_deg);
            by_node.set2(i, j, h.at2(i, j) / row_deg);
        }
    }
    (g.constant(by_edge), g.constant(by_node))
}

/// Node-to-hyperedge aggregation: `F = relu(H^T (h W_agg))`.
fn node_to_edge_with(
    g: &mut Graph,
    h_nodes: NodeId,
    h_for_edges: NodeId,
    w_agg: NodeId,
) -> DiffResult<NodeId> {
    let hw = g.matmul(h_nodes, w_agg)?;
    let ht = g.transpose(h_for_edges)?;
    let agg = g.matmul(ht, hw)?;
    g.relu(agg)
}

/// Hyperedge-to-node update: `h~ = relu(H (F W_update))`.
fn edge_to_node_with(
    g: &mut Graph,
    edge_features: NodeId,
    h_for_nodes: NodeId,
    w_update: NodeId,
) -> DiffResult<NodeId> {
    let fw = g.matmul(edge_features, w_update)?;
    let upd = g.matmul(h_for_nodes, fw)?;
    g.relu(upd)
}

/// One-off stage wrappers over a raw incidence matrix (unnormalized sums).
pub fn node_to_edge(
    g: &mut Graph,
    h_nodes: NodeId,
    incidence: &Incidence,
    w_agg: NodeId,
) -> DiffResult<NodeId> {
    let (by_edge, _) = incidence_constants(g, incidence, false);
    node_to_edge_with(g, h_nodes, by_edge, w_agg)
}

pub fn edge_to_node(
    g: &mut Graph,
    edge_features: NodeId,
    incidence: &Incidence,
    w_update: NodeId,
) -> DiffResult<NodeId> {
    let (_, by_node) = incidence_constants(g, incidence, false);
    edge_to_node_with(g, edge_features, by_node, w_update)
}

/// Runs the configured rounds of both stages for one branch.
pub fn reason_branch(
    g: &mut Graph,
    ps: &ParamSet,
    modality: &str,
    mut h: NodeId,
    incidence: &Incidence,
    cfg: &ReasonConfig,
) -> DiffResult<NodeId> {
    let w_agg = g.param_named(ps, &format!("reason.{modality}.w_agg"))?;
    let w_update = g.param_named(ps, &format!("reason.{modality}.w_update"))?;
    let (by_edge, by_node) = incidence_constants(g, incidence, cfg.degree_normalize);
    for _ in 0..cfg.rounds {
        let edges = node_to_edge_with(g, h, by_edge, w_agg)?;
        let refined = edge_to_node_with(g, edges, by_node, w_update)?;
        h = if cfg.residual {
            g.add(h, refined)?
        } else {
            refined
        };
    }
    Ok(h)
}

/// High-order reasoning across all three branches with one shared topology.
pub fn reason(
    g: &mut Graph,
    ps: &ParamSet,
    h_rgb: NodeId,
    h_depth: NodeId,
    h_pose: NodeId,
    incidence: &Incidence,
    cfg: &ReasonConfig,
) -> DiffResult<RefinedEmbeddings> {
    Ok(RefinedEmbeddings {
        rgb: reason_branch(g, ps, "rgb", h_rgb, incidence, cfg)?,
        depth: reason_branch(g, ps, "depth", h_depth, incidence, cfg)?,
        pose: reason_branch(g, ps, "pose", h_pose, incidence, cfg)?,
    })
}
