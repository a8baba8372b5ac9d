//! Gradient checks above the op level: the two contrastive losses over
//! random instances, and the full composite objective through the entire
//! model with the topology frozen at the evaluation point.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contrast::{cross_loss, intra_loss, ContrastConfig, PositiveSets};
use crate::diffcore::{
    gradcheck, DiffResult, Evaluation, GradCheckOpts, GradCheckReport, Graph, OpCheckReport,
    ParamSet, Tensor,
};
use crate::model::Model;
use crate::scenegen::Scene;

fn random_embeddings(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::new(
        vec![n, d],
        (0..n * d)
            .map(|_| {
                let mag = rng.gen_range(0.3..1.5);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect(),
    )
    .unwrap()
}

fn random_positive_sets(rng: &mut ChaCha8Rng, n: usize) -> PositiveSets {
    loop {
        let sets: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && rng.gen_bool(0.45)).collect())
            .collect();
        if sets.iter().any(|s| !s.is_empty()) {
            return PositiveSets {
                sets,
                eps_mpjpe: 0.15,
            };
        }
    }
}

/// Central-difference check of the intra-modal clustering loss over random
/// embeddings and positive sets.
pub fn gradcheck_intra_loss(
    instances: usize,
    seed: u64,
    opts: GradCheckOpts,
) -> DiffResult<OpCheckReport> {
    let cfg = ContrastConfig::default();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;

    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((inst as u64) << 13) ^ 0x1a7a);
        let n = rng.gen_range(3..6);
        let d = rng.gen_range(3..6);
        let h = random_embeddings(&mut rng, n, d);
        let positives = random_positive_sets(&mut rng, n);

        let report = gradcheck(
            |values: &[Tensor]| -> DiffResult<Evaluation> {
                let mut ps = ParamSet::new();
                ps.insert("h", values[0].clone())?;
                let mut g = Graph::new();
                let hn = g.param(&ps, 0);
                let (loss, _) = intra_loss(&mut g, hn, &positives, &cfg)?;
                let value = g.value(loss).item();
                let grads = g.backward(loss, &ps)?.into_vec();
                Ok(Evaluation {
                    value,
                    grads,
                    signature: g.signature().clone(),
                })
            },
            &[("h".to_string(), h)],
            opts,
        )?;
        max_rel = max_rel.max(report.max_rel_err);
        for p in &report.params {
            checked += p.checked;
            skipped += p.skipped;
        }
    }

    Ok(OpCheckReport {
        op: "intra_loss".to_string(),
        instances,
        max_rel_err: max_rel,
        elements_checked: checked,
        elements_skipped: skipped,
        tol: opts.tol,
    })
}

/// Central-difference check of the cross-modal orthogonality hinge.
pub fn gradcheck_cross_loss(
    instances: usize,
    seed: u64,
    opts: GradCheckOpts,
) -> DiffResult<OpCheckReport> {
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;

    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((inst as u64) << 13) ^ 0xc805);
        let n = rng.gen_range(2..5);
        let d = rng.gen_range(3..6);
        let params: Vec<(String, Tensor)> = ["rgb", "depth", "pose"]
            .iter()
            .map(|m| (m.to_string(), random_embeddings(&mut rng, n, d)))
            .collect();

        let report = gradcheck(
            |values: &[Tensor]| -> DiffResult<Evaluation> {
                let mut ps = ParamSet::new();
                for (i, v) in values.iter().enumerate() {
                    ps.insert(["rgb", "depth", "pose"][i], v.clone())?;
                }
                let mut g = Graph::new();
                let r = g.param(&ps, 0);
                let d = g.param(&ps, 1);
                let p = g.param(&ps, 2);
                let loss = cross_loss(&mut g, r, d, p)?;
                let value = g.value(loss).item();
                let grads = g.backward(loss, &ps)?.into_vec();
                Ok(Evaluation {
                    value,
                    grads,
                    signature: g.signature().clone(),
                })
            },
            &params,
            opts,
        )?;
        max_rel = max_rel.max(report.max_rel_err);
        for p in &report.params {
            checked += p.checked;
            skipped += p.skipped;
        }
    }

    Ok(OpCheckReport {
        op: "cross_loss".to_string(),
        instances,
        max_rel_err: max_rel,
        elements_checked: checked,
        elements_skipped: skipped,
        tol: opts.tol,
    })
}

/// Central-difference check of the composite objective through the full
/// pipeline (embeddings, frozen topology, reasoning, regression, losses)
/// against every model parameter element.
pub fn gradcheck_model(
    model: &Model,
    scene: &Scene,
    persons: &[usize],
    opts: GradCheckOpts,
) -> DiffResult<GradCheckReport> {
    // Freeze the discrete neighbor selection at the evaluation point.
    let incidence = {
        let mut g = Graph::inference();
        model
            .forward_group(&mut g, scene, persons, None)
            .expect("center forward")
            .incidence
    };

    let params: Vec<(String, Tensor)> = model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();

    gradcheck(
        |values: &[Tensor]| -> DiffResult<Evaluation> {
            let mut ps = ParamSet::new();
            for ((name, _), v) in params.iter().zip(values) {
                ps.insert(name, v.clone())?;
            }
            let mut g = Graph::new();
            let out = model
                .forward_group_with(&mut g, &ps, scene, persons, Some(&incidence))
                .map_err(|e| match e {
                    crate::model::ModelError::Diff(d) => d,
                    other => panic!("non-differentiation failure in gradcheck: {other}"),
                })?;
            let value = g.value(out.total).item();
            let grads = g.backward(out.total, &ps)?.into_vec();
            Ok(Evaluation {
                value,
                grads,
                signature: g.signature().clone(),
            })
        },
        &params,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_losses_pass_quick_checks() {
        let opts = GradCheckOpts::default();
        let intra = gradcheck_intra_loss(10, 3, opts).unwrap();
        assert!(intra.passed(), "intra max rel err {:e}", intra.max_rel_err);
        assert!(intra.elements_checked > 0);
        let cross = gradcheck_cross_loss(10, 3, opts).unwrap();
        assert!(cross.passed(), "cross max rel err {:e}", cross.max_rel_err);
        assert!(cross.elements_checked > 0);
    }
}
