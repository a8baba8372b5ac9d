//! Randomized per-operation gradient verification.
//!
//! For each differentiable op kind this builds random instances (random
//! dims, random inputs drawn from the op's valid domain), scalarizes the
//! output with a fixed random weighting so every output element carries a
//! distinct upstream gradient, and runs the central-difference check with
//! all op inputs treated as parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::error::DiffResult;
use super::gradcheck::{gradcheck, Evaluation, GradCheckOpts};
use super::graph::{Graph, ParamSet};
use super::ops::OpKind;
use super::tensor::Tensor;

/// Every op kind subject to gradient verification.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "offset",
    "scalar_mul",
    "relu",
    "exp",
    "log",
    "concat",
    "slice",
    "reshape",
    "transpose",
    "l2normalize",
    "cosine",
    "softmax",
    "masked_mean",
    "sum",
    "mean",
    "squared_error",
    "layer_norm",
    "cross",
];

/// Outcome of checking one op kind over many random instances.
#[derive(Clone, Debug)]
pub struct OpCheckReport {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub elements_checked: usize,
    pub elements_skipped: usize,
    pub tol: f64,
}

impl OpCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let mag = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn tensor_signed(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| signed(rng, lo, hi)).collect()).unwrap()
}

fn tensor_positive(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(
        dims.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn small(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(2..6)
}

/// One random instance: input tensors and the concrete op kind to apply.
fn sample_instance(op: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, OpKind) {
    match op {
        "matmul" => {
            let (m, k, n) = (small(rng), small(rng), small(rng));
            (
                vec![
                    tensor_signed(rng, &[m, k], 0.1, 1.5),
                    tensor_signed(rng, &[k, n], 0.1, 1.5),
                ],
                OpKind::MatMul,
            )
        }
        "add" | "sub" | "mul" => {
            let dims = [small(rng), small(rng)];
            let kind = match op {
                "add" => OpKind::Add,
                "sub" => OpKind::Sub,
                _ => OpKind::Mul,
            };
            (
                vec![
                    tensor_signed(rng, &dims, 0.1, 1.5),
                    tensor_signed(rng, &dims, 0.1, 1.5),
                ],
                kind,
            )
        }
        "scale" => {
            let dims = [small(rng)];
            let c = signed(rng, 0.2, 2.0);
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Scale(c))
        }
        "offset" => {
            let dims = [small(rng)];
            let c = signed(rng, 0.2, 2.0);
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Offset(c))
        }
        "scalar_mul" => {
            let dims = [small(rng), small(rng)];
            (
                vec![
                    Tensor::scalar(signed(rng, 0.2, 1.5)),
                    tensor_signed(rng, &dims, 0.1, 1.5),
                ],
                OpKind::ScalarMul,
            )
        }
        "relu" => {
            let dims = [small(rng), small(rng)];
            (vec![tensor_signed(rng, &dims, 0.05, 1.5)], OpKind::Relu)
        }
        "exp" => {
            let dims = [small(rng)];
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Exp)
        }
        "log" => {
            let dims = [small(rng)];
            (vec![tensor_positive(rng, &dims, 0.3, 2.5)], OpKind::Log)
        }
        "concat" => {
            let parts = rng.gen_range(2..4);
            if rng.gen_bool(0.5) {
                let cols = small(rng);
                (
                    (0..parts)
                        .map(|_| {
                            let rows = small(rng);
                            tensor_signed(rng, &[rows, cols], 0.1, 1.5)
                        })
                        .collect(),
                    OpKind::Concat { axis: 0 },
                )
            } else {
                let rows = small(rng);
                (
                    (0..parts)
                        .map(|_| {
                            let cols = small(rng);
                            tensor_signed(rng, &[rows, cols], 0.1, 1.5)
                        })
                        .collect(),
                    OpKind::Concat { axis: 1 },
                )
            }
        }
        "slice" => {
            let n = rng.gen_range(4..9);
            let len = rng.gen_range(1..=n - 1);
            let offset = rng.gen_range(0..=n - len);
            let dims = [n];
            (
                vec![tensor_signed(rng, &dims, 0.1, 1.5)],
                OpKind::Slice {
                    offset,
                    dims: vec![len],
                },
            )
        }
        "reshape" => {
            let (m, n) = (small(rng), small(rng));
            (
                vec![tensor_signed(rng, &[m, n], 0.1, 1.5)],
                OpKind::Reshape { dims: vec![n, m] },
            )
        }
        "transpose" => {
            let dims = [small(rng), small(rng)];
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Transpose)
        }
        "l2normalize" => {
            // Magnitudes bounded away from zero keep row norms well above h.
            let dims = [small(rng), small(rng)];
            (vec![tensor_signed(rng, &dims, 0.4, 1.6)], OpKind::L2Normalize)
        }
        "cosine" => {
            let d = small(rng);
            (
                vec![
                    tensor_signed(rng, &[d], 0.4, 1.6),
                    tensor_signed(rng, &[d], 0.4, 1.6),
                ],
                OpKind::Cosine,
            )
        }
        "softmax" => {
            let axis = rng.gen_range(0..2);
            let dims = [small(rng), small(rng)];
            (
                vec![tensor_signed(rng, &dims, 0.1, 2.0)],
                OpKind::Softmax { axis },
            )
        }
        "masked_mean" => {
            let (k, c) = (small(rng), small(rng));
            (
                vec![
                    tensor_signed(rng, &[k, c], 0.1, 1.5),
                    tensor_positive(rng, &[k], 0.2, 1.0),
                ],
                OpKind::MaskedMean,
            )
        }
        "sum" => {
            let dims = [small(rng), small(rng)];
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Sum)
        }
        "mean" => {
            let dims = [small(rng)];
            (vec![tensor_signed(rng, &dims, 0.1, 1.5)], OpKind::Mean)
        }
        "squared_error" => {
            let dims = [small(rng), small(rng)];
            (
                vec![
                    tensor_signed(rng, &dims, 0.1, 1.5),
                    tensor_signed(rng, &dims, 0.1, 1.5),
                ],
                OpKind::SquaredError,
            )
        }
        "layer_norm" => {
            let dims = [small(rng), rng.gen_range(3..6)];
            (
                vec![tensor_signed(rng, &dims, 0.2, 2.0)],
                OpKind::LayerNorm { eps: 1e-6 },
            )
        }
        "cross" => (
            vec![
                tensor_signed(rng, &[3], 0.2, 1.5),
                tensor_signed(rng, &[3], 0.2, 1.5),
            ],
            OpKind::Cross,
        ),
        other => panic!("unknown op name {other:?}"),
    }
}

/// Gradchecks one op kind over `instances` random instances.
pub fn check_op(
    op: &str,
    instances: usize,
    seed: u64,
    opts: GradCheckOpts,
) -> DiffResult<OpCheckReport> {
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;

    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((inst as u64) << 17) ^ hash_name(op));
        let (inputs, kind) = sample_instance(op, &mut rng);

        // Fixed random weighting makes every output element observable in
        // the scalar loss with a distinct coefficient.
        let out_dims = {
            let refs: Vec<&Tensor> = inputs.iter().collect();
            super::ops::forward(&kind, &refs)?.dims().to_vec()
        };
        let weight = tensor_signed(&mut rng, &out_dims, 0.5, 1.5);

        let params: Vec<(String, Tensor)> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("in{i}"), t.clone()))
            .collect();

        let kind_ref = &kind;
        let weight_ref = &weight;
        let report = gradcheck(
            |values: &[Tensor]| -> DiffResult<Evaluation> {
                let mut ps = ParamSet::new();
                for (i, v) in values.iter().enumerate() {
                    ps.insert(&format!("in{i}"), v.clone())?;
                }
                let mut g = Graph::new();
                let ids: Vec<_> = (0..values.len()).map(|i| g.param(&ps, i)).collect();
                let out = g.apply(kind_ref.clone(), &ids)?;
                let w = g.constant(weight_ref.clone());
                let weighted = g.mul(out, w)?;
                let loss = g.sum(weighted)?;
                let value = g.value(loss).item();
                let grads = g.backward(loss, &ps)?.into_vec();
                let signature = g.signature().clone();
                Ok(Evaluation {
                    value,
                    grads,
                    signature,
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
        op: op.to_string(),
        instances,
        max_rel_err: max_rel,
        elements_checked: checked,
        elements_skipped: skipped,
        tol: opts.tol,
    })
}

fn hash_name(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
        })
}
