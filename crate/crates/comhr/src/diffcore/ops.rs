//! Operation kinds: forward evaluation and exact vector-Jacobian products.
//!
//! Every kind documents its dimension rules; there is no implicit
//! broadcasting. Nonlinear kinds with kinks (`Relu`, `MaskedMean`) report
//! branch bits so the gradient checker can skip kink-adjacent perturbations.

use super::error::{DiffError, DiffResult};
use super::tensor::Tensor;

/// The recorded operation set.
///
/// Dimension rules (R1 = rank-1, R2 = rank-2):
/// - `MatMul`: (m,k)x(k,n) -> (m,n)
/// - `Add`/`Sub`/`Mul`: elementwise, identical dims
/// - `Scale(c)`, `Offset(c)`: elementwise constant multiply / add
/// - `ScalarMul`: (scalar, x) -> x scaled by the scalar node
/// - `Relu`, `Exp`, `Log`: elementwise; `Log` rejects non-positive input
/// - `Concat{axis}`: n-ary; R1 axis 0, or R2 axis 0 (stack rows) / 1 (widen rows)
/// - `Slice{offset,dims}`: contiguous chunk of the flat data, re-dimmed
/// - `Reshape{dims}`: same data, new dims
/// - `Transpose`: R2
/// - `L2Normalize`: unit-normalizes each row (R2) or the whole vector (R1);
///   all-zero rows map to zero rows
/// - `Cosine`: cosine similarity of two equal-length tensors -> scalar;
///   zero on degenerate (zero-norm) input
/// - `Softmax{axis}`: R1, or R2 along `axis`
/// - `MaskedMean`: (features KxC or K, weights K) -> weighted mean over axis 0;
///   zero total weight yields zeros
/// - `Sum`, `Mean`: full reduction -> scalar
/// - `SquaredError`: mean of elementwise squared differences -> scalar
/// - `LayerNorm{eps}`: zero-mean unit-variance normalization over the last axis
/// - `Cross`: 3-vector cross product
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Offset(f64),
    ScalarMul,
    Relu,
    Exp,
    Log,
    Concat { axis: usize },
    Slice { offset: usize, dims: Vec<usize> },
    Reshape { dims: Vec<usize> },
    Transpose,
    L2Normalize,
    Cosine,
    Softmax { axis: usize },
    MaskedMean,
    Sum,
    Mean,
    SquaredError,
    LayerNorm { eps: f64 },
    Cross,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Offset(_) => "offset",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape { .. } => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::L2Normalize => "l2normalize",
            OpKind::Cosine => "cosine",
            OpKind::Softmax { .. } => "softmax",
            OpKind::MaskedMean => "masked_mean",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SquaredError => "squared_error",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Cross => "cross",
        }
    }
}

fn require_arity(op: &'static str, inputs: &[&Tensor], n: usize) -> DiffResult<()> {
    if inputs.len() != n {
        return Err(DiffError::BadOperand {
            op,
            dims: vec![inputs.len()],
            why: format!("expected {n} operands, got {}", inputs.len()),
        });
    }
    Ok(())
}

fn require_same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> DiffResult<()> {
    if a.dims() != b.dims() {
        return Err(DiffError::DimMismatch {
            op,
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    Ok(())
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul dims")
}

fn transpose_raw(a: &Tensor) -> Tensor {
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).expect("transpose dims")
}

/// Rows-of (rank-2) or whole-of (rank-1) view used by the per-row kinds.
fn row_view(t: &Tensor) -> (usize, usize) {
    match t.rank() {
        1 => (1, t.dims()[0]),
        _ => (t.dims()[0], t.dims()[1]),
    }
}

fn cross_raw(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Evaluates `kind` on `inputs`, returning the output tensor.
pub fn forward(kind: &OpKind, inputs: &[&Tensor]) -> DiffResult<Tensor> {
    match kind {
        OpKind::Leaf => {
            require_arity("leaf", inputs, 0)?;
            unreachable!("leaves are constructed directly");
        }
        OpKind::MatMul => {
            require_arity("matmul", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
                return Err(DiffError::DimMismatch {
                    op: "matmul",
                    lhs: a.dims().to_vec(),
                    rhs: b.dims().to_vec(),
                });
            }
            Ok(matmul_raw(a, b))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            require_arity(kind.name(), inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            require_same_dims(kind.name(), a, b)?;
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| match kind {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Tensor::new(a.dims().to_vec(), data)
        }
        OpKind::Scale(c) => {
            require_arity("scale", inputs, 1)?;
            Ok(inputs[0].scaled(*c))
        }
        OpKind::Offset(c) => {
            require_arity("offset", inputs, 1)?;
            Ok(inputs[0].map(|v| v + c))
        }
        OpKind::ScalarMul => {
            require_arity("scalar_mul", inputs, 2)?;
            let (s, x) = (inputs[0], inputs[1]);
            if !s.is_scalar() {
                return Err(DiffError::BadOperand {
                    op: "scalar_mul",
                    dims: s.dims().to_vec(),
                    why: "first operand must be a scalar".into(),
                });
            }
            Ok(x.scaled(s.item()))
        }
        OpKind::Relu => {
            require_arity("relu", inputs, 1)?;
            Ok(inputs[0].map(|v| if v > 0.0 { v } else { 0.0 }))
        }
        OpKind::Exp => {
            require_arity("exp", inputs, 1)?;
            Ok(inputs[0].map(f64::exp))
        }
        OpKind::Log => {
            require_arity("log", inputs, 1)?;
            if let Some((index, &value)) = inputs[0]
                .data()
                .iter()
                .enumerate()
                .find(|(_, v)| **v <= 0.0)
            {
                return Err(DiffError::NonPositiveLog { index, value });
            }
            Ok(inputs[0].map(f64::ln))
        }
        OpKind::Concat { axis } => {
            if inputs.is_empty() {
                return Err(DiffError::BadOperand {
                    op: "concat",
                    dims: vec![],
                    why: "needs at least one operand".into(),
                });
            }
            let rank = inputs[0].rank();
            if inputs.iter().any(|t| t.rank() != rank) || *axis >= rank {
                return Err(DiffError::BadOperand {
                    op: "concat",
                    dims: inputs[0].dims().to_vec(),
                    why: format!("axis {axis} invalid or mixed ranks"),
                });
            }
            match (rank, axis) {
                (1, _) => {
                    let mut data = Vec::new();
                    for t in inputs {
                        data.extend_from_slice(t.data());
                    }
                    Ok(Tensor::vector(data))
                }
                (2, 0) => {
                    let cols = inputs[0].dims()[1];
                    let mut data = Vec::new();
                    let mut rows = 0;
                    for t in inputs {
                        if t.dims()[1] != cols {
                            return Err(DiffError::DimMismatch {
                                op: "concat",
                                lhs: inputs[0].dims().to_vec(),
                                rhs: t.dims().to_vec(),
                            });
                        }
                        rows += t.dims()[0];
                        data.extend_from_slice(t.data());
                    }
                    Tensor::new(vec![rows, cols], data)
                }
                (2, 1) => {
                    let rows = inputs[0].dims()[0];
                    let mut cols = 0;
                    for t in inputs {
                        if t.dims()[0] != rows {
                            return Err(DiffError::DimMismatch {
                                op: "concat",
                                lhs: inputs[0].dims().to_vec(),
                                rhs: t.dims().to_vec(),
                            });
                        }
                        cols += t.dims()[1];
                    }
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for t in inputs {
                            data.extend_from_slice(t.row(r));
                        }
                    }
                    Tensor::new(vec![rows, cols], data)
                }
                _ => Err(DiffError::BadOperand {
                    op: "concat",
                    dims: inputs[0].dims().to_vec(),
                    why: "only rank-1 and rank-2 operands are supported".into(),
                }),
            }
        }
        OpKind::Slice { offset, dims } => {
            require_arity("slice", inputs, 1)?;
            let n: usize = dims.iter().product();
            if offset + n > inputs[0].numel() || n == 0 {
                return Err(DiffError::BadOperand {
                    op: "slice",
                    dims: inputs[0].dims().to_vec(),
                    why: format!("window [{offset}, {}) out of range", offset + n),
                });
            }
            Tensor::new(dims.clone(), inputs[0].data()[*offset..offset + n].to_vec())
        }
        OpKind::Reshape { dims } => {
            require_arity("reshape", inputs, 1)?;
            inputs[0].clone().reshaped(dims.clone())
        }
        OpKind::Transpose => {
            require_arity("transpose", inputs, 1)?;
            if inputs[0].rank() != 2 {
                return Err(DiffError::BadOperand {
                    op: "transpose",
                    dims: inputs[0].dims().to_vec(),
                    why: "requires rank 2".into(),
                });
            }
            Ok(transpose_raw(inputs[0]))
        }
        OpKind::L2Normalize => {
            require_arity("l2normalize", inputs, 1)?;
            let x = inputs[0];
            let (rows, cols) = row_view(x);
            let mut data = Vec::with_capacity(x.numel());
            for r in 0..rows {
                let row = &x.data()[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    data.extend(std::iter::repeat(0.0).take(cols));
                } else {
                    data.extend(row.iter().map(|v| v / norm));
                }
            }
            Tensor::new(x.dims().to_vec(), data)
        }
        OpKind::Cosine => {
            require_arity("cosine", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.numel() != b.numel() {
                return Err(DiffError::DimMismatch {
                    op: "cosine",
                    lhs: a.dims().to_vec(),
                    rhs: b.dims().to_vec(),
                });
            }
            let (na, nb) = (a.norm(), b.norm());
            let v = if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                a.dot(b) / (na * nb)
            };
            Ok(Tensor::scalar(v))
        }
        OpKind::Softmax { axis } => {
            require_arity("softmax", inputs, 1)?;
            softmax_forward(inputs[0], *axis)
        }
        OpKind::MaskedMean => {
            require_arity("masked_mean", inputs, 2)?;
            let (f, w) = (inputs[0], inputs[1]);
            let (k, c) = row_view(f);
            let k = if f.rank() == 1 { f.dims()[0] } else { k };
            let c = if f.rank() == 1 { 1 } else { c };
            if w.rank() != 1 || w.dims()[0] != k {
                return Err(DiffError::DimMismatch {
                    op: "masked_mean",
                    lhs: f.dims().to_vec(),
                    rhs: w.dims().to_vec(),
                });
            }
            let total: f64 = w.data().iter().sum();
            let mut out = vec![0.0; c];
            if total > 0.0 {
                for i in 0..k {
                    let wi = w.data()[i];
                    if wi == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        out[j] += wi * f.data()[i * c + j];
                    }
                }
                for v in out.iter_mut() {
                    *v /= total;
                }
            }
            Tensor::new(vec![c], out)
        }
        OpKind::Sum => {
            require_arity("sum", inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        OpKind::Mean => {
            require_arity("mean", inputs, 1)?;
            let n = inputs[0].numel() as f64;
            Ok(Tensor::scalar(inputs[0].data().iter().sum::<f64>() / n))
        }
        OpKind::SquaredError => {
            require_arity("squared_error", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            require_same_dims("squared_error", a, b)?;
            let n = a.numel() as f64;
            let v = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n;
            Ok(Tensor::scalar(v))
        }
        OpKind::LayerNorm { eps } => {
            require_arity("layer_norm", inputs, 1)?;
            let x = inputs[0];
            let (rows, cols) = row_view(x);
            let mut data = Vec::with_capacity(x.numel());
            for r in 0..rows {
                let row = &x.data()[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv = 1.0 / (var + eps).sqrt();
                data.extend(row.iter().map(|v| (v - mean) * inv));
            }
            Tensor::new(x.dims().to_vec(), data)
        }
        OpKind::Cross => {
            require_arity("cross", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.numel() != 3 || b.numel() != 3 {
                return Err(DiffError::DimMismatch {
                    op: "cross",
                    lhs: a.dims().to_vec(),
                    rhs: b.dims().to_vec(),
                });
            }
            Ok(Tensor::vector(cross_raw(a.data(), b.data()).to_vec()))
        }
    }
}

fn softmax_forward(x: &Tensor, axis: usize) -> DiffResult<Tensor> {
    let bad = |why: &str| DiffError::BadOperand {
        op: "softmax",
        dims: x.dims().to_vec(),
        why: why.into(),
    };
    match (x.rank(), axis) {
        (1, 0) => {
            let mut out = x.data().to_vec();
            softmax_slice(&mut out);
            Tensor::new(x.dims().to_vec(), out)
        }
        (2, 1) => {
            let (rows, cols) = (x.dims()[0], x.dims()[1]);
            let mut out = x.data().to_vec();
            for r in 0..rows {
                softmax_slice(&mut out[r * cols..(r + 1) * cols]);
            }
            Tensor::new(x.dims().to_vec(), out)
        }
        (2, 0) => {
            let t = transpose_raw(x);
            let s = softmax_forward(&t, 1)?;
            Ok(transpose_raw(&s))
        }
        _ => Err(bad("axis out of range for rank")),
    }
}

fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Computes per-input gradient contributions for `kind`, given the forward
/// `inputs`, the forward `output`, and the upstream gradient `g`.
pub fn vjp(kind: &OpKind, inputs: &[&Tensor], output: &Tensor, g: &Tensor) -> Vec<Tensor> {
    match kind {
        OpKind::Leaf => vec![],
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![
                matmul_raw(g, &transpose_raw(b)),
                matmul_raw(&transpose_raw(a), g),
            ]
        }
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Sub => vec![g.clone(), g.scaled(-1.0)],
        OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = Tensor::new(
                a.dims().to_vec(),
                g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
            )
            .unwrap();
            let db = Tensor::new(
                b.dims().to_vec(),
                g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect(),
            )
            .unwrap();
            vec![da, db]
        }
        OpKind::Scale(c) => vec![g.scaled(*c)],
        OpKind::Offset(_) => vec![g.clone()],
        OpKind::ScalarMul => {
            let (s, x) = (inputs[0], inputs[1]);
            vec![Tensor::scalar(g.dot(x)), g.scaled(s.item())]
        }
        OpKind::Relu => {
            let x = inputs[0];
            vec![Tensor::new(
                x.dims().to_vec(),
                g.data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )
            .unwrap()]
        }
        OpKind::Exp => {
            // d exp(x) = exp(x); reuse the stored output.
            vec![Tensor::new(
                output.dims().to_vec(),
                g.data()
                    .iter()
                    .zip(output.data())
                    .map(|(gv, ov)| gv * ov)
                    .collect(),
            )
            .unwrap()]
        }
        OpKind::Log => {
            let x = inputs[0];
            vec![Tensor::new(
                x.dims().to_vec(),
                g.data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| gv / xv)
                    .collect(),
            )
            .unwrap()]
        }
        OpKind::Concat { axis } => {
            let rank = inputs[0].rank();
            match (rank, axis) {
                (1, _) | (2, 0) => {
                    let mut grads = Vec::with_capacity(inputs.len());
                    let mut at = 0;
                    for t in inputs {
                        let n = t.numel();
                        grads.push(
                            Tensor::new(t.dims().to_vec(), g.data()[at..at + n].to_vec()).unwrap(),
                        );
                        at += n;
                    }
                    grads
                }
                (2, 1) => {
                    let rows = inputs[0].dims()[0];
                    let gcols = g.dims()[1];
                    let mut grads: Vec<Tensor> =
                        inputs.iter().map(|t| Tensor::zeros(t.dims())).collect();
                    for r in 0..rows {
                        let mut at = r * gcols;
                        for (ti, t) in inputs.iter().enumerate() {
                            let w = t.dims()[1];
                            let dst = &mut grads[ti].data_mut()[r * w..(r + 1) * w];
                            dst.copy_from_slice(&g.data()[at..at + w]);
                            at += w;
                        }
                    }
                    grads
                }
                _ => unreachable!("validated in forward"),
            }
        }
        OpKind::Slice { offset, dims } => {
            let n: usize = dims.iter().product();
            let mut dx = Tensor::zeros(inputs[0].dims());
            dx.data_mut()[*offset..offset + n].copy_from_slice(g.data());
            vec![dx]
        }
        OpKind::Reshape { .. } => {
            vec![Tensor::new(inputs[0].dims().to_vec(), g.data().to_vec()).unwrap()]
        }
        OpKind::Transpose => vec![transpose_raw(g)],
        OpKind::L2Normalize => {
            let x = inputs[0];
            let (rows, cols) = row_view(x);
            let mut dx = Tensor::zeros(x.dims());
            for r in 0..rows {
                let row = &x.data()[r * cols..(r + 1) * cols];
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                let y = &output.data()[r * cols..(r + 1) * cols];
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let yg: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                let dst = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    dst[j] = (gr[j] - y[j] * yg) / norm;
                }
            }
            vec![dx]
        }
        OpKind::Cosine => {
            let (a, b) = (inputs[0], inputs[1]);
            let (na, nb) = (a.norm(), b.norm());
            if na == 0.0 || nb == 0.0 {
                return vec![Tensor::zeros(a.dims()), Tensor::zeros(b.dims())];
            }
            let c = output.item();
            let gs = g.item();
            let mut da = Tensor::zeros(a.dims());
            let mut db = Tensor::zeros(b.dims());
            for i in 0..a.numel() {
                da.data_mut()[i] = gs * (b.data()[i] / (na * nb) - c * a.data()[i] / (na * na));
                db.data_mut()[i] = gs * (a.data()[i] / (na * nb) - c * b.data()[i] / (nb * nb));
            }
            vec![da, db]
        }
        OpKind::Softmax { axis } => {
            let x = inputs[0];
            let mut dx = Tensor::zeros(x.dims());
            match (x.rank(), axis) {
                (1, 0) => {
                    softmax_vjp_slice(output.data(), g.data(), dx.data_mut());
                }
                (2, 1) => {
                    let (rows, cols) = (x.dims()[0], x.dims()[1]);
                    for r in 0..rows {
                        softmax_vjp_slice(
                            &output.data()[r * cols..(r + 1) * cols],
                            &g.data()[r * cols..(r + 1) * cols],
                            &mut dx.data_mut()[r * cols..(r + 1) * cols],
                        );
                    }
                }
                (2, 0) => {
                    let yt = transpose_raw(output);
                    let gt = transpose_raw(g);
                    let (rows, cols) = (yt.dims()[0], yt.dims()[1]);
                    let mut dt = Tensor::zeros(yt.dims());
                    for r in 0..rows {
                        softmax_vjp_slice(
                            &yt.data()[r * cols..(r + 1) * cols],
                            &gt.data()[r * cols..(r + 1) * cols],
                            &mut dt.data_mut()[r * cols..(r + 1) * cols],
                        );
                    }
                    dx = transpose_raw(&dt);
                }
                _ => unreachable!("validated in forward"),
            }
            vec![dx]
        }
        OpKind::MaskedMean => {
            let (f, w) = (inputs[0], inputs[1]);
            let k = w.dims()[0];
            let c = f.numel() / k;
            let total: f64 = w.data().iter().sum();
            let mut df = Tensor::zeros(f.dims());
            let mut dw = Tensor::zeros(w.dims());
            if total > 0.0 {
                for i in 0..k {
                    let wi = w.data()[i];
                    let mut acc = 0.0;
                    for j in 0..c {
                        let gj = g.data()[j];
                        df.data_mut()[i * c + j] = gj * wi / total;
                        acc += gj * (f.data()[i * c + j] - output.data()[j]);
                    }
                    dw.data_mut()[i] = acc / total;
                }
            }
            vec![df, dw]
        }
        OpKind::Sum => {
            vec![Tensor::full(inputs[0].dims(), g.item())]
        }
        OpKind::Mean => {
            let n = inputs[0].numel() as f64;
            vec![Tensor::full(inputs[0].dims(), g.item() / n)]
        }
        OpKind::SquaredError => {
            let (a, b) = (inputs[0], inputs[1]);
            let n = a.numel() as f64;
            let s = 2.0 * g.item() / n;
            let mut da = Tensor::zeros(a.dims());
            let mut db = Tensor::zeros(b.dims());
            for i in 0..a.numel() {
                let d = s * (a.data()[i] - b.data()[i]);
                da.data_mut()[i] = d;
                db.data_mut()[i] = -d;
            }
            vec![da, db]
        }
        OpKind::LayerNorm { eps } => {
            let x = inputs[0];
            let (rows, cols) = row_view(x);
            let nc = cols as f64;
            let mut dx = Tensor::zeros(x.dims());
            for r in 0..rows {
                let row = &x.data()[r * cols..(r + 1) * cols];
                let y = &output.data()[r * cols..(r + 1) * cols];
                let gr = &g.data()[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / nc;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nc;
                let inv = 1.0 / (var + eps).sqrt();
                let gmean = gr.iter().sum::<f64>() / nc;
                let gymean = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / nc;
                let dst = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                for j in 0..cols {
                    dst[j] = inv * (gr[j] - gmean - y[j] * gymean);
                }
            }
            vec![dx]
        }
        OpKind::Cross => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = cross_raw(b.data(), g.data());
            let db = cross_raw(g.data(), a.data());
            vec![
                Tensor::new(a.dims().to_vec(), da.to_vec()).unwrap(),
                Tensor::new(b.dims().to_vec(), db.to_vec()).unwrap(),
            ]
        }
    }
}

fn softmax_vjp_slice(y: &[f64], g: &[f64], dx: &mut [f64]) {
    let gy: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for j in 0..y.len() {
        dx[j] = y[j] * (g[j] - gy);
    }
}

/// Pushes the branch bits of one op application onto `bits`.
///
/// Relu contributes one bit per element (active side of the kink);
/// MaskedMean contributes the empty-support bit. Smooth kinds contribute
/// nothing. Perturbations that flip any bit have crossed a kink and are
/// excluded from finite-difference comparisons.
pub fn branch_bits(kind: &OpKind, inputs: &[&Tensor], bits: &mut Vec<bool>) {
    match kind {
        OpKind::Relu => bits.extend(inputs[0].data().iter().map(|v| *v > 0.0)),
        OpKind::MaskedMean => bits.push(inputs[1].data().iter().sum::<f64>() > 0.0),
        _ => {}
    }
}
