//! Central-difference verification of analytic gradients.
//!
//! The harness perturbs every parameter element by `±h`, compares
//! `(f(x+h) - f(x-h)) / 2h` against the analytic gradient, and reports the
//! maximum relative error per parameter with
//! `rel = |a - n| / max(1e-8, |a| + |n|)`.
//!
//! Perturbations whose branch signature differs from the unperturbed pass
//! have crossed a kink (a ReLU boundary, an empty-support mask, or a
//! caller-recorded degenerate branch); central differences are meaningless
//! there, so those elements are counted as skipped instead of compared.

use super::error::{DiffError, DiffResult};
use super::graph::Signature;
use super::tensor::Tensor;

/// Step size and tolerance for a gradcheck run.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOpts {
    pub step: f64,
    pub tol: f64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            step: 1e-3,
            tol: 1e-4,
        }
    }
}

/// One evaluation of the function under test at a given parameter point.
pub struct Evaluation {
    pub value: f64,
    /// Analytic gradients, aligned with the parameter list.
    pub grads: Vec<Tensor>,
    pub signature: Signature,
}

/// Per-parameter comparison outcome.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped: usize,
}

/// Result of a full gradcheck sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, a.abs() + n.abs())
}

/// Checks the analytic gradients of `f` at the point given by `params`.
///
/// `f` must map a parameter vector to a scalar, returning its value,
/// analytic gradients, and branch signature; it is re-invoked at `±h`
/// around every element.
pub fn gradcheck<F>(
    mut f: F,
    params: &[(String, Tensor)],
    opts: GradCheckOpts,
) -> DiffResult<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> DiffResult<Evaluation>,
{
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let center = f(&values)?;
    if !center.value.is_finite() {
        return Err(DiffError::NonFiniteEval {
            param: "<unperturbed>".into(),
            index: 0,
            delta: 0.0,
        });
    }

    let h = opts.step;
    let mut reports = Vec::with_capacity(params.len());
    let mut global_max = 0.0f64;

    for (pi, (name, _)) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut worst = 0;
        let mut checked = 0;
        let mut skipped = 0;

        for j in 0..values[pi].numel() {
            let orig = values[pi].data()[j];

            values[pi].data_mut()[j] = orig + h;
            let plus = f(&values)?;
            if !plus.value.is_finite() {
                return Err(DiffError::NonFiniteEval {
                    param: name.clone(),
                    index: j,
                    delta: h,
                });
            }

            values[pi].data_mut()[j] = orig - h;
            let minus = f(&values)?;
            if !minus.value.is_finite() {
                return Err(DiffError::NonFiniteEval {
                    param: name.clone(),
                    index: j,
                    delta: -h,
                });
            }

            values[pi].data_mut()[j] = orig;

            if plus.signature != center.signature || minus.signature != center.signature {
                skipped += 1;
                continue;
            }

            let numeric = (plus.value - minus.value) / (2.0 * h);
            let analytic = center.grads[pi].data()[j];
            let rel = rel_err(analytic, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = j;
            }
            checked += 1;
        }

        global_max = global_max.max(max_rel);
        reports.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
            worst_index: worst,
            checked,
            skipped,
        });
    }

    Ok(GradCheckReport {
        params: reports,
        max_rel_err: global_max,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::graph::{Graph, ParamSet};

    /// Evaluates a closure that builds a graph loss from bound parameters.
    pub(crate) fn eval_graph<F>(values: &[Tensor], build: F) -> DiffResult<Evaluation>
    where
        F: FnOnce(&mut Graph, &[crate::diffcore::graph::NodeId]) -> DiffResult<crate::diffcore::graph::NodeId>,
    {
        let mut ps = ParamSet::new();
        for (i, v) in values.iter().enumerate() {
            ps.insert(&format!("p{i}"), v.clone())?;
        }
        let mut g = Graph::new();
        let ids: Vec<_> = (0..values.len()).map(|i| g.param(&ps, i)).collect();
        let loss = build(&mut g, &ids)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss, &ps)?.into_vec();
        let signature = g.signature().clone();
        Ok(Evaluation {
            value,
            grads,
            signature,
        })
    }

    #[test]
    fn square_at_three() {
        // f = x^2 at x=3: analytic 6, numeric 6 within 1e-6.
        let params = vec![("x".to_string(), Tensor::scalar(3.0))];
        let report = gradcheck(
            |vals| eval_graph(vals, |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.sum(sq)
            }),
            &params,
            GradCheckOpts::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_err < 1e-6);
    }

    #[test]
    fn relu_kink_is_skipped() {
        // x sits closer to the kink than the step: both perturbations land
        // on different sides, so the element must be skipped, not failed.
        let params = vec![("x".to_string(), Tensor::scalar(5e-4))];
        let report = gradcheck(
            |vals| eval_graph(vals, |g, ids| {
                let r = g.relu(ids[0])?;
                g.sum(r)
            }),
            &params,
            GradCheckOpts::default(),
        )
        .unwrap();
        assert_eq!(report.params[0].skipped, 1);
        assert_eq!(report.params[0].checked, 0);
    }

    #[test]
    fn non_finite_eval_is_reported() {
        let params = vec![("x".to_string(), Tensor::scalar(2.0))];
        let err = gradcheck(
            |vals| {
                let v = vals[0].item();
                Ok(Evaluation {
                    value: if v > 2.0 { f64::NAN } else { v },
                    grads: vec![Tensor::scalar(1.0)],
                    signature: Signature::default(),
                })
            },
            &params,
            GradCheckOpts::default(),
        )
        .unwrap_err();
        match err {
            DiffError::NonFiniteEval { param, index, delta } => {
                assert_eq!(param, "x");
                assert_eq!(index, 0);
                assert!(delta > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
