//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// `(input, element)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Elements whose `±eps` evaluations switched a relu or maxpool branch.
    pub kink_crossings: usize,
    /// Worst relative error over the elements that crossed no branch.
    pub smooth_max_rel_err: f64,
    pub pass: bool,
}

fn scalar_of(g: &Graph<f64>, id: TensorId) -> Result<f64> {
    let t = g.value(id);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradcheck function must return a scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// Value of `f` and the branch signature of its graph.
fn evaluate<F>(f: &mut F, inputs: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: FnMut(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    Ok((scalar_of(&g, out)?, g.branch_signature()))
}

/// Compare the analytic gradient of scalar-valued `f` with central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, element by element over every
/// input. The relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator; the check passes iff the worst error is below `tol`.
pub fn gradcheck<F>(mut f: F, inputs: &[Tensor<f64>], eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    for (i, t) in inputs.iter().enumerate() {
        if let Some(j) = t.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { input: i, index: j });
        }
    }

    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    let value = scalar_of(&g, out)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { input: 0, index: 0 });
    }
    let signature = g.branch_signature();
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut work = inputs.to_vec();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        kink_crossings: 0,
        smooth_max_rel_err: 0.0,
        pass: true,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let (plus, sp) = evaluate(&mut f, &work)?;
            work[i].data_mut()[j] = orig - eps;
            let (minus, sm) = evaluate(&mut f, &work)?;
            let crossed = sp != signature || sm != signature;
            if crossed {
                report.kink_crossings += 1;
            }
            work[i].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { input: i, index: j });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if !crossed {
                report.smooth_max_rel_err = report.smooth_max_rel_err.max(rel);
            }
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some((i, j));
                report.worst_values = (a, numeric);
            }
            report.checked += 1;
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -0.7, 1.2, 0.0, 5.0, -2.0]).unwrap();
        let r = gradcheck(|g, ids| g.sum(ids[0]), &[x], 1e-5, 1e-4).unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err < 1e-9, "{}", r.max_rel_err);
        assert_eq!(r.checked, 6);
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::from_vec(&[5], vec![-0.8, -0.1, 0.2, 0.65, 0.9]).unwrap();
        let r = gradcheck(
            |g, ids| {
                let y = g.relu(ids[0])?;
                g.sum(y)
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // relu evaluated exactly at its kink: analytic 0, numeric 0.5
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let r = gradcheck(
            |g, ids| {
                let y = g.relu(ids[0])?;
                g.sum(y)
            },
            &[x],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst, Some((0, 0)));
    }

    #[test]
    fn non_finite_input_reports_index() {
        let x = Tensor::from_vec(&[3], vec![1.0, f64::NAN, 0.0]).unwrap();
        let e = gradcheck(|g, ids| g.sum(ids[0]), &[x], 1e-5, 1e-4).unwrap_err();
        assert!(matches!(e, Error::NonFinite { input: 0, index: 1 }));
    }
}
