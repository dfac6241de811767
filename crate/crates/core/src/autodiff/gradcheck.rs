//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>], with_grad: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new().checked(true);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if with_grad {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::shape(
            "grad_check",
            format!("function must be scalar, got {:?}", g.shape(out)),
        ));
    }
    Ok((g, vars, out))
}

/// Compare backward against central differences for every coordinate of
/// every input. Relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = eval(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v)).collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + step;
            let (gp, _, op) = eval(&f, &probe, false)?;
            let fp = gp.value(op).item();
            probe[i].data_mut()[j] = orig - step;
            let (gm, _, om) = eval(&f, &probe, false)?;
            let fm = gm.value(om).item();
            probe[i].data_mut()[j] = orig;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[i].data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("grad_check input {i} coordinate {j}")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), step)?;
    Ok(report.max_rel_error)
}
