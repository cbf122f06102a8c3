use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates.
    pub max_rel_err: f64,
    /// Worst error per parameter tensor, in the order they were passed in.
    pub per_param: Vec<f64>,
    pub pass: bool,
}

/// Compares `backward` against central differences `(f(θ+ε) − f(θ−ε)) / 2ε`
/// coordinate by coordinate.
///
/// `build` receives a fresh graph with `params` already registered (in order)
/// and returns the scalar loss node.
pub fn grad_check<F>(build: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!(
            "grad_check eps must be in (0, 1e-3], got {eps}"
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.forward(&[])?;
    let analytic = g.backward(loss)?;

    let eval = |g: &mut Graph, id: NodeId, t: Tensor| -> Result<f64> {
        g.set_parameter(id, t);
        g.forward(&[])?;
        Ok(g.value(loss).expect("evaluated").item())
    };

    let mut per_param = Vec::with_capacity(params.len());
    for (k, (&id, base)) in ids.iter().zip(params).enumerate() {
        let grad = analytic.get(id).expect("registered parameter");
        let mut worst: f64 = 0.0;
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[j] += eps;
            let mut minus = base.clone();
            minus.data_mut()[j] -= eps;
            let fp = eval(&mut g, id, plus)?;
            let fm = eval(&mut g, id, minus)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        g.set_parameter(id, params[k].clone());
        per_param.push(worst);
    }
    let max_rel_err = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= tol,
        per_param,
    })
}
