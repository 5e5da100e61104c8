use super::{LossFn, Network, Params, Tensor};
use crate::error::Result;

/// Snapshot of all parameters in visit order.
pub fn flat_params<P: Params + ?Sized>(model: &mut P) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |p, _| out.extend_from_slice(p));
    out
}

pub fn flat_grads<P: Params + ?Sized>(model: &mut P) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, g| out.extend_from_slice(g));
    out
}

pub fn zero_grads<P: Params + ?Sized>(model: &mut P) {
    model.visit_params(&mut |_, g| g.iter_mut().for_each(|v| *v = 0.0));
}

fn with_param<P: Params + ?Sized>(model: &mut P, index: usize, f: impl FnOnce(&mut f64)) {
    let mut f = Some(f);
    let mut offset = 0;
    model.visit_params(&mut |p, _| {
        if index >= offset && index < offset + p.len() {
            if let Some(f) = f.take() {
                f(&mut p[index - offset]);
            }
        }
        offset += p.len();
    });
}

/// Compares analytic gradients with central finite differences.
///
/// `loss(model, accumulate)` must return the scalar loss and, when
/// `accumulate` is true, add its gradient into the model's gradient buffers.
/// Returns `max_i |g_a − g_n| / max(|g_a|, |g_n|, 1e-12)`.
pub fn gradient_check<P, F>(model: &mut P, eps: f64, mut loss: F) -> Result<f64>
where
    P: Params + ?Sized,
    F: FnMut(&mut P, bool) -> Result<f64>,
{
    zero_grads(model);
    loss(model, true)?;
    let analytic = flat_grads(model);
    zero_grads(model);

    let mut worst = 0.0f64;
    for (i, &ga) in analytic.iter().enumerate() {
        let mut orig = 0.0;
        with_param(model, i, |p| {
            orig = *p;
            *p = orig + eps;
        });
        let plus = loss(model, false)?;
        with_param(model, i, |p| *p = orig - eps);
        let minus = loss(model, false)?;
        with_param(model, i, |p| *p = orig);
        let gn = (plus - minus) / (2.0 * eps);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Gradient check of `network` under `loss_fn` on one input/target pair.
pub fn check_network(
    network: &mut Network,
    loss_fn: LossFn,
    input: &Tensor,
    target: &Tensor,
    eps: f64,
) -> Result<f64> {
    gradient_check(network, eps, |net, accumulate| {
        if accumulate {
            let out = net.forward(input)?;
            let l = loss_fn.value(&out, target)?;
            net.backward(&loss_fn.grad(&out, target)?)?;
            Ok(l)
        } else {
            loss_fn.value(&net.predict(input)?, target)
        }
    })
}
