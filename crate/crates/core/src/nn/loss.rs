use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const BCE_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossFn {
    Mse,
    BinaryCrossEntropy,
}

fn check_shapes(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            expected: format!("{:?}", target.shape()),
            actual: format!("{:?}", pred.shape()),
        });
    }
    Ok(())
}

impl LossFn {
    pub fn value(self, pred: &Tensor, target: &Tensor) -> Result<f64> {
        check_shapes(pred, target)?;
        match self {
            LossFn::Mse => mse_loss(target, pred),
            LossFn::BinaryCrossEntropy => {
                let n = pred.len() as f64;
                let total: f64 = pred
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum();
                Ok(total / n)
            }
        }
    }

    /// Gradient of the loss with respect to `pred`.
    pub fn grad(self, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
        check_shapes(pred, target)?;
        let n = pred.len() as f64;
        let data = match self {
            LossFn::Mse => pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| 2.0 * (p - t) / n)
                .collect(),
            LossFn::BinaryCrossEntropy => pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(&p, &t)| {
                    let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                    (p - t) / (p * (1.0 - p)) / n
                })
                .collect(),
        };
        Tensor::new(pred.shape().to_vec(), data)
    }
}

/// Mean squared error `(1/n) Σ (x_i − x̂_i)²` over all elements.
pub fn mse_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    check_shapes(x_hat, x)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}
