use rand::Rng;

use super::{Layer, LayerSpec, Params, Tensor};
use crate::error::{Error, Result};

/// Sequential stack of layers with a fixed input shape.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the network and checks that every layer accepts the shape the
    /// previous one produces.
    pub fn new<R: Rng + ?Sized>(input_shape: Vec<usize>, specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        validate(&input_shape, &specs)?;
        let layers = specs.into_iter().map(|s| Layer::new(s, rng)).collect();
        Ok(Network {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shape_after(self.layers.len())
    }

    /// Shape produced by the first `n` layers.
    pub fn shape_after(&self, n: usize) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for l in &self.layers[..n] {
            shape = l.spec.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::LayerShape {
                layer: 0,
                expected: format!("{:?}", self.input_shape),
                actual: format!("{:?}", x.shape()),
            });
        }
        x.ensure_finite("network input")
    }

    /// Training forward pass; caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(&cur).map_err(|e| at_layer(i, e))?;
        }
        cur.ensure_finite("network output")?;
        Ok(cur)
    }

    /// Inference without caching.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_prefix(x, self.layers.len())
    }

    /// Output of the first `n` layers.
    pub fn predict_prefix(&self, x: &Tensor, n: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers[..n].iter().enumerate() {
            cur = layer.apply(&cur).map_err(|e| at_layer(i, e))?;
        }
        cur.ensure_finite("network output")?;
        Ok(cur)
    }

    /// Backpropagates `grad` (w.r.t. the output), accumulating parameter
    /// gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut cur = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            cur = layer.backward(i, &cur)?;
        }
        Ok(cur)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Parameters in visit order: per layer, weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ModelFormat(format!(
                "expected {} parameters, found {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}

impl Params for Network {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        for l in &mut self.layers {
            if !l.weight.is_empty() {
                f(&mut l.weight, &mut l.grad_weight);
            }
            if !l.bias.is_empty() {
                f(&mut l.bias, &mut l.grad_bias);
            }
        }
    }
}

fn at_layer(i: usize, e: Error) -> Error {
    match e {
        Error::Shape { expected, actual } => Error::LayerShape {
            layer: i,
            expected,
            actual,
        },
        Error::NonFinite(what) => Error::NonFinite(format!("layer {i}: {what}")),
        other => other,
    }
}

pub fn validate(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Vec<usize>> {
    let mut shape = input_shape.to_vec();
    for (i, s) in specs.iter().enumerate() {
        shape = s.output_shape(&shape).map_err(|expected| Error::LayerShape {
            layer: i,
            expected,
            actual: format!("{shape:?}"),
        })?;
    }
    Ok(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = Network::new(
            vec![4],
            vec![
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 3,
                    bias: true,
                },
                LayerSpec::Dense {
                    inputs: 5,
                    outputs: 1,
                    bias: true,
                },
            ],
            &mut rng,
        )
        .unwrap_err();
        match err {
            Error::LayerShape {
                layer,
                expected,
                actual,
            } => {
                assert_eq!(layer, 1);
                assert_eq!(expected, "[5]");
                assert_eq!(actual, "[3]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_input_and_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::new(vec![2], vec![LayerSpec::Tanh], &mut rng).unwrap();
        assert!(matches!(
            net.forward(&Tensor::vector(vec![1.0])),
            Err(Error::LayerShape { layer: 0, .. })
        ));
        assert!(matches!(
            net.forward(&Tensor::vector(vec![1.0, f64::NAN])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = vec![
            LayerSpec::Dense {
                inputs: 3,
                outputs: 2,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 2,
                outputs: 1,
                bias: false,
            },
        ];
        let a = Network::new(vec![3], specs.clone(), &mut rng).unwrap();
        let mut b = Network::new(vec![3], specs, &mut rng).unwrap();
        assert_ne!(a.flat_params(), b.flat_params());
        b.load_flat_params(&a.flat_params()).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(a.param_count(), 3 * 2 + 2 + 2);
    }
}
