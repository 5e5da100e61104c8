use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

/// Serializable description of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// Fully connected; input `[inputs]`, output `[outputs]`.
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    /// 1-D convolution over `[channels, length]` inputs with zero padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
    Tanh,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    /// Nearest-neighbour repeat along the length axis of `[channels, length]`.
    Upsample1d {
        factor: usize,
    },
}

pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl LayerSpec {
    /// Output shape for a given input shape, or a description of what was expected.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                if input == [inputs] {
                    Ok(vec![outputs])
                } else {
                    Err(format!("[{inputs}]"))
                }
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => match input {
                &[c, l] if c == in_channels => conv_output_len(l, kernel, stride, padding)
                    .map(|lo| vec![out_channels, lo])
                    .ok_or_else(|| format!("[{in_channels}, L] with L + 2*{padding} >= {kernel}")),
                _ => Err(format!("[{in_channels}, L]")),
            },
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { ref shape } => {
                let n: usize = shape.iter().product();
                if input.iter().product::<usize>() == n {
                    Ok(shape.clone())
                } else {
                    Err(format!("{n} elements"))
                }
            }
            LayerSpec::Upsample1d { factor } => match input {
                &[c, l] if factor >= 1 => Ok(vec![c, l * factor]),
                _ => Err("[C, L]".into()),
            },
        }
    }

    fn param_sizes(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense {
                inputs,
                outputs,
                bias,
            } => (inputs * outputs, if bias { outputs } else { 0 }),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel, out_channels),
            _ => (0, 0),
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => (inputs, outputs),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel, out_channels * kernel),
            _ => (0, 0),
        }
    }
}

/// A layer with parameters, accumulated gradients and forward caches.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor>,
    output: Option<Tensor>,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        let (nw, nb) = spec.param_sizes();
        let (fan_in, fan_out) = spec.fans();
        let weight = if nw > 0 {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..nw).map(|_| rng.gen_range(-limit..=limit)).collect()
        } else {
            Vec::new()
        };
        Layer {
            spec,
            weight,
            bias: vec![0.0; nb],
            grad_weight: vec![0.0; nw],
            grad_bias: vec![0.0; nb],
            input: None,
            output: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
        self.output = None;
    }

    /// Forward pass without caching. Input shape must already be validated.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self
            .spec
            .output_shape(x.shape())
            .map_err(|expected| Error::Shape {
                expected,
                actual: format!("{:?}", x.shape()),
            })?;
        let xd = x.data();
        let data = match self.spec {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                let mut y = vec![0.0; outputs];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &self.weight[o * inputs..(o + 1) * inputs];
                    let mut acc = self.bias.get(o).copied().unwrap_or(0.0);
                    for (w, xi) in row.iter().zip(xd) {
                        acc += w * xi;
                    }
                    *yo = acc;
                }
                y
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let len = x.shape()[1];
                let out_len = out_shape[1];
                let mut y = vec![0.0; out_channels * out_len];
                for o in 0..out_channels {
                    for t in 0..out_len {
                        let mut acc = self.bias[o];
                        for c in 0..in_channels {
                            let w = &self.weight[(o * in_channels + c) * kernel..][..kernel];
                            let xc = &xd[c * len..(c + 1) * len];
                            for (j, wj) in w.iter().enumerate() {
                                let pos = (t * stride + j) as isize - padding as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    acc += wj * xc[pos as usize];
                                }
                            }
                        }
                        y[o * out_len + t] = acc;
                    }
                }
                y
            }
            LayerSpec::Relu => xd.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            LayerSpec::Tanh => xd.iter().map(|&v| v.tanh()).collect(),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => xd.to_vec(),
            LayerSpec::Upsample1d { factor } => {
                let (c, l) = (x.shape()[0], x.shape()[1]);
                let mut y = Vec::with_capacity(c * l * factor);
                for ch in 0..c {
                    for &v in &xd[ch * l..(ch + 1) * l] {
                        y.extend(std::iter::repeat_n(v, factor));
                    }
                }
                y
            }
        };
        Tensor::new(out_shape, data)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.input = Some(x.clone());
        self.output = Some(y.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    /// `index` is only used for error reporting.
    pub fn backward(&mut self, index: usize, grad_out: &Tensor) -> Result<Tensor> {
        let (Some(x), Some(y)) = (self.input.as_ref(), self.output.as_ref()) else {
            return Err(Error::BackwardBeforeForward(index));
        };
        if grad_out.shape() != y.shape() {
            return Err(Error::LayerShape {
                layer: index,
                expected: format!("{:?}", y.shape()),
                actual: format!("{:?}", grad_out.shape()),
            });
        }
        let xd = x.data();
        let g = grad_out.data();
        let gx = match self.spec {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                let mut gx = vec![0.0; inputs];
                for o in 0..outputs {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    if let Some(b) = self.grad_bias.get_mut(o) {
                        *b += go;
                    }
                    let row = &self.weight[o * inputs..(o + 1) * inputs];
                    let grow = &mut self.grad_weight[o * inputs..(o + 1) * inputs];
                    for i in 0..inputs {
                        grow[i] += go * xd[i];
                        gx[i] += go * row[i];
                    }
                }
                gx
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let len = x.shape()[1];
                let out_len = y.shape()[1];
                let mut gx = vec![0.0; in_channels * len];
                for o in 0..out_channels {
                    for t in 0..out_len {
                        let go = g[o * out_len + t];
                        self.grad_bias[o] += go;
                        for c in 0..in_channels {
                            let base = (o * in_channels + c) * kernel;
                            for j in 0..kernel {
                                let pos = (t * stride + j) as isize - padding as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    let p = c * len + pos as usize;
                                    self.grad_weight[base + j] += go * xd[p];
                                    gx[p] += go * self.weight[base + j];
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::Relu => xd
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect(),
            LayerSpec::Sigmoid => y
                .data()
                .iter()
                .zip(g)
                .map(|(&s, &gv)| gv * s * (1.0 - s))
                .collect(),
            LayerSpec::Tanh => y
                .data()
                .iter()
                .zip(g)
                .map(|(&t, &gv)| gv * (1.0 - t * t))
                .collect(),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => g.to_vec(),
            LayerSpec::Upsample1d { factor } => {
                let (c, l) = (x.shape()[0], x.shape()[1]);
                let mut gx = vec![0.0; c * l];
                for ch in 0..c {
                    for i in 0..l {
                        let start = (ch * l + i) * factor;
                        gx[ch * l + i] = g[start..start + factor].iter().sum();
                    }
                }
                gx
            }
        };
        Tensor::new(x.shape().to_vec(), gx)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(spec: LayerSpec) -> Layer {
        Layer::new(spec, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn dense_identity() {
        let mut l = layer(LayerSpec::Dense {
            inputs: 3,
            outputs: 3,
            bias: true,
        });
        l.weight = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let v = Tensor::vector(vec![0.5, -2.0, 7.0]);
        assert_eq!(l.apply(&v).unwrap(), v);
    }

    #[test]
    fn relu_definition() {
        let l = layer(LayerSpec::Relu);
        let y = l.apply(&Tensor::vector(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn conv_hand_example() {
        let mut l = layer(LayerSpec::Conv1d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        l.weight = vec![1.0, 1.0, 1.0];
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(l.apply(&x).unwrap().data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn upsample_repeats() {
        let l = layer(LayerSpec::Upsample1d { factor: 2 });
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = l.apply(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn backward_needs_forward() {
        let mut l = layer(LayerSpec::Tanh);
        assert!(matches!(
            l.backward(4, &Tensor::vector(vec![1.0])),
            Err(Error::BackwardBeforeForward(4))
        ));
    }

    #[test]
    fn forward_backward_leaves_params() {
        let mut l = layer(LayerSpec::Dense {
            inputs: 2,
            outputs: 2,
            bias: true,
        });
        let before = (l.weight.clone(), l.bias.clone());
        let y = l.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        l.backward(0, &y).unwrap();
        assert_eq!((l.weight.clone(), l.bias.clone()), before);
        assert_eq!(l.grad_weight.len(), l.weight.len());
        assert_eq!(l.grad_bias.len(), l.bias.len());
    }

    #[test]
    fn glorot_bounds() {
        let l = layer(LayerSpec::Dense {
            inputs: 10,
            outputs: 20,
            bias: true,
        });
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(l.weight.iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
}
