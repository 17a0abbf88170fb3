//! Stateful layers that retain their forward activations for backward.

use crate::error::{Error, Result};
use crate::nn::activation::{relu6_backward, relu6_forward};
use crate::nn::conv::{
    conv2d_backward, conv2d_forward, depthwise_conv_backward, depthwise_conv_forward,
};
use crate::nn::linear::{dense_backward, dense_forward};
use crate::nn::norm::{batchnorm_backward, batchnorm_forward, BnCache, BnConfig, RunningStats};
use crate::nn::pool::{global_avg_pool_backward, global_avg_pool_forward};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

/// Gradients produced by one backward call.
#[derive(Clone, Debug)]
pub struct LayerGrad<T: Real> {
    /// Same order and shapes as [`Layer::params`].
    pub param_grads: Vec<Tensor<T>>,
    pub input_grad: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(weight: Tensor<T>, stride: usize, padding: usize, depthwise: bool) -> Self {
        Self {
            weight,
            stride,
            padding,
            depthwise,
            input: None,
        }
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.depthwise {
            depthwise_conv_forward(x, &self.weight, self.stride, self.padding)
        } else {
            conv2d_forward(x, &self.weight, self.stride, self.padding)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
    pub config: BnConfig,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(vec![channels]),
            beta: Tensor::zeros(vec![channels]),
            stats: RunningStats::new(channels),
            config: BnConfig::default(),
            cache: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T: Real> {
    /// `D×K`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            weight,
            bias,
            input: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T: Real> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu6 { input: Option<Tensor<T>> },
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Dense(Dense<T>),
}

impl<T: Real> Layer<T> {
    pub fn relu6() -> Self {
        Layer::Relu6 { input: None }
    }

    pub fn global_avg_pool() -> Self {
        Layer::GlobalAvgPool { input_shape: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(c) if c.depthwise => "depthwise_conv",
            Layer::Conv(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu6 { .. } => "relu6",
            Layer::GlobalAvgPool { .. } => "global_avg_pool",
            Layer::Dense(_) => "dense",
        }
    }

    /// Trainable parameter names, aligned with [`Layer::params`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Conv(_) => &["weight"],
            Layer::BatchNorm(_) => &["gamma", "beta"],
            Layer::Dense(_) => &["weight", "bias"],
            _ => &[],
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Forward pass that records what backward needs. Train-mode batch norm
    /// also updates its running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => {
                let y = c.apply(x)?;
                c.input = Some(x.clone());
                Ok(y)
            }
            Layer::BatchNorm(b) => {
                let (y, cache) =
                    batchnorm_forward(x, &b.gamma, &b.beta, &mut b.stats, mode, b.config)?;
                b.cache = Some(cache);
                Ok(y)
            }
            Layer::Relu6 { input } => {
                let y = relu6_forward(x);
                *input = Some(x.clone());
                Ok(y)
            }
            Layer::GlobalAvgPool { input_shape } => {
                let y = global_avg_pool_forward(x)?;
                *input_shape = Some(x.shape().to_vec());
                Ok(y)
            }
            Layer::Dense(d) => {
                let y = dense_forward(x, &d.weight, &d.bias)?;
                d.input = Some(x.clone());
                Ok(y)
            }
        }
    }

    /// Eval-mode forward pass without recording anything.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.apply(x),
            Layer::BatchNorm(b) => {
                let mut stats = b.stats.clone();
                batchnorm_forward(x, &b.gamma, &b.beta, &mut stats, Mode::Eval, b.config)
                    .map(|(y, _)| y)
            }
            Layer::Relu6 { .. } => Ok(relu6_forward(x)),
            Layer::GlobalAvgPool { .. } => global_avg_pool_forward(x),
            Layer::Dense(d) => dense_forward(x, &d.weight, &d.bias),
        }
    }

    /// Consumes the recorded activations; a second call without a new
    /// forward fails.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<LayerGrad<T>> {
        let name = self.name();
        let missing = || Error::NoForward(name);
        match self {
            Layer::Conv(c) => {
                let x = c.input.take().ok_or_else(missing)?;
                let (gx, gw) = if c.depthwise {
                    depthwise_conv_backward(&x, &c.weight, grad_out, c.stride, c.padding)?
                } else {
                    conv2d_backward(&x, &c.weight, grad_out, c.stride, c.padding)?
                };
                Ok(LayerGrad {
                    param_grads: vec![gw],
                    input_grad: gx,
                })
            }
            Layer::BatchNorm(b) => {
                let cache = b.cache.take().ok_or_else(missing)?;
                let (gx, gg, gb) = batchnorm_backward(&cache, &b.gamma, grad_out)?;
                Ok(LayerGrad {
                    param_grads: vec![gg, gb],
                    input_grad: gx,
                })
            }
            Layer::Relu6 { input } => {
                let x = input.take().ok_or_else(missing)?;
                Ok(LayerGrad {
                    param_grads: Vec::new(),
                    input_grad: relu6_backward(&x, grad_out)?,
                })
            }
            Layer::GlobalAvgPool { input_shape } => {
                let shape = input_shape.take().ok_or_else(missing)?;
                Ok(LayerGrad {
                    param_grads: Vec::new(),
                    input_grad: global_avg_pool_backward(&shape, grad_out)?,
                })
            }
            Layer::Dense(d) => {
                let x = d.input.take().ok_or_else(missing)?;
                let (gx, gw, gb) = dense_backward(&x, &d.weight, grad_out)?;
                Ok(LayerGrad {
                    param_grads: vec![gw, gb],
                    input_grad: gx,
                })
            }
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.input = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Relu6 { input } => *input = None,
            Layer::GlobalAvgPool { input_shape } => *input_shape = None,
            Layer::Dense(d) => d.input = None,
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        match self {
            Layer::Conv(c) => Layer::Conv(Conv2d::new(
                c.weight.cast(),
                c.stride,
                c.padding,
                c.depthwise,
            )),
            Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                gamma: b.gamma.cast(),
                beta: b.beta.cast(),
                stats: RunningStats {
                    mean: b.stats.mean.cast(),
                    var: b.stats.var.cast(),
                },
                config: b.config,
                cache: None,
            }),
            Layer::Relu6 { .. } => Layer::relu6(),
            Layer::GlobalAvgPool { .. } => Layer::global_avg_pool(),
            Layer::Dense(d) => Layer::Dense(Dense::new(d.weight.cast(), d.bias.cast())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_fails() {
        let mut layer = Layer::<f64>::Dense(Dense::new(
            Tensor::zeros(vec![2, 2]),
            Tensor::zeros(vec![2]),
        ));
        let err = layer.backward(&Tensor::zeros(vec![1, 2])).unwrap_err();
        assert!(matches!(err, Error::NoForward("dense")));

        layer
            .forward(&Tensor::zeros(vec![1, 2]), Mode::Train)
            .unwrap();
        assert!(layer.backward(&Tensor::zeros(vec![1, 2])).is_ok());
        assert!(layer.backward(&Tensor::zeros(vec![1, 2])).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut layers = vec![
            Layer::<f64>::Conv(Conv2d::new(
                Tensor::from_fn(vec![2, 3, 3, 3], |i| (i as f64).sin()),
                1,
                1,
                false,
            )),
            Layer::BatchNorm(BatchNorm::new(2)),
            Layer::relu6(),
        ];
        let mut x = Tensor::from_fn(vec![2, 3, 4, 4], |i| (i as f64 * 0.37).cos());
        for l in layers.iter_mut() {
            x = l.forward(&x, Mode::Train).unwrap();
        }
        let mut g = Tensor::zeros(x.shape().to_vec());
        for l in layers.iter_mut().rev() {
            let lg = l.backward(&g).unwrap();
            assert!(lg.param_grads.iter().all(|t| t.max_abs() == 0.0));
            assert_eq!(lg.input_grad.max_abs(), 0.0);
            g = lg.input_grad;
        }
    }
}
