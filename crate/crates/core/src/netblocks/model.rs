use rand::Rng;

use crate::error::{Error, Result};
use crate::netblocks::spec::{BlockKind, BlockSpec, ModelSpec};
use crate::nn::layer::{BatchNorm, Conv2d, Dense};
use crate::nn::{Layer, Mode};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Block<T: Real> {
    pub spec: BlockSpec,
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Block<T> {
    fn build(spec: &BlockSpec, rng: &mut impl Rng) -> Self {
        let conv = |rng: &mut dyn rand::RngCore,
                    o: usize,
                    i: usize,
                    k: usize,
                    stride: usize,
                    depthwise: bool| {
            let fan_in = if depthwise { k * k } else { i * k * k };
            let bound = (6.0 / fan_in as f64).sqrt();
            let shape = if depthwise {
                vec![o, 1, k, k]
            } else {
                vec![o, i, k, k]
            };
            let w = Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)));
            Layer::Conv(Conv2d::new(w, stride, k / 2, depthwise))
        };
        let mut layers = Vec::new();
        match spec.kind {
            BlockKind::ConvBnRelu => {
                layers.push(conv(
                    rng,
                    spec.out_channels,
                    spec.in_channels,
                    spec.kernel,
                    spec.stride,
                    false,
                ));
                layers.push(Layer::BatchNorm(BatchNorm::new(spec.out_channels)));
                layers.push(Layer::relu6());
            }
            BlockKind::InvertedResidual => {
                let hidden = spec.hidden_channels();
                if spec.expansion != 1 {
                    layers.push(conv(rng, hidden, spec.in_channels, 1, 1, false));
                    layers.push(Layer::BatchNorm(BatchNorm::new(hidden)));
                    layers.push(Layer::relu6());
                }
                layers.push(conv(rng, hidden, hidden, 3, spec.stride, true));
                layers.push(Layer::BatchNorm(BatchNorm::new(hidden)));
                layers.push(Layer::relu6());
                layers.push(conv(rng, spec.out_channels, hidden, 1, 1, false));
                layers.push(Layer::BatchNorm(BatchNorm::new(spec.out_channels)));
            }
            BlockKind::Classifier => {
                let bound = (6.0 / spec.in_channels as f64).sqrt();
                let w = Tensor::from_fn(vec![spec.in_channels, spec.out_channels], |_| {
                    T::from_f64(rng.gen_range(-bound..bound))
                });
                layers.push(Layer::global_avg_pool());
                layers.push(Layer::Dense(Dense::new(
                    w,
                    Tensor::zeros(vec![spec.out_channels]),
                )));
            }
        }
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.layers[0].forward(x, mode)?;
        for layer in &mut self.layers[1..] {
            h = layer.forward(&h, mode)?;
        }
        if self.spec.has_skip() {
            h.add_assign(x)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        if self.spec.has_skip() {
            h.add_assign(x)?;
        }
        Ok(h)
    }

    /// Returns the input gradient; parameter gradients are written into
    /// `grads` in reverse layer order.
    fn backward(&mut self, grad_out: &Tensor<T>, grads: &mut Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            let lg = layer.backward(&g)?;
            grads.extend(lg.param_grads.into_iter().rev());
            g = lg.input_grad;
        }
        if self.spec.has_skip() {
            g.add_assign(grad_out)?;
        }
        Ok(g)
    }
}

/// Gradients of a scalar objective with respect to every trainable
/// parameter (in [`Model::params`] order) and to the input batch.
#[derive(Clone, Debug)]
pub struct ModelGrad<T: Real> {
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub spec: ModelSpec,
    pub blocks: Vec<Block<T>>,
}

impl<T: Real> Model<T> {
    /// He-uniform convolution and dense weights, zero dense bias, unit BN
    /// scale and zero BN shift.
    pub fn new(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks.iter().map(|b| Block::build(b, rng)).collect();
        Ok(Self { spec, blocks })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_rank("model forward", 4)?;
        if x.shape()[1..] != self.spec.input_shape {
            let mut want = vec![x.dim(0)];
            want.extend_from_slice(&self.spec.input_shape);
            return Err(Error::shape("model forward", &want, x.shape()));
        }
        Ok(())
    }

    fn tap_index(&self, tap: usize) -> Result<usize> {
        self.spec.block_index(tap).ok_or_else(|| {
            Error::invalid(format!(
                "attention source {tap} is not a feature block of {}",
                self.spec.name
            ))
        })
    }

    /// Forward pass that records activations for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_impl(x, mode, None).map(|(l, _)| l)
    }

    /// Forward pass that also returns the raw activation leaving block `tap`.
    pub fn forward_with_tap(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        tap: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let idx = self.tap_index(tap)?;
        let (logits, act) = self.forward_impl(x, mode, Some(idx))?;
        Ok((logits, act.expect("tap index is a retained block")))
    }

    /// [`Model::forward_with_tap`] at the spec's attention source.
    pub fn forward_with_attention(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.forward_with_tap(x, mode, self.spec.attention_source)
    }

    fn forward_impl(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        tap: Option<usize>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut act = None;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            h = block.forward(&h, mode)?;
            if Some(i) == tap {
                act = Some(h.clone());
            }
        }
        Ok((h, act))
    }

    /// Eval-mode logits; does not touch recorded state, so a shared model
    /// can serve concurrent callers.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_with_tap_impl(x, None).map(|(l, _)| l)
    }

    pub fn infer_with_tap(&self, x: &Tensor<T>, tap: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let idx = self.tap_index(tap)?;
        let (logits, act) = self.infer_with_tap_impl(x, Some(idx))?;
        Ok((logits, act.expect("tap index is a retained block")))
    }

    fn infer_with_tap_impl(
        &self,
        x: &Tensor<T>,
        tap: Option<usize>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut act = None;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.infer(&h)?;
            if Some(i) == tap {
                act = Some(h.clone());
            }
        }
        Ok((h, act))
    }

    /// Backpropagates `grad_logits` (and optionally a gradient arriving at
    /// the activation of block `tap.0`) through the last recorded forward.
    pub fn backward(
        &mut self,
        grad_logits: &Tensor<T>,
        tap: Option<(usize, &Tensor<T>)>,
    ) -> Result<ModelGrad<T>> {
        let tap = match tap {
            Some((id, g)) => Some((self.tap_index(id)?, g)),
            None => None,
        };
        let mut rev_grads = Vec::new();
        let mut g = grad_logits.clone();
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if let Some((idx, tg)) = tap {
                if idx == i {
                    g.add_assign(tg)?;
                }
            }
            g = block.backward(&g, &mut rev_grads)?;
        }
        rev_grads.reverse();
        Ok(ModelGrad {
            params: rev_grads,
            input: g,
        })
    }

    pub fn clear_cache(&mut self) {
        for b in &mut self.blocks {
            b.layers.iter_mut().for_each(Layer::clear_cache);
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.blocks
            .iter()
            .flat_map(|b| b.layers.iter().flat_map(Layer::params))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut().flat_map(Layer::params_mut))
            .collect()
    }

    /// `b{block_id}.l{layer}.{param}` names aligned with [`Model::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in &self.blocks {
            for (li, layer) in b.layers.iter().enumerate() {
                for p in layer.param_names() {
                    names.push(format!("b{}.l{li}.{p}", b.spec.block_id));
                }
            }
        }
        names
    }

    /// Every trainable scalar; batch-norm running statistics are excluded.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    spec: b.spec.clone(),
                    layers: b.layers.iter().map(Layer::cast).collect(),
                })
                .collect(),
        }
    }

    /// Copies parameters and running statistics of every block the two
    /// models share (same id and spec), returning how many were copied.
    pub fn copy_shared_prefix_from(&mut self, other: &Model<T>) -> usize {
        let mut copied = 0;
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            if dst.spec != src.spec {
                break;
            }
            dst.layers = src.layers.clone();
            dst.layers.iter_mut().for_each(Layer::clear_cache);
            copied += 1;
        }
        copied
    }
}
