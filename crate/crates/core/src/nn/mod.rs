//! Neural-network layers with explicit forward and backward passes.
//!
//! A [`Network`] is an ordered list of layers, each holding its parameter
//! tensors, matching gradient slots, and the per-pass cache backward needs.
//! Train-mode forwards record caches and consume dropout randomness; eval
//! forwards are deterministic and cache-free.

mod grad_check;
mod ops;

pub use grad_check::grad_check;

use thiserror::Error;

use crate::tensor::{Element, SeededRng, Tensor};

use ops::SpatialDims;

/// Layer variants and their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2D {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        zero_pad: usize,
    },
    MaxPool2D {
        size: usize,
        stride: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    ReLU,
    Sigmoid,
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool2D { .. } => "MaxPool2D",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::ReLU => "ReLU",
            LayerSpec::Sigmoid => "Sigmoid",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dropout { .. } => "Dropout",
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kh == 0 || kw == 0 {
                    return Err("conv dimensions must be positive".into());
                }
                if stride == 0 {
                    return Err("stride must be >= 1".into());
                }
            }
            LayerSpec::MaxPool2D { size, stride } => {
                if size == 0 {
                    return Err("pool size must be positive".into());
                }
                if stride == 0 {
                    return Err("stride must be >= 1".into());
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err("dense dimensions must be positive".into());
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate must be in [0, 1), got {rate}"));
                }
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape (no batch dim).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                zero_pad,
            } => {
                let [c, h, w]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| format!("Conv2D expects CxHxW input, got {input:?}"))?;
                if c != in_ch {
                    return Err(format!("expected {in_ch} input channels, got {c}"));
                }
                let oh = ops::conv_extent(h, kh, stride, zero_pad)?;
                let ow = ops::conv_extent(w, kw, stride, zero_pad)?;
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::MaxPool2D { size, stride } => {
                let [c, h, w]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| format!("MaxPool2D expects CxHxW input, got {input:?}"))?;
                let oh = ops::pool_extent(h, size, stride)?;
                let ow = ops::pool_extent(w, size, stride)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(format!(
                        "Dense expects {in_dim} input features, got {input:?}"
                    ));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Dropout { .. } => {
                Ok(input.to_vec())
            }
        }
    }

    /// Parameter tensors this layer owns, as `(name, shape)`.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kh,
                kw,
                ..
            } => vec![
                ("weight", vec![out_ch, in_ch, kh, kw]),
                ("bias", vec![out_ch]),
            ],
            LayerSpec::Dense { in_dim, out_dim } => vec![
                ("weight", vec![in_dim, out_dim]),
                ("bias", vec![out_dim]),
            ],
            _ => Vec::new(),
        }
    }

    /// Glorot-uniform fan pair, when the layer has weights.
    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2D {
                in_ch,
                out_ch,
                kh,
                kw,
                ..
            } => Some((in_ch * kh * kw, out_ch * kh * kw)),
            LayerSpec::Dense { in_dim, out_dim } => Some((in_dim, out_dim)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {index} ({layer}): {reason}")]
    Layer {
        index: usize,
        layer: &'static str,
        reason: String,
    },
    #[error("input shape {got:?} does not match declared input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {index} has no forward cache; run a train-mode forward first")]
    MissingCache { index: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

/// One named parameter tensor and its same-shape gradient slot.
#[derive(Debug, Clone)]
pub struct Param<T: Element> {
    pub name: &'static str,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

enum LayerCache<T: Element> {
    Conv { input: Tensor<T> },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Dense { input: Tensor<T> },
    Relu { mask: Vec<bool> },
    Sigmoid { output: Tensor<T> },
    Flatten { input_shape: Vec<usize> },
    Dropout { factors: Vec<T> },
}

pub struct Layer<T: Element> {
    spec: LayerSpec,
    params: Vec<Param<T>>,
    trainable: bool,
    cache: Option<LayerCache<T>>,
}

enum LayerFail {
    NoCache,
    Msg(String),
}

impl From<String> for LayerFail {
    fn from(msg: String) -> Self {
        LayerFail::Msg(msg)
    }
}

impl From<crate::tensor::TensorError> for LayerFail {
    fn from(err: crate::tensor::TensorError) -> Self {
        LayerFail::Msg(err.to_string())
    }
}

impl<T: Element> Layer<T> {
    fn new(spec: LayerSpec) -> Self {
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| Param {
                name,
                value: Tensor::zeros(&shape),
                grad: Tensor::zeros(&shape),
            })
            .collect();
        Self {
            spec,
            params,
            trainable: true,
            cache: None,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn has_weights(&self) -> bool {
        !self.params.is_empty()
    }

    fn conv_dims(&self, input_shape: &[usize]) -> Result<(SpatialDims, usize, usize, usize), String> {
        let LayerSpec::Conv2D {
            in_ch,
            out_ch,
            kh,
            kw,
            stride,
            zero_pad,
        } = self.spec
        else {
            unreachable!()
        };
        let [n, c, h, w]: [usize; 4] = input_shape
            .try_into()
            .map_err(|_| format!("Conv2D expects NxCxHxW input, got {input_shape:?}"))?;
        if c != in_ch {
            return Err(format!("expected {in_ch} input channels, got {c}"));
        }
        let oh = ops::conv_extent(h, kh, stride, zero_pad)?;
        let ow = ops::conv_extent(w, kw, stride, zero_pad)?;
        Ok((
            SpatialDims { n, c, h, w, oh, ow },
            out_ch,
            stride,
            zero_pad,
        ))
    }

    fn forward(
        &mut self,
        input: Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<Tensor<T>, LayerFail> {
        let keep_cache = mode == Mode::Train;
        let out = match self.spec {
            LayerSpec::Conv2D { .. } => {
                let (dims, out_ch, stride, pad) = self.conv_dims(input.shape())?;
                let out = ops::conv2d_forward(
                    &input,
                    &self.params[0].value,
                    &self.params[1].value,
                    stride,
                    pad,
                    &dims,
                    out_ch,
                );
                if keep_cache {
                    self.cache = Some(LayerCache::Conv { input });
                }
                out
            }
            LayerSpec::MaxPool2D { size, stride } => {
                let [n, c, h, w]: [usize; 4] = input.shape().try_into().map_err(|_| {
                    format!("MaxPool2D expects NxCxHxW input, got {:?}", input.shape())
                })?;
                let oh = ops::pool_extent(h, size, stride)?;
                let ow = ops::pool_extent(w, size, stride)?;
                let dims = SpatialDims { n, c, h, w, oh, ow };
                let (out, argmax) = ops::maxpool_forward(&input, size, stride, &dims);
                if keep_cache {
                    self.cache = Some(LayerCache::Pool {
                        input_shape: input.shape().to_vec(),
                        argmax,
                    });
                }
                out
            }
            LayerSpec::Dense { in_dim, .. } => {
                if input.ndim() != 2 || input.shape()[1] != in_dim {
                    return Err(format!(
                        "Dense expects Nx{in_dim} input, got {:?}",
                        input.shape()
                    )
                    .into());
                }
                let out = ops::dense_forward(&input, &self.params[0].value, &self.params[1].value)?;
                if keep_cache {
                    self.cache = Some(LayerCache::Dense { input });
                }
                out
            }
            LayerSpec::ReLU => {
                let (out, mask) = ops::relu_forward(&input);
                if keep_cache {
                    self.cache = Some(LayerCache::Relu { mask });
                }
                out
            }
            LayerSpec::Sigmoid => {
                let out = ops::sigmoid_forward(&input);
                if keep_cache {
                    self.cache = Some(LayerCache::Sigmoid {
                        output: out.clone(),
                    });
                }
                out
            }
            LayerSpec::Flatten => {
                if input.ndim() < 2 {
                    return Err(format!(
                        "Flatten expects a batched input, got {:?}",
                        input.shape()
                    )
                    .into());
                }
                let n = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                let input_shape = input.shape().to_vec();
                let out = input.reshape(vec![n, rest])?;
                if keep_cache {
                    self.cache = Some(LayerCache::Flatten { input_shape });
                }
                out
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval {
                    // Identity in eval mode; no rng consumption, no cache.
                    return Ok(input);
                }
                let scale = T::from_f64(1.0 / (1.0 - rate));
                let factors: Vec<T> = (0..input.len())
                    .map(|_| {
                        if rng.next_f64() >= rate {
                            scale
                        } else {
                            T::ZERO
                        }
                    })
                    .collect();
                let data: Vec<T> = input
                    .data()
                    .iter()
                    .zip(&factors)
                    .map(|(&x, &f)| x * f)
                    .collect();
                let out = Tensor::from_vec(input.shape().to_vec(), data)?;
                self.cache = Some(LayerCache::Dropout { factors });
                out
            }
        };
        Ok(out)
    }

    /// Eval-semantics forward without any mutation: no caches, no rng.
    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, LayerFail> {
        match self.spec {
            LayerSpec::Conv2D { .. } => {
                let (dims, out_ch, stride, pad) = self.conv_dims(input.shape())?;
                Ok(ops::conv2d_forward(
                    &input,
                    &self.params[0].value,
                    &self.params[1].value,
                    stride,
                    pad,
                    &dims,
                    out_ch,
                ))
            }
            LayerSpec::MaxPool2D { size, stride } => {
                let [n, c, h, w]: [usize; 4] = input.shape().try_into().map_err(|_| {
                    format!("MaxPool2D expects NxCxHxW input, got {:?}", input.shape())
                })?;
                let oh = ops::pool_extent(h, size, stride)?;
                let ow = ops::pool_extent(w, size, stride)?;
                let dims = SpatialDims { n, c, h, w, oh, ow };
                Ok(ops::maxpool_forward(&input, size, stride, &dims).0)
            }
            LayerSpec::Dense { in_dim, .. } => {
                if input.ndim() != 2 || input.shape()[1] != in_dim {
                    return Err(format!(
                        "Dense expects Nx{in_dim} input, got {:?}",
                        input.shape()
                    )
                    .into());
                }
                Ok(ops::dense_forward(
                    &input,
                    &self.params[0].value,
                    &self.params[1].value,
                )?)
            }
            LayerSpec::ReLU => Ok(ops::relu_forward(&input).0),
            LayerSpec::Sigmoid => Ok(ops::sigmoid_forward(&input)),
            LayerSpec::Flatten => {
                let n = input.shape()[0];
                let rest: usize = input.shape()[1..].iter().product();
                Ok(input.reshape(vec![n, rest])?)
            }
            LayerSpec::Dropout { .. } => Ok(input),
        }
    }

    fn backward(&mut self, upstream: Tensor<T>) -> Result<Tensor<T>, LayerFail> {
        let cache = self.cache.take().ok_or(LayerFail::NoCache)?;
        match (&self.spec, cache) {
            (LayerSpec::Conv2D { .. }, LayerCache::Conv { input }) => {
                let (dims, out_ch, stride, pad) = self.conv_dims(input.shape())?;
                let grads = ops::conv2d_backward(
                    &input,
                    &self.params[0].value,
                    &upstream,
                    stride,
                    pad,
                    &dims,
                    out_ch,
                    self.trainable,
                );
                if let Some((gw, gb)) = grads.params {
                    accumulate(&mut self.params[0].grad, &gw);
                    accumulate(&mut self.params[1].grad, &gb);
                }
                Ok(grads.input)
            }
            (LayerSpec::MaxPool2D { .. }, LayerCache::Pool { input_shape, argmax }) => {
                Ok(ops::maxpool_backward(&input_shape, &argmax, &upstream))
            }
            (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
                let grads = ops::dense_backward(
                    &input,
                    &self.params[0].value,
                    &upstream,
                    self.trainable,
                )?;
                if let Some((gw, gb)) = grads.params {
                    accumulate(&mut self.params[0].grad, &gw);
                    accumulate(&mut self.params[1].grad, &gb);
                }
                Ok(grads.input)
            }
            (LayerSpec::ReLU, LayerCache::Relu { mask }) => {
                if mask.len() != upstream.len() {
                    return Err(format!(
                        "upstream gradient has {} elements, cache expects {}",
                        upstream.len(),
                        mask.len()
                    )
                    .into());
                }
                Ok(ops::relu_backward(&mask, &upstream))
            }
            (LayerSpec::Sigmoid, LayerCache::Sigmoid { output }) => {
                if output.shape() != upstream.shape() {
                    return Err(format!(
                        "upstream gradient shape {:?} does not match output {:?}",
                        upstream.shape(),
                        output.shape()
                    )
                    .into());
                }
                Ok(ops::sigmoid_backward(&output, &upstream))
            }
            (LayerSpec::Flatten, LayerCache::Flatten { input_shape }) => {
                Ok(upstream.reshape(input_shape)?)
            }
            (LayerSpec::Dropout { .. }, LayerCache::Dropout { factors }) => {
                if factors.len() != upstream.len() {
                    return Err(format!(
                        "upstream gradient has {} elements, cache expects {}",
                        upstream.len(),
                        factors.len()
                    )
                    .into());
                }
                let data: Vec<T> = upstream
                    .data()
                    .iter()
                    .zip(&factors)
                    .map(|(&g, &f)| g * f)
                    .collect();
                Ok(Tensor::from_vec(upstream.shape().to_vec(), data)?)
            }
            _ => Err(LayerFail::Msg("cache does not match layer kind".into())),
        }
    }
}

fn accumulate<T: Element>(slot: &mut Tensor<T>, delta: &Tensor<T>) {
    debug_assert_eq!(slot.shape(), delta.shape());
    for (s, &d) in slot.data_mut().iter_mut().zip(delta.data()) {
        *s = *s + d;
    }
}

/// Ordered stack of layers with a declared per-sample input shape.
pub struct Network<T: Element> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    mode: Mode,
    rng: SeededRng,
}

impl<T: Element> Network<T> {
    /// Build a network with zero-initialized parameters. Fails if any spec is
    /// invalid or consecutive layer shapes do not compose for `input_shape`.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self, NetError> {
        let mut shape = input_shape.clone();
        for (index, spec) in specs.iter().enumerate() {
            spec.validate().map_err(|reason| NetError::Layer {
                index,
                layer: spec.name(),
                reason,
            })?;
            shape = spec.output_shape(&shape).map_err(|reason| NetError::Layer {
                index,
                layer: spec.name(),
                reason,
            })?;
        }
        Ok(Self {
            input_shape,
            layers: specs.into_iter().map(Layer::new).collect(),
            mode: Mode::Eval,
            rng: SeededRng::new(seed),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape obtained by composing every layer.
    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer
                .spec
                .output_shape(&shape)
                .expect("validated at construction");
        }
        shape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Reset the dropout stream. See [`SeededRng::reseed`].
    pub fn reseed(&mut self, seed: u64) {
        self.rng.reseed(seed);
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng.seed()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Number of layers carrying weights (conv + dense).
    pub fn weight_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.has_weights()).count()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .flat_map(|l| l.params.iter())
            .map(|p| p.value.len())
            .sum()
    }

    /// `(name, tensor)` pairs in network order, named `layer{i}.{weight,bias}`.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params
                    .iter()
                    .map(move |p| (format!("layer{i}.{}", p.name), &p.value))
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases, in layer order.
    pub fn init_glorot_uniform(&mut self, rng: &mut SeededRng) {
        for layer in &mut self.layers {
            if let Some((fan_in, fan_out)) = layer.spec.fans() {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in layer.params[0].value.data_mut() {
                    *v = T::from_f64(rng.uniform(-limit, limit));
                }
                layer.params[1].value.fill(T::ZERO);
            }
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), NetError> {
        let ok = input.ndim() == self.input_shape.len() + 1
            && input.shape()[1..] == self.input_shape[..]
            && input.shape()[0] >= 1;
        if ok {
            Ok(())
        } else {
            Err(NetError::InputShape {
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            })
        }
    }

    /// Apply the network to a batched input (`[N, ...input_shape]`). In train
    /// mode this records the caches [`Network::backward`] consumes.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(input)?;
        let mode = self.mode;
        let rng = &mut self.rng;
        let mut cur = input.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            cur = layer.forward(cur, mode, rng).map_err(|e| match e {
                LayerFail::NoCache => NetError::MissingCache { index },
                LayerFail::Msg(reason) => NetError::Layer {
                    index,
                    layer: layer.spec.name(),
                    reason,
                },
            })?;
        }
        Ok(cur)
    }

    /// Immutable eval-mode forward: dropout is identity, nothing is cached,
    /// no randomness is consumed. Safe to call concurrently.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(input)?;
        let mut cur = input.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            cur = layer.infer(cur).map_err(|e| match e {
                LayerFail::NoCache => NetError::MissingCache { index },
                LayerFail::Msg(reason) => NetError::Layer {
                    index,
                    layer: layer.spec.name(),
                    reason,
                },
            })?;
        }
        Ok(cur)
    }

    /// Chain-rule pass over the caches of the most recent train-mode forward.
    /// Parameter gradients accumulate into their slots; frozen layers keep
    /// zero parameter gradients but still propagate the input gradient.
    pub fn backward(&mut self, output_grad: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mut cur = output_grad.clone();
        for (index, layer) in self.layers.iter_mut().enumerate().rev() {
            cur = layer.backward(cur).map_err(|e| match e {
                LayerFail::NoCache => NetError::MissingCache { index },
                LayerFail::Msg(reason) => NetError::Layer {
                    index,
                    layer: layer.spec.name(),
                    reason,
                },
            })?;
        }
        Ok(cur)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in &mut layer.params {
                p.grad.fill(T::ZERO);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_fill, Dist};

    fn conv_spec(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> LayerSpec {
        LayerSpec::Conv2D {
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride,
            zero_pad: pad,
        }
    }

    fn single_layer_net(spec: LayerSpec, input_shape: Vec<usize>) -> Network<f64> {
        Network::new(input_shape, vec![spec], 0).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut net = single_layer_net(conv_spec(1, 1, 1, 1, 0), vec![1, 3, 3]);
        net.layers_mut()[0].params_mut()[0].value = Tensor::ones(&[1, 1, 1, 1]);
        let x: Tensor<f64> =
            rng_fill(&mut SeededRng::new(5), &[2, 1, 3, 3], Dist::uniform(-1.0, 1.0)).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_hand_cross_correlation() {
        // input [[1,2],[3,4]], kernel [[1,0],[0,1]], valid, bias 0 -> [[5]]
        let mut net = single_layer_net(conv_spec(1, 1, 2, 1, 0), vec![1, 2, 2]);
        net.layers_mut()[0].params_mut()[0].value =
            Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let mut net = single_layer_net(conv_spec(2, 3, 3, 1, 1), vec![2, 4, 4]);
        net.layers_mut()[0].params_mut()[1].value =
            Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let y = net.infer(&x).unwrap();
        for (o, chunk) in y.data().chunks(16).enumerate() {
            let b = [0.5, -1.0, 2.0][o];
            assert!(chunk.iter().all(|&v| v == b));
        }
    }

    #[test]
    fn conv_output_shape_formula_holds_across_geometries() {
        for (h, w, k, pad, stride) in [
            (8usize, 8usize, 3usize, 1usize, 1usize),
            (8, 6, 3, 0, 1),
            (9, 9, 3, 0, 2),
            (7, 7, 1, 0, 2),
            (5, 5, 5, 2, 1),
        ] {
            let spec = conv_spec(1, 2, k, stride, pad);
            let out = spec.output_shape(&[1, h, w]).unwrap();
            assert_eq!(out[1], (h + 2 * pad - k) / stride + 1);
            assert_eq!(out[2], (w + 2 * pad - k) / stride + 1);
            let mut net = single_layer_net(spec, vec![1, h, w]);
            net.init_glorot_uniform(&mut SeededRng::new(1));
            let x: Tensor<f64> =
                rng_fill(&mut SeededRng::new(2), &[1, 1, h, w], Dist::normal(0.0, 1.0)).unwrap();
            let y = net.infer(&x).unwrap();
            assert_eq!(y.shape()[2..], out[1..]);
        }
    }

    #[test]
    fn conv_rejects_non_integer_extent() {
        let spec = conv_spec(1, 1, 3, 2, 0);
        // (6 - 3) is not divisible by stride 2.
        assert!(spec.output_shape(&[1, 6, 6]).is_err());
    }

    #[test]
    fn maxpool_constant_input_is_constant() {
        let mut net = single_layer_net(LayerSpec::MaxPool2D { size: 2, stride: 2 }, vec![1, 4, 4]);
        let x = Tensor::full(&[1, 1, 4, 4], 3.25);
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn maxpool_hand_case_and_backward_routing() {
        let mut net = single_layer_net(LayerSpec::MaxPool2D { size: 2, stride: 2 }, vec![1, 2, 2]);
        net.set_mode(Mode::Train);
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = net.backward(&Tensor::ones(&[1, 1, 1, 1])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_ties_route_to_lowest_flat_index() {
        let mut net = single_layer_net(LayerSpec::MaxPool2D { size: 2, stride: 2 }, vec![1, 2, 2]);
        net.set_mode(Mode::Train);
        let x = Tensor::full(&[1, 1, 2, 2], 7.0);
        net.forward(&x).unwrap();
        let g = net.backward(&Tensor::ones(&[1, 1, 1, 1])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        let mut rng = SeededRng::new(77);
        for seed in 0..10u64 {
            let mut net =
                single_layer_net(LayerSpec::MaxPool2D { size: 2, stride: 1 }, vec![2, 5, 5]);
            net.set_mode(Mode::Train);
            let x: Tensor<f64> =
                rng_fill(&mut SeededRng::new(seed), &[2, 2, 5, 5], Dist::normal(0.0, 1.0))
                    .unwrap();
            net.forward(&x).unwrap();
            let up: Tensor<f64> =
                rng_fill(&mut rng, &[2, 2, 4, 4], Dist::uniform(-1.0, 1.0)).unwrap();
            let g = net.backward(&up).unwrap();
            assert!((g.sum() - up.sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_window_larger_than_input_errors() {
        let net = Network::<f64>::new(
            vec![1, 2, 2],
            vec![LayerSpec::MaxPool2D { size: 3, stride: 1 }],
            0,
        );
        assert!(net.is_err());
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let mut net = single_layer_net(
            LayerSpec::Dense { in_dim: 2, out_dim: 2 },
            vec![2],
        );
        net.layers_mut()[0].params_mut()[0].value = Tensor::eye(2);
        let x = Tensor::from_vec(vec![1, 2], vec![-1.5, 2.5]).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), x.data());

        let mut net2 = single_layer_net(
            LayerSpec::Dense { in_dim: 2, out_dim: 1 },
            vec![2],
        );
        net2.layers_mut()[0].params_mut()[0].value =
            Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap();
        net2.layers_mut()[0].params_mut()[1].value = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        let x = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(net2.infer(&x).unwrap().data(), &[3.5]);
    }

    #[test]
    fn dense_zero_upstream_gives_zero_param_grads() {
        let mut net = single_layer_net(
            LayerSpec::Dense { in_dim: 3, out_dim: 2 },
            vec![3],
        );
        net.init_glorot_uniform(&mut SeededRng::new(3));
        net.set_mode(Mode::Train);
        let x: Tensor<f64> =
            rng_fill(&mut SeededRng::new(4), &[4, 3], Dist::normal(0.0, 1.0)).unwrap();
        net.forward(&x).unwrap();
        net.zero_grad();
        let g = net.backward(&Tensor::zeros(&[4, 2])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        for p in net.layers()[0].params() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dense_identity_jacobian_passes_gradient_through() {
        let mut net = single_layer_net(
            LayerSpec::Dense { in_dim: 2, out_dim: 2 },
            vec![2],
        );
        net.layers_mut()[0].params_mut()[0].value = Tensor::eye(2);
        net.set_mode(Mode::Train);
        let x = Tensor::from_vec(vec![1, 2], vec![0.3, -0.7]).unwrap();
        net.forward(&x).unwrap();
        let up = Tensor::from_vec(vec![1, 2], vec![2.0, -3.0]).unwrap();
        let g = net.backward(&up).unwrap();
        assert_eq!(g.data(), up.data());
    }

    #[test]
    fn activation_values_match_definitions() {
        let mut relu = single_layer_net(LayerSpec::ReLU, vec![2]);
        let x = Tensor::from_vec(vec![1, 2], vec![-3.0, 3.0]).unwrap();
        assert_eq!(relu.infer(&x).unwrap().data(), &[0.0, 3.0]);

        let mut sig = single_layer_net(LayerSpec::Sigmoid, vec![1]);
        sig.set_mode(Mode::Train);
        let zero = Tensor::from_vec(vec![1, 1], vec![0.0]).unwrap();
        let y = sig.forward(&zero).unwrap();
        assert_eq!(y.data(), &[0.5]);
        // derivative at 0 is s(1-s) = 0.25
        let g = sig.backward(&Tensor::ones(&[1, 1])).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn relu_derivative_at_exact_zero_is_zero() {
        let mut net = single_layer_net(LayerSpec::ReLU, vec![3]);
        net.set_mode(Mode::Train);
        let x = Tensor::from_vec(vec![1, 3], vec![-1.0, 0.0, 1.0]).unwrap();
        net.forward(&x).unwrap();
        let g = net.backward(&Tensor::ones(&[1, 3])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_idempotent_and_sigmoid_symmetry() {
        let mut rng = SeededRng::new(12);
        let x: Tensor<f64> = rng_fill(&mut rng, &[1, 64], Dist::normal(0.0, 3.0)).unwrap();
        let relu = single_layer_net(LayerSpec::ReLU, vec![64]);
        let once = relu.infer(&x).unwrap();
        let twice = relu.infer(&once).unwrap();
        assert_eq!(once, twice);

        let sig = single_layer_net(LayerSpec::Sigmoid, vec![64]);
        let pos = sig.infer(&x).unwrap();
        let neg = sig.infer(&x.mul_scalar(-1.0)).unwrap();
        for (a, b) in pos.data().iter().zip(neg.data()) {
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_network_is_identity() {
        let mut net = Network::<f32>::new(vec![3], vec![], 0).unwrap();
        let x = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
        net.set_mode(Mode::Train);
        net.forward(&x).unwrap();
        let g = Tensor::ones(&[2, 3]);
        assert_eq!(net.backward(&g).unwrap(), g);
    }

    #[test]
    fn dropout_eval_mode_is_identity_without_rng_consumption() {
        let mut net = single_layer_net(LayerSpec::Dropout { rate: 0.5 }, vec![8]);
        net.reseed(99);
        let x: Tensor<f64> =
            rng_fill(&mut SeededRng::new(1), &[2, 8], Dist::uniform(-1.0, 1.0)).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(net.rng_seed(), 99);
        // The stream was not touched: a train forward now matches a fresh one.
        net.set_mode(Mode::Train);
        let a = net.forward(&x).unwrap();
        net.reseed(99);
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut net = single_layer_net(LayerSpec::Dropout { rate: 0.5 }, vec![1000]);
        net.set_mode(Mode::Train);
        net.reseed(5);
        let x = Tensor::ones(&[1, 1000]);
        let y = net.forward(&x).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!((300..700).contains(&kept), "kept {kept} of 1000");
    }

    #[test]
    fn two_step_hand_trace_dense_relu() {
        let mut net = Network::<f64>::new(
            vec![2],
            vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 2 },
                LayerSpec::ReLU,
            ],
            0,
        )
        .unwrap();
        net.layers_mut()[0].params_mut()[0].value = Tensor::eye(2);
        let x = Tensor::from_vec(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(net.infer(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_error_names_offending_layer() {
        let mut net = Network::<f32>::new(
            vec![4],
            vec![
                LayerSpec::ReLU,
                LayerSpec::Dense { in_dim: 4, out_dim: 2 },
            ],
            0,
        )
        .unwrap();
        // Composition was validated for [4]; feed a batch with the wrong width.
        let bad = Tensor::zeros(&[2, 4]);
        assert!(net.forward(&bad).is_ok());
        let worse = Tensor::zeros(&[2, 5]);
        match net.forward(&worse) {
            Err(NetError::InputShape { .. }) => {}
            other => panic!("expected input-shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_without_forward_reports_missing_cache() {
        let mut net = single_layer_net(LayerSpec::ReLU, vec![2]);
        let err = net.backward(&Tensor::ones(&[1, 2])).unwrap_err();
        assert!(matches!(err, NetError::MissingCache { index: 0 }));
    }

    #[test]
    fn train_mode_dropout_masks_replay_with_same_seed() {
        let make = || {
            let mut net = Network::<f64>::new(
                vec![16],
                vec![LayerSpec::Dropout { rate: 0.3 }],
                42,
            )
            .unwrap();
            net.set_mode(Mode::Train);
            net
        };
        let x = Tensor::ones(&[3, 16]);
        let mut a = make();
        let mut b = make();
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }
}
