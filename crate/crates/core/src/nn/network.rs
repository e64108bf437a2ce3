use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::kernels::{self, ConvGeometry};
use super::layer::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weight and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    fn zeros_like(other: &Params) -> Params {
        Params {
            weight: Tensor::zeros(other.weight.shape()),
            bias: Tensor::zeros(other.bias.shape()),
        }
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.data_mut().iter_mut().zip(other.bias.data()) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f32) {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
    }
}

/// Gradients of the mean cross-entropy loss, one entry per layer.
///
/// Entries are `None` for layers without parameters and for frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<Params>>,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .layers
                .iter()
                .flatten()
                .all(|p| p.weight.is_finite() && p.bias.is_finite())
    }
}

/// Per-layer outputs of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchActivations {
    pub input: Tensor,
    /// `outputs[l]` has shape `[batch, ..layer l output]`; the last entry holds the logits.
    pub outputs: Vec<Tensor>,
    /// Softmax over the logits, `[batch, num_classes]`.
    pub probabilities: Tensor,
}

impl BatchActivations {
    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    params: Vec<Option<Params>>,
    class_scores: Vec<i32>,
    shapes: Vec<Vec<usize>>,
}

fn check_scores(class_scores: &[i32]) -> Result<()> {
    if class_scores.len() < 2 {
        return Err(Error::Build("at least two class scores are required".into()));
    }
    if class_scores.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Build("class_scores not strictly increasing".into()));
    }
    Ok(())
}

fn infer_shapes(input_shape: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input_shape.contains(&0) {
        return Err(Error::Build(format!("input shape {input_shape:?} has a zero dimension")));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        current = layer.output_shape(i, &current)?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

fn he_init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Option<Params> {
    let (w_shape, b_shape) = spec.param_shapes()?;
    let std = (2.0 / spec.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let len: usize = w_shape.iter().product();
    let weight: Vec<f32> = (0..len).map(|_| normal.sample(rng) as f32).collect();
    Some(Params {
        weight: Tensor::new(w_shape, weight).expect("shape matches length"),
        bias: Tensor::zeros(&b_shape),
    })
}

/// He init with each weight column centered across output units, so the
/// head's logits sum to zero. Cross-entropy gradients keep that sum fixed,
/// which pins the absolute logit level that sigmoid memberships read.
fn head_init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Option<Params> {
    let mut params = he_init(spec, rng)?;
    let LayerKind::Dense {
        in_features,
        out_features,
    } = spec.kind
    else {
        return Some(params);
    };
    let w = params.weight.data_mut();
    for j in 0..in_features {
        let mean = (0..out_features).map(|k| w[k * in_features + j] as f64).sum::<f64>() / out_features as f64;
        for k in 0..out_features {
            w[k * in_features + j] -= mean as f32;
        }
    }
    Some(params)
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / sum) as f32).collect()
}

/// Logistic function, kept strictly inside (0, 1) even when `exp` saturates.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and the logit gradient for one sample.
fn cross_entropy(logits: &[f32], target: usize) -> (f64, Vec<f32>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&z| (z as f64 - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[target] as f64;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let p = (z as f64 - lse).exp();
            (if i == target { p - 1.0 } else { p }) as f32
        })
        .collect();
    (loss, grad)
}

impl Network {
    /// Builds a network with seeded He fan-in weights and zero biases.
    pub fn build(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        class_scores: Vec<i32>,
        seed: u64,
    ) -> Result<Network> {
        check_scores(&class_scores)?;
        let shapes = infer_shapes(input_shape, &layers)?;
        match layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Dense { out_features, .. },
                ..
            }) if *out_features == class_scores.len() => {}
            Some(LayerSpec {
                kind: LayerKind::Dense { out_features, .. },
                ..
            }) => {
                return Err(Error::Build(format!(
                    "head has {out_features} outputs but {} class scores were given",
                    class_scores.len()
                )))
            }
            _ => return Err(Error::Build("last layer must be a Dense head".into())),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, l)| if i == last { head_init(l, &mut rng) } else { he_init(l, &mut rng) })
            .collect();
        Ok(Network {
            input_shape,
            layers,
            params,
            class_scores,
            shapes,
        })
    }

    /// Reassembles a network from stored parts, re-checking every invariant.
    pub(crate) fn from_parts(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        params: Vec<Option<Params>>,
        class_scores: Vec<i32>,
    ) -> Result<Network> {
        let mut net = Network::build(input_shape, layers, class_scores, 0)?;
        for (i, (slot, p)) in net.params.iter_mut().zip(params).enumerate() {
            match (slot.as_ref(), p) {
                (Some(s), Some(p))
                    if s.weight.shape() == p.weight.shape() && s.bias.shape() == p.bias.shape() =>
                {
                    *slot = Some(p)
                }
                (None, None) => {}
                _ => return Err(Error::Build(format!("parameter block for layer {i} does not match its spec"))),
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    pub fn class_scores(&self) -> &[i32] {
        &self.class_scores
    }

    pub fn num_classes(&self) -> usize {
        self.class_scores.len()
    }

    /// Output shape of layer `index`, without the batch axis.
    pub fn layer_output_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn set_trainable(&mut self, index: usize, trainable: bool) {
        self.layers[index].trainable = trainable;
    }

    /// Marks every Conv layer as frozen.
    pub fn freeze_convolutions(&mut self) {
        for layer in &mut self.layers {
            if matches!(layer.kind, LayerKind::Conv { .. }) {
                layer.trainable = false;
            }
        }
    }

    /// Copies every parameter, re-dimensioning and re-initializing only the final Dense layer.
    pub fn replace_head(&self, new_class_scores: Vec<i32>, seed: u64) -> Result<Network> {
        check_scores(&new_class_scores)?;
        let mut layers = self.layers.clone();
        let head = layers.last_mut().expect("validated at build");
        let LayerKind::Dense { in_features, .. } = head.kind else {
            unreachable!("head is Dense by construction")
        };
        head.kind = LayerKind::Dense {
            in_features,
            out_features: new_class_scores.len(),
        };
        let head = *head;
        let shapes = infer_shapes(self.input_shape, &layers)?;
        let mut params = self.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        *params.last_mut().expect("head exists") = head_init(&head, &mut rng);
        Ok(Network {
            input_shape: self.input_shape,
            layers,
            params,
            class_scores: new_class_scores,
            shapes,
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape.to_vec(),
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn conv_geometry(&self, index: usize) -> ConvGeometry {
        let LayerKind::Conv {
            kernel_size,
            stride,
            padding,
            ..
        } = self.layers[index].kind
        else {
            unreachable!("conv geometry requested for a non-conv layer")
        };
        let input = self.layer_input_shape(index);
        let output = &self.shapes[index];
        ConvGeometry {
            channels: input[0],
            height: input[1],
            width: input[2],
            kernel: kernel_size,
            stride,
            padding,
            out_height: output[1],
            out_width: output[2],
        }
    }

    fn layer_input_shape(&self, index: usize) -> &[usize] {
        if index == 0 {
            &self.input_shape
        } else {
            &self.shapes[index - 1]
        }
    }

    fn layer_forward(&self, index: usize, input: &[f32]) -> Vec<f32> {
        let spec = &self.layers[index];
        match spec.kind {
            LayerKind::Conv { out_channels, .. } => {
                let g = self.conv_geometry(index);
                let p = self.params[index].as_ref().expect("conv has params");
                let pixels = g.pixels();
                let mut col = vec![0.0; g.rows() * pixels];
                kernels::im2col(&g, input, &mut col);
                let mut out = vec![0.0; out_channels * pixels];
                for (o, &b) in p.bias.data().iter().enumerate() {
                    out[o * pixels..(o + 1) * pixels].fill(b);
                }
                kernels::matmul_acc(out_channels, g.rows(), pixels, p.weight.data(), &col, &mut out);
                out
            }
            LayerKind::ReLU => input.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::MaxPool { window, stride } => {
                let [c, h, w] = self.layer_input_shape(index)[..] else {
                    unreachable!()
                };
                let (oh, ow) = (self.shapes[index][1], self.shapes[index][2]);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    let plane = &input[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            for dy in 0..window {
                                for dx in 0..window {
                                    best = best.max(plane[(oy * stride + dy) * w + ox * stride + dx]);
                                }
                            }
                            out.push(best);
                        }
                    }
                }
                out
            }
            LayerKind::Flatten => input.to_vec(),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let p = self.params[index].as_ref().expect("dense has params");
                let w = p.weight.data();
                (0..out_features)
                    .map(|o| p.bias.data()[o] + kernels::dot(&w[o * in_features..(o + 1) * in_features], input))
                    .collect()
            }
        }
    }

    /// Runs one `C×H×W` sample through the first `upto` layers.
    fn sample_forward(&self, input: &[f32], upto: usize) -> Vec<Vec<f32>> {
        let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(upto);
        for i in 0..upto {
            let out = self.layer_forward(i, outputs.last().map_or(input, Vec::as_slice));
            outputs.push(out);
        }
        outputs
    }

    /// Backpropagates cross-entropy for one sample, returning its loss and per-layer gradients.
    fn sample_backward(&self, input: &[f32], outputs: &[Vec<f32>], target: usize) -> (f64, Vec<Option<Params>>) {
        let (loss, mut grad) = cross_entropy(outputs.last().expect("non-empty"), target);
        let first_trainable = self.layers.iter().position(|l| l.has_params() && l.trainable);
        let mut grads: Vec<Option<Params>> = vec![None; self.layers.len()];
        let Some(first_trainable) = first_trainable else {
            return (loss, grads);
        };

        for index in (first_trainable..self.layers.len()).rev() {
            let spec = &self.layers[index];
            let layer_in = if index == 0 { input } else { &outputs[index - 1] };
            let need_input_grad = index > first_trainable;
            match spec.kind {
                LayerKind::Conv { out_channels, .. } => {
                    let g = self.conv_geometry(index);
                    let p = self.params[index].as_ref().expect("conv has params");
                    let pixels = g.pixels();
                    let mut col = vec![0.0; g.rows() * pixels];
                    if spec.trainable {
                        kernels::im2col(&g, layer_in, &mut col);
                        let mut gp = Params::zeros_like(p);
                        kernels::matmul_a_bt_acc(out_channels, pixels, g.rows(), &grad, &col, gp.weight.data_mut());
                        for (o, b) in gp.bias.data_mut().iter_mut().enumerate() {
                            *b = grad[o * pixels..(o + 1) * pixels].iter().sum();
                        }
                        grads[index] = Some(gp);
                    }
                    if need_input_grad {
                        col.fill(0.0);
                        kernels::matmul_at_b_acc(out_channels, g.rows(), pixels, p.weight.data(), &grad, &mut col);
                        let mut dx = vec![0.0; layer_in.len()];
                        kernels::col2im_acc(&g, &col, &mut dx);
                        grad = dx;
                    }
                }
                LayerKind::ReLU => {
                    for (gv, &out) in grad.iter_mut().zip(&outputs[index]) {
                        if out <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                LayerKind::MaxPool { window, stride } => {
                    let [c, h, w] = self.layer_input_shape(index)[..] else {
                        unreachable!()
                    };
                    let (oh, ow) = (self.shapes[index][1], self.shapes[index][2]);
                    let mut dx = vec![0.0; layer_in.len()];
                    for ch in 0..c {
                        let base = ch * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                // first maximum in scan order receives the gradient
                                let mut best = base + oy * stride * w + ox * stride;
                                for dy in 0..window {
                                    for dx_ in 0..window {
                                        let at = base + (oy * stride + dy) * w + ox * stride + dx_;
                                        if layer_in[at] > layer_in[best] {
                                            best = at;
                                        }
                                    }
                                }
                                dx[best] += grad[(ch * oh + oy) * ow + ox];
                            }
                        }
                    }
                    grad = dx;
                }
                LayerKind::Flatten => {}
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let p = self.params[index].as_ref().expect("dense has params");
                    if spec.trainable {
                        let mut gp = Params::zeros_like(p);
                        let gw = gp.weight.data_mut();
                        for o in 0..out_features {
                            if grad[o] != 0.0 {
                                kernels::axpy(grad[o], layer_in, &mut gw[o * in_features..(o + 1) * in_features]);
                            }
                        }
                        gp.bias.data_mut().copy_from_slice(&grad);
                        grads[index] = Some(gp);
                    }
                    if need_input_grad {
                        let w = p.weight.data();
                        let mut dx = vec![0.0; in_features];
                        for o in 0..out_features {
                            if grad[o] != 0.0 {
                                kernels::axpy(grad[o], &w[o * in_features..(o + 1) * in_features], &mut dx);
                            }
                        }
                        grad = dx;
                    }
                }
            }
        }
        (loss, grads)
    }

    /// Sums per-sample gradients in sample order and averages them.
    fn reduce(&self, per_sample: Vec<(f64, Vec<Option<Params>>)>) -> Gradients {
        let count = per_sample.len();
        let mut total_loss = 0.0;
        let mut layers: Vec<Option<Params>> = vec![None; self.layers.len()];
        for (loss, grads) in per_sample {
            total_loss += loss;
            for (acc, g) in layers.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        let inv = 1.0 / count as f32;
        layers.iter_mut().flatten().for_each(|p| p.scale(inv));
        Gradients {
            layers,
            loss: total_loss / count as f64,
        }
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        if let Some(&index) = targets.iter().find(|&&t| t >= self.num_classes()) {
            return Err(Error::TargetOutOfRange {
                index,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Forward pass over a `B×C×H×W` batch, keeping every layer output.
    pub fn forward(&self, batch: &Tensor) -> Result<BatchActivations> {
        let shape = batch.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: [&[0usize][..], &self.input_shape[..]].concat(),
                actual: shape.to_vec(),
            });
        }
        self.check_input(&shape[1..])?;
        let b = shape[0];
        let per_sample = batch.len() / b;
        let samples: Vec<Vec<Vec<f32>>> = batch
            .data()
            .par_chunks(per_sample)
            .map(|x| self.sample_forward(x, self.layers.len()))
            .collect();

        let mut outputs = Vec::with_capacity(self.layers.len());
        for (l, layer_shape) in self.shapes.iter().enumerate() {
            let data: Vec<f32> = samples.iter().flat_map(|s| s[l].iter().copied()).collect();
            let mut full = vec![b];
            full.extend_from_slice(layer_shape);
            outputs.push(Tensor::new(full, data)?);
        }
        let probs: Vec<f32> = samples
            .iter()
            .flat_map(|s| softmax(s.last().expect("non-empty")))
            .collect();
        Ok(BatchActivations {
            input: batch.clone(),
            outputs,
            probabilities: Tensor::new(vec![b, self.num_classes()], probs)?,
        })
    }

    /// Mean cross-entropy gradients for activations produced by [`Network::forward`].
    pub fn backward(&self, acts: &BatchActivations, targets: &[usize]) -> Result<Gradients> {
        self.check_targets(targets)?;
        let b = acts.input.shape()[0];
        if targets.len() != b {
            return Err(Error::ShapeMismatch {
                expected: vec![b],
                actual: vec![targets.len()],
            });
        }
        let in_len = acts.input.len() / b;
        let per_sample: Vec<_> = (0..b)
            .into_par_iter()
            .map(|i| {
                let outputs: Vec<Vec<f32>> = acts
                    .outputs
                    .iter()
                    .map(|t| {
                        let n = t.len() / b;
                        t.data()[i * n..(i + 1) * n].to_vec()
                    })
                    .collect();
                self.sample_backward(&acts.input.data()[i * in_len..(i + 1) * in_len], &outputs, targets[i])
            })
            .collect();
        Ok(self.reduce(per_sample))
    }

    /// Fused forward+backward over `C×H×W` inputs, used by the training loop.
    pub(crate) fn batch_gradients(&self, inputs: &[&[f32]], targets: &[usize]) -> Result<Gradients> {
        self.check_targets(targets)?;
        let per_sample: Vec<_> = inputs
            .par_iter()
            .zip(targets.par_iter())
            .map(|(x, &t)| {
                let outputs = self.sample_forward(x, self.layers.len());
                self.sample_backward(x, &outputs, t)
            })
            .collect();
        Ok(self.reduce(per_sample))
    }

    /// Final-layer logits for one `C×H×W` input.
    pub(crate) fn logits_chw(&self, input: &[f32]) -> Vec<f32> {
        self.sample_forward(input, self.layers.len())
            .pop()
            .expect("non-empty")
    }

    /// Final-layer logits (pre-softmax) for one `H×W×C` image.
    pub fn logits(&self, image: &Tensor) -> Result<Vec<f32>> {
        let chw = image.hwc_to_chw()?;
        self.check_input(chw.shape())?;
        Ok(self.logits_chw(chw.data()))
    }

    pub fn softmax_probabilities(&self, image: &Tensor) -> Result<Vec<f32>> {
        Ok(softmax(&self.logits(image)?))
    }

    /// Sigmoid of each final-layer logit; values lie in (0, 1) and need not sum to 1.
    pub fn fc_likelihoods(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(image)?.iter().map(|&z| sigmoid(z as f64)).collect())
    }

    /// Output maps of the first Conv layer, one `H×W` tensor per channel.
    ///
    /// With `post_activation`, a ReLU directly after the conv is applied.
    pub fn conv1_feature_maps(&self, image: &Tensor, post_activation: bool) -> Result<Vec<Tensor>> {
        let chw = image.hwc_to_chw()?;
        self.check_input(chw.shape())?;
        self.conv1_feature_maps_chw(chw.data(), post_activation)
    }

    pub(crate) fn conv1_feature_maps_chw(&self, input: &[f32], post_activation: bool) -> Result<Vec<Tensor>> {
        let conv = self
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .ok_or(Error::NoConvLayer)?;
        let relu_follows = matches!(self.layers.get(conv + 1).map(|l| l.kind), Some(LayerKind::ReLU));
        let upto = if post_activation && relu_follows { conv + 2 } else { conv + 1 };
        let out = self.sample_forward(input, upto).pop().expect("non-empty");
        let [c, h, w] = self.shapes[conv][..] else {
            unreachable!()
        };
        Ok((0..c)
            .map(|ch| Tensor::new(vec![h, w], out[ch * h * w..(ch + 1) * h * w].to_vec()).expect("plane"))
            .collect())
    }

    /// Highest-probability class score; the lowest index wins ties.
    pub fn classify(&self, image: &Tensor) -> Result<i32> {
        Ok(self.class_scores[argmax(&self.softmax_probabilities(image)?)])
    }
}
