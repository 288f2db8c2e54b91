//! Layers, network assembly and backpropagation.
//!
//! A [`Network`] is a [`NetworkSpec`] (the layer list, serialized as JSON in
//! checkpoints) plus one [`WeightGroup`] per dense or convolutional layer. Dense
//! weights are stored `in × out`, convolution kernels `out × in × 5 × 5`.
//!
//! Training runs mean cross-entropy over the softmax output. Dropout is inverted:
//! kept activations are scaled by `1/(1-rate)` in train mode and eval mode is the
//! identity.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::QuantizerSpec;
use crate::rng::Rng;
use crate::tensor::{self, col2im, im2col, matmul_into, pooled_len, Tensor, KERNEL};

/// Dropout rate on every FFDNN hidden layer.
pub const FFDNN_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { name: String, units: usize },
    Conv5x5 { name: String, maps: usize },
    Maxpool2,
    Relu,
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    fn group_name(&self) -> Option<&str> {
        match self {
            LayerSpec::Dense { name, .. } | LayerSpec::Conv5x5 { name, .. } => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Per-sample output shape of every layer, validating the stack on the way.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape must be non-empty and positive, got {:?}",
                self.input_shape
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) => {}
            _ => return Err(Error::Config("the output layer must be softmax".into())),
        }
        let mut names = std::collections::HashSet::new();
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(name) = layer.group_name() {
                if !names.insert(name.to_string()) {
                    return Err(Error::Config(format!("duplicate weight group {name:?}")));
                }
            }
            shape = match layer {
                LayerSpec::Dense { units, .. } => {
                    if *units == 0 {
                        return Err(Error::Config(format!("layer {i}: dense units must be positive")));
                    }
                    vec![*units]
                }
                LayerSpec::Conv5x5 { maps, .. } => {
                    if shape.len() != 3 || *maps == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: conv5x5 needs a C×H×W input and positive map count, got {shape:?}"
                        )));
                    }
                    vec![*maps, shape[1], shape[2]]
                }
                LayerSpec::Maxpool2 => {
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {i}: maxpool2 needs a C×H×W input, got {shape:?}"
                        )));
                    }
                    vec![shape[0], pooled_len(shape[1]), pooled_len(shape[2])]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout rate must be in [0, 1), got {rate}"
                        )));
                    }
                    shape
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Config("softmax must be the last layer".into()));
                    }
                    if shape != [self.classes] {
                        return Err(Error::Config(format!(
                            "softmax input {shape:?} does not match {} classes",
                            self.classes
                        )));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }
}

/// FFDNN layer list: `In → [dense, ReLU, dropout] × L → dense → softmax`.
pub fn ffdnn_spec(
    input_dim: usize,
    hidden_units: usize,
    hidden_layers: usize,
    output_dim: usize,
    dropout: f64,
) -> Result<NetworkSpec> {
    if input_dim == 0 || output_dim == 0 || (hidden_layers > 0 && hidden_units == 0) {
        return Err(Error::Config(format!(
            "ffdnn dimensions must be positive (input {input_dim}, hidden {hidden_units}, output {output_dim})"
        )));
    }
    let mut layers = Vec::new();
    for k in 0..hidden_layers {
        let from = if k == 0 { "In".to_string() } else { format!("h{k}") };
        layers.push(LayerSpec::Dense {
            name: format!("{from}-h{}", k + 1),
            units: hidden_units,
        });
        layers.push(LayerSpec::Relu);
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: dropout });
        }
    }
    let from = if hidden_layers == 0 {
        "In".to_string()
    } else {
        format!("h{hidden_layers}")
    };
    layers.push(LayerSpec::Dense {
        name: format!("{from}-out"),
        units: output_dim,
    });
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec {
        input_shape: vec![input_dim],
        classes: output_dim,
        layers,
    };
    spec.layer_shapes()?;
    Ok(spec)
}

/// CNN layer list: `[conv5x5, ReLU, maxpool2]` per map count, then
/// `dense(fc_units) → ReLU → dense(classes) → softmax`. Groups are named
/// `C1..Ck`, `FC`, `Out`.
pub fn cnn_spec(map_counts: &[usize], input_shape: [usize; 3], fc_units: usize, classes: usize) -> Result<NetworkSpec> {
    if map_counts.is_empty() {
        return Err(Error::Config("cnn needs at least one convolution level".into()));
    }
    let mut layers = Vec::new();
    for (k, &maps) in map_counts.iter().enumerate() {
        layers.push(LayerSpec::Conv5x5 {
            name: format!("C{}", k + 1),
            maps,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Maxpool2);
    }
    layers.push(LayerSpec::Dense {
        name: "FC".into(),
        units: fc_units,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense {
        name: "Out".into(),
        units: classes,
    });
    layers.push(LayerSpec::Softmax);
    let spec = NetworkSpec {
        input_shape: input_shape.to_vec(),
        classes,
        layers,
    };
    spec.layer_shapes()?;
    Ok(spec)
}

pub fn build_ffdnn(
    input_dim: usize,
    hidden_units: usize,
    hidden_layers: usize,
    output_dim: usize,
    rng: &mut Rng,
) -> Result<Network> {
    let spec = ffdnn_spec(input_dim, hidden_units, hidden_layers, output_dim, FFDNN_DROPOUT)?;
    Network::new(spec, rng)
}

/// CIFAR-sized CNN: 3×32×32 input, 64-unit fully connected layer, 10 classes.
pub fn build_cnn(map_counts: &[usize], rng: &mut Rng) -> Result<Network> {
    Network::new(cnn_spec(map_counts, [3, 32, 32], 64, 10)?, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightGroup {
    pub name: String,
    pub weights: Tensor,
    /// Never quantized.
    pub bias: Tensor,
    /// Floating-point master copy while the exposed weights are quantized.
    pub shadow_weights: Option<Tensor>,
    pub quantizer: Option<QuantizerSpec>,
}

impl WeightGroup {
    /// Fan-in of one output unit.
    pub fn fan_in(&self) -> usize {
        self.weights.len() / self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    groups: Vec<WeightGroup>,
    /// Bumped on every mutable access to the weights; caches remember it.
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.groups == other.groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Mask(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Activations retained by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    generation: u64,
    /// Input of every layer, followed by the final output.
    activations: Vec<Tensor>,
    aux: Vec<Aux>,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds the output")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupGrad {
    pub dw: Tensor,
    pub db: Tensor,
}

/// Gradients of the mean cross-entropy, one entry per weight group.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub groups: Vec<GroupGrad>,
}

impl Network {
    /// Builds a network with He-uniform weights (half-width `sqrt(6/fan_in)`) and zero biases.
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut groups = Vec::new();
        let mut prev = spec.input_shape.clone();
        for (layer, out) in spec.layers.iter().zip(&shapes) {
            let wshape = match layer {
                LayerSpec::Dense { units, .. } => vec![prev.iter().product(), *units],
                LayerSpec::Conv5x5 { maps, .. } => vec![*maps, prev[0], KERNEL, KERNEL],
                _ => {
                    prev = out.clone();
                    continue;
                }
            };
            let units = match layer {
                LayerSpec::Dense { units, .. } => *units,
                LayerSpec::Conv5x5 { maps, .. } => *maps,
                _ => unreachable!(),
            };
            let n: usize = wshape.iter().product();
            let fan_in = n / units;
            let half = (6.0 / fan_in as f64).sqrt();
            let data = (0..n).map(|_| rng.uniform_range(-half, half)).collect();
            groups.push(WeightGroup {
                name: layer.group_name().unwrap().to_string(),
                weights: Tensor::new(wshape, data)?,
                bias: Tensor::zeros(&[units]),
                shadow_weights: None,
                quantizer: None,
            });
            prev = out.clone();
        }
        Ok(Self {
            spec,
            groups,
            generation: 0,
        })
    }

    /// Reassembles a network from explicit groups, checking shapes against `spec`.
    pub fn from_parts(spec: NetworkSpec, groups: Vec<WeightGroup>) -> Result<Self> {
        let template = Network::new(spec.clone(), &mut Rng::new(0))?;
        if template.groups.len() != groups.len() {
            return Err(Error::Format(format!(
                "spec declares {} weight groups, found {}",
                template.groups.len(),
                groups.len()
            )));
        }
        for (t, g) in template.groups.iter().zip(&groups) {
            if t.name != g.name || t.weights.shape() != g.weights.shape() || t.bias.shape() != g.bias.shape() {
                return Err(Error::Format(format!(
                    "weight group {:?} {:?}/{:?} does not match spec group {:?} {:?}/{:?}",
                    g.name,
                    g.weights.shape(),
                    g.bias.shape(),
                    t.name,
                    t.weights.shape(),
                    t.bias.shape()
                )));
            }
            if let Some(s) = &g.shadow_weights {
                if s.shape() != g.weights.shape() {
                    return Err(Error::Format(format!(
                        "shadow weights of {:?} have shape {:?}, expected {:?}",
                        g.name,
                        s.shape(),
                        g.weights.shape()
                    )));
                }
            }
        }
        Ok(Self {
            spec,
            groups,
            generation: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn groups(&self) -> &[WeightGroup] {
        &self.groups
    }

    /// Mutable access to the weight groups; invalidates outstanding caches.
    pub fn groups_mut(&mut self) -> &mut [WeightGroup] {
        self.generation += 1;
        &mut self.groups
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.name.as_str()).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.groups.iter().map(|g| g.weights.len()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.groups.iter().map(|g| g.bias.len()).sum()
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn is_quantized(&self) -> bool {
        self.groups.iter().any(|g| g.quantizer.is_some())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.shape().len() < 2 || batch.shape()[1..] != self.spec.input_shape[..] {
            let mut expect = vec![0];
            expect.extend_from_slice(&self.spec.input_shape);
            return Err(Error::dim("forward", batch.shape(), &expect));
        }
        Ok(batch.rows())
    }

    /// Runs the batch through every layer, returning softmax probabilities and
    /// the activations needed for [`Network::backward`].
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)> {
        let n = self.check_batch(batch)?;
        let shapes = self.spec.layer_shapes()?;
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.spec.layers.len());
        let mut x = batch.clone();
        let mut in_shape = self.spec.input_shape.clone();
        let mut gi = 0;
        for (layer, out_shape) in self.spec.layers.iter().zip(&shapes) {
            let mut full = vec![n];
            full.extend_from_slice(out_shape);
            let (y, a) = match layer {
                LayerSpec::Dense { .. } => {
                    let y = dense_forward(&x, &self.groups[gi], n, &full);
                    gi += 1;
                    (y, Aux::None)
                }
                LayerSpec::Conv5x5 { .. } => {
                    let y = conv_forward(&x, &self.groups[gi], n, &in_shape, &full);
                    gi += 1;
                    (y, Aux::None)
                }
                LayerSpec::Maxpool2 => {
                    let (y, idx) = pool_forward(&x, n, &in_shape, &full)?;
                    (y, Aux::Argmax(idx))
                }
                LayerSpec::Relu => (x.map(|v| v.max(0.0)), Aux::None),
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Eval => (x.clone(), Aux::None),
                    Mode::Train => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.uniform() < *rate { 0.0 } else { keep })
                            .collect();
                        let mut y = x.clone();
                        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        (y, Aux::Mask(mask))
                    }
                },
                LayerSpec::Softmax => (softmax_rows(&x), Aux::None),
            };
            activations.push(std::mem::replace(&mut x, y));
            aux.push(a);
            in_shape = out_shape.clone();
        }
        let probs = x.clone();
        activations.push(x);
        Ok((
            probs,
            Cache {
                generation: self.generation,
                activations,
                aux,
            },
        ))
    }

    /// Eval-mode probabilities without keeping a cache.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let (p, _) = self.forward(batch, Mode::Eval, &mut Rng::new(0))?;
        Ok(p)
    }

    /// Gradients of the mean cross-entropy with respect to the weights used in
    /// the forward pass that produced `cache`.
    pub fn backward(&self, cache: &Cache, targets: &[usize]) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::Usage(
                "cache is stale: the network weights changed after the forward pass".into(),
            ));
        }
        let probs = cache.output();
        let n = probs.rows();
        if targets.len() != n {
            return Err(Error::dim("backward", &[targets.len()], probs.shape()));
        }
        let classes = self.spec.classes;
        let mut grad = probs.clone();
        for (i, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Config(format!("target {t} out of range for {classes} classes")));
            }
            grad.data_mut()[i * classes + t] -= 1.0;
        }
        let scale = 1.0 / n as f64;
        for g in grad.data_mut() {
            *g *= scale;
        }

        let shapes = self.spec.layer_shapes()?;
        let mut out: Vec<Option<GroupGrad>> = vec![None; self.groups.len()];
        let mut gi = self.groups.len();
        // Softmax and cross-entropy are folded together above, so start below the softmax.
        for li in (0..self.spec.layers.len() - 1).rev() {
            let input = &cache.activations[li];
            let in_shape = if li == 0 {
                &self.spec.input_shape
            } else {
                &shapes[li - 1]
            };
            grad = match (&self.spec.layers[li], &cache.aux[li]) {
                (LayerSpec::Dense { .. }, _) => {
                    gi -= 1;
                    let (gg, dx) = dense_backward(input, &self.groups[gi], &grad, n);
                    out[gi] = Some(gg);
                    dx
                }
                (LayerSpec::Conv5x5 { .. }, _) => {
                    gi -= 1;
                    let (gg, dx) = conv_backward(input, &self.groups[gi], &grad, n, in_shape);
                    out[gi] = Some(gg);
                    dx
                }
                (LayerSpec::Maxpool2, Aux::Argmax(idx)) => {
                    let mut dx = Tensor::zeros(input.shape());
                    let per_in = input.row_len();
                    let per_out = grad.row_len();
                    for s in 0..n {
                        for j in 0..per_out {
                            dx.data_mut()[s * per_in + idx[s * per_out + j]] += grad.data()[s * per_out + j];
                        }
                    }
                    dx
                }
                (LayerSpec::Relu, _) => {
                    let mut dx = grad;
                    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => {
                    let mut dx = grad;
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    dx
                }
                (LayerSpec::Dropout { .. }, _) => grad,
                (layer, _) => {
                    return Err(Error::Usage(format!("cache does not match layer {layer:?}")));
                }
            };
        }
        Ok(Gradients {
            groups: out.into_iter().map(|g| g.expect("every group visited")).collect(),
        })
    }
}

/// Mean cross-entropy of probabilities against class targets.
pub fn cross_entropy(probs: &Tensor, targets: &[usize]) -> f64 {
    let c = probs.row_len();
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs.data()[i * c + t].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / targets.len() as f64
}

/// Index of the largest entry per row; ties go to the smallest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Total storage for the network: every weight at `bits_per_weight`, biases at 32 bits.
pub fn count_weight_bits(net: &Network, bits_per_weight: u32) -> u64 {
    net.weight_count() as u64 * bits_per_weight as u64 + net.bias_count() as u64 * 32
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.row_len();
    let mut y = x.clone();
    for row in y.data_mut().chunks_mut(c) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    y
}

fn dense_forward(x: &Tensor, g: &WeightGroup, n: usize, out_shape: &[usize]) -> Tensor {
    let (k, m) = (g.weights.shape()[0], g.weights.shape()[1]);
    let mut y = vec![0.0; n * m];
    for row in y.chunks_mut(m) {
        row.copy_from_slice(g.bias.data());
    }
    matmul_into(x.data(), g.weights.data(), &mut y, n, k, m);
    Tensor::new(out_shape.to_vec(), y).expect("dense output shape")
}

fn dense_backward(x: &Tensor, g: &WeightGroup, dy: &Tensor, n: usize) -> (GroupGrad, Tensor) {
    let (k, m) = (g.weights.shape()[0], g.weights.shape()[1]);
    let x2 = Tensor::new(vec![n, k], x.data().to_vec()).expect("dense input");
    let mut dw = vec![0.0; k * m];
    matmul_into(x2.transpose2().data(), dy.data(), &mut dw, k, n, m);
    let mut db = vec![0.0; m];
    for row in dy.data().chunks(m) {
        for (b, &d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
    let mut dx = vec![0.0; n * k];
    matmul_into(dy.data(), g.weights.transpose2().data(), &mut dx, n, m, k);
    (
        GroupGrad {
            dw: Tensor::new(g.weights.shape().to_vec(), dw).unwrap(),
            db: Tensor::new(vec![m], db).unwrap(),
        },
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
    )
}

fn conv_forward(x: &Tensor, g: &WeightGroup, n: usize, in_shape: &[usize], out_shape: &[usize]) -> Tensor {
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let c_out = g.weights.shape()[0];
    let hw = h * w;
    let patch = c_in * KERNEL * KERNEL;
    let mut y = vec![0.0; n * c_out * hw];
    for s in 0..n {
        let cols = im2col(x.row(s), c_in, h, w);
        let ys = &mut y[s * c_out * hw..(s + 1) * c_out * hw];
        for (o, plane) in ys.chunks_mut(hw).enumerate() {
            plane.fill(g.bias.data()[o]);
        }
        matmul_into(g.weights.data(), &cols, ys, c_out, patch, hw);
    }
    Tensor::new(out_shape.to_vec(), y).expect("conv output shape")
}

fn conv_backward(x: &Tensor, g: &WeightGroup, dy: &Tensor, n: usize, in_shape: &[usize]) -> (GroupGrad, Tensor) {
    let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let c_out = g.weights.shape()[0];
    let hw = h * w;
    let patch = c_in * KERNEL * KERNEL;
    let kt = Tensor::new(vec![c_out, patch], g.weights.data().to_vec())
        .unwrap()
        .transpose2();
    let mut dk = vec![0.0; c_out * patch];
    let mut db = vec![0.0; c_out];
    let mut dx = Vec::with_capacity(x.len());
    for s in 0..n {
        let cols = im2col(x.row(s), c_in, h, w);
        let dys = dy.row(s);
        for o in 0..c_out {
            let drow = &dys[o * hw..(o + 1) * hw];
            db[o] += drow.iter().sum::<f64>();
            for r in 0..patch {
                let crow = &cols[r * hw..(r + 1) * hw];
                dk[o * patch + r] += drow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut dcols = vec![0.0; patch * hw];
        matmul_into(kt.data(), dys, &mut dcols, patch, c_out, hw);
        dx.extend(col2im(&dcols, c_in, h, w));
    }
    (
        GroupGrad {
            dw: Tensor::new(g.weights.shape().to_vec(), dk).unwrap(),
            db: Tensor::new(vec![c_out], db).unwrap(),
        },
        Tensor::new(x.shape().to_vec(), dx).unwrap(),
    )
}

fn pool_forward(x: &Tensor, n: usize, in_shape: &[usize], out_shape: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let mut y = Vec::with_capacity(out_shape.iter().product());
    let mut idx = Vec::with_capacity(y.capacity());
    for s in 0..n {
        let img = Tensor::new(in_shape.to_vec(), x.row(s).to_vec())?;
        let (p, a) = tensor::maxpool2(&img)?;
        y.extend_from_slice(p.data());
        idx.extend(a);
    }
    Ok((Tensor::new(out_shape.to_vec(), y)?, idx))
}

#[cfg(test)]
mod tests;
