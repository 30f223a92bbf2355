//! Layer graph, parameters, and the forward/backward passes.
//!
//! A [`Network`] is a list of layers whose inputs refer to graph nodes: node 0
//! is the network input and layer `i` produces node `i + 1`. Every node holds a
//! batch of samples, `[batch, ...per-sample shape]`.

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// 3×3 convolution, zero padding, stride 1.
    Conv3x3 {
        cin: usize,
        cout: usize,
    },
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        negative_slope: f64,
    },
    MaxPool2,
    /// Elementwise sum of two nodes with equal shapes.
    ResidualAdd,
    /// Valid (unpadded) k×k convolution; with `kernel` equal to the spatial
    /// size this is the fully connected head.
    ConvHead {
        cin: usize,
        cout: usize,
        kernel: usize,
    },
    /// 2×2 transpose convolution with stride 2.
    TransposeConv2 {
        cin: usize,
        cout: usize,
    },
    Sigmoid,
    /// Softmax over the leading per-sample axis at every spatial location.
    SoftmaxChannel,
    /// Channel concatenation of any number of nodes.
    Concat,
    /// Reinterprets the per-sample shape.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerKind {
    pub(crate) fn code(&self) -> u8 {
        match self {
            LayerKind::Conv3x3 { .. } => 1,
            LayerKind::BatchNorm { .. } => 2,
            LayerKind::LeakyRelu { .. } => 3,
            LayerKind::MaxPool2 => 4,
            LayerKind::ResidualAdd => 5,
            LayerKind::ConvHead { .. } => 6,
            LayerKind::TransposeConv2 { .. } => 7,
            LayerKind::Sigmoid => 8,
            LayerKind::SoftmaxChannel => 9,
            LayerKind::Concat => 10,
            LayerKind::Reshape { .. } => 11,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv3x3 { .. } => "conv3x3",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::LeakyRelu { .. } => "leaky_relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::ConvHead { .. } => "conv_head",
            LayerKind::TransposeConv2 { .. } => "transpose_conv2",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::SoftmaxChannel => "softmax_channel",
            LayerKind::Concat => "concat",
            LayerKind::Reshape { .. } => "reshape",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    node_shapes: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config {
                layer: 0,
                message: "network has no layers".into(),
            });
        }
        let node_shapes = infer_shapes(&input_shape, &layers)?;
        Ok(Network {
            input_shape,
            layers,
            node_shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.node_shapes.last().expect("nonempty")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn node_shapes(&self) -> &[Vec<usize>] {
        &self.node_shapes
    }

    /// Bytes of activations held per sample during a forward pass.
    pub fn activation_bytes_per_sample(&self) -> usize {
        self.node_shapes
            .iter()
            .map(|s| s.iter().product::<usize>() * std::mem::size_of::<f64>())
            .sum()
    }
}

/// Incremental construction of a [`Network`]; every push returns the node id.
#[derive(Debug)]
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            layers: Vec::new(),
        }
    }

    pub fn last(&self) -> usize {
        self.layers.len()
    }

    pub fn push(&mut self, kind: LayerKind, inputs: &[usize]) -> usize {
        self.layers.push(LayerSpec {
            kind,
            inputs: inputs.to_vec(),
        });
        self.layers.len()
    }

    pub fn then(&mut self, kind: LayerKind) -> usize {
        let last = self.last();
        self.push(kind, &[last])
    }

    pub fn build(self) -> Result<Network> {
        Network::new(self.input_shape, self.layers)
    }
}

fn config_err(layer: usize, message: impl Into<String>) -> Error {
    Error::Config {
        layer,
        message: message.into(),
    }
}

fn infer_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(config_err(
            0,
            format!("invalid input shape {input_shape:?}"),
        ));
    }
    let mut shapes = vec![input_shape.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let arity_ok = match layer.kind {
            LayerKind::ResidualAdd => layer.inputs.len() == 2,
            LayerKind::Concat => layer.inputs.len() >= 2,
            _ => layer.inputs.len() == 1,
        };
        if !arity_ok {
            return Err(config_err(
                i,
                format!("{} has {} inputs", layer.kind.name(), layer.inputs.len()),
            ));
        }
        if let Some(&bad) = layer.inputs.iter().find(|&&n| n > i) {
            return Err(config_err(
                i,
                format!("input node {bad} is not yet defined"),
            ));
        }
        let ins: Vec<&Vec<usize>> = layer.inputs.iter().map(|&n| &shapes[n]).collect();
        let first = ins[0];
        let spatial = |s: &Vec<usize>| -> Result<(usize, usize, usize)> {
            if s.len() != 3 {
                return Err(config_err(
                    i,
                    format!("{} needs a CxHxW input, got {s:?}", layer.kind.name()),
                ));
            }
            Ok((s[0], s[1], s[2]))
        };
        let out = match &layer.kind {
            LayerKind::Conv3x3 { cin, cout } => {
                let (c, h, w) = spatial(first)?;
                if c != *cin {
                    return Err(config_err(
                        i,
                        format!("conv3x3 expects {cin} channels, got {c}"),
                    ));
                }
                vec![*cout, h, w]
            }
            LayerKind::BatchNorm { channels } => {
                let (c, _, _) = spatial(first)?;
                if c != *channels {
                    return Err(config_err(
                        i,
                        format!("batchnorm expects {channels} channels, got {c}"),
                    ));
                }
                first.clone()
            }
            LayerKind::LeakyRelu { .. } | LayerKind::Sigmoid => first.clone(),
            LayerKind::MaxPool2 => {
                let (c, h, w) = spatial(first)?;
                if h < 2 || w < 2 {
                    return Err(config_err(i, "maxpool2 input smaller than 2x2"));
                }
                vec![c, h / 2, w / 2]
            }
            LayerKind::ResidualAdd => {
                if ins[0] != ins[1] {
                    return Err(config_err(
                        i,
                        format!("residual_add of {:?} and {:?}", ins[0], ins[1]),
                    ));
                }
                first.clone()
            }
            LayerKind::ConvHead { cin, cout, kernel } => {
                let (c, h, w) = spatial(first)?;
                if c != *cin || *kernel == 0 || *kernel > h || *kernel > w {
                    return Err(config_err(
                        i,
                        format!("conv_head {cin}->{cout} k{kernel} cannot take {first:?}"),
                    ));
                }
                vec![*cout, h - kernel + 1, w - kernel + 1]
            }
            LayerKind::TransposeConv2 { cin, cout } => {
                let (c, h, w) = spatial(first)?;
                if c != *cin {
                    return Err(config_err(
                        i,
                        format!("transpose_conv2 expects {cin} channels, got {c}"),
                    ));
                }
                vec![*cout, h * 2, w * 2]
            }
            LayerKind::SoftmaxChannel => {
                if first[0] < 2 {
                    return Err(config_err(i, "softmax_channel needs at least two channels"));
                }
                first.clone()
            }
            LayerKind::Concat => {
                let (_, h, w) = spatial(first)?;
                let mut channels = 0;
                for s in &ins {
                    let (c, hh, ww) = spatial(s)?;
                    if hh != h || ww != w {
                        return Err(config_err(
                            i,
                            format!("concat spatial mismatch {s:?} vs {first:?}"),
                        ));
                    }
                    channels += c;
                }
                vec![channels, h, w]
            }
            LayerKind::Reshape { shape } => {
                let n: usize = first.iter().product();
                if shape.iter().product::<usize>() != n || shape.contains(&0) {
                    return Err(config_err(
                        i,
                        format!("cannot reshape {first:?} into {shape:?}"),
                    ));
                }
                shape.clone()
            }
        };
        shapes.push(out);
    }
    Ok(shapes)
}

/// Trainable tensors plus non-trainable buffers (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

/// Gradients with the same layout as `ModelParams::layers[..].params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| l.params.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn scale(&mut self, factor: f64) {
        self.layers
            .iter_mut()
            .flatten()
            .for_each(|t| t.scale(factor));
    }
}

impl ModelParams {
    /// Uniform He-style initialization, bound `sqrt(6 / fan_in)`; biases and
    /// batch-norm shifts start at zero, scales at one.
    pub fn init<R: Rng>(network: &Network, rng: &mut R) -> Self {
        let layers = network
            .layers()
            .iter()
            .map(|layer| match &layer.kind {
                LayerKind::Conv3x3 { cin, cout } => conv_params(rng, *cout, *cin, 3),
                LayerKind::ConvHead { cin, cout, kernel } => conv_params(rng, *cout, *cin, *kernel),
                LayerKind::TransposeConv2 { cin, cout } => {
                    let fan_in = cin * 4;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let weight = (0..cin * cout * 4)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    LayerParams {
                        params: vec![
                            Tensor::new(vec![*cin, *cout, 2, 2], weight).expect("shape"),
                            Tensor::zeros(&[*cout]),
                        ],
                        buffers: vec![],
                    }
                }
                LayerKind::BatchNorm { channels } => LayerParams {
                    params: vec![Tensor::full(&[*channels], 1.0), Tensor::zeros(&[*channels])],
                    buffers: vec![Tensor::zeros(&[*channels]), Tensor::full(&[*channels], 1.0)],
                },
                _ => LayerParams {
                    params: vec![],
                    buffers: vec![],
                },
            })
            .collect();
        ModelParams { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.params)
            .map(Tensor::len)
            .sum()
    }

    /// Applies `f` to each trainable tensor alongside its gradient.
    pub fn zip_grads_mut(&mut self, grads: &Gradients, mut f: impl FnMut(&mut Tensor, &Tensor)) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, gp) in layer.params.iter_mut().zip(g) {
                f(p, gp);
            }
        }
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, aux) in self.layers.iter_mut().zip(&pass.aux) {
            if let Aux::BatchNorm {
                mean, var_unbiased, ..
            } = aux
            {
                let m = BATCH_NORM_MOMENTUM;
                for (r, v) in layer.buffers[0].data_mut().iter_mut().zip(mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in layer.buffers[1].data_mut().iter_mut().zip(var_unbiased) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
        }
    }
}

fn conv_params<R: Rng>(rng: &mut R, cout: usize, cin: usize, k: usize) -> LayerParams {
    let fan_in = cin * k * k;
    let bound = (6.0 / fan_in as f64).sqrt();
    let weight = (0..cout * fan_in)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    LayerParams {
        params: vec![
            Tensor::new(vec![cout, cin, k, k], weight).expect("shape"),
            Tensor::zeros(&[cout]),
        ],
        buffers: vec![],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub(crate) enum Aux {
    None,
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var_unbiased: Vec<f64>,
    },
    MaxPool {
        argmax: Vec<usize>,
    },
}

/// All node activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    nodes: Vec<Tensor>,
    aux: Vec<Aux>,
    mode: Mode,
}

impl ForwardPass {
    pub fn output(&self) -> &Tensor {
        self.nodes.last().expect("nonempty")
    }

    pub fn into_output(mut self) -> Tensor {
        self.nodes.pop().expect("nonempty")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn batch_shape(n: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(n);
    s.extend_from_slice(per_sample);
    s
}

pub fn forward(
    params: &ModelParams,
    network: &Network,
    batch: &Tensor,
    mode: Mode,
) -> Result<ForwardPass> {
    let shape = batch.shape();
    if shape.len() != network.input_shape.len() + 1 || shape[1..] != network.input_shape[..] {
        return Err(Error::Config {
            layer: 0,
            message: format!(
                "batch shape {:?} does not match network input {:?}",
                shape, network.input_shape
            ),
        });
    }
    if params.layers.len() != network.layers.len() {
        return Err(config_err(0, "parameter count does not match network"));
    }
    let n = shape[0];
    let mut nodes: Vec<Tensor> = Vec::with_capacity(network.layers.len() + 1);
    let mut aux = Vec::with_capacity(network.layers.len());
    nodes.push(batch.clone());
    for (li, layer) in network.layers.iter().enumerate() {
        let in_shape = &network.node_shapes[layer.inputs[0]];
        let out_shape = batch_shape(n, &network.node_shapes[li + 1]);
        let x = &nodes[layer.inputs[0]];
        let p = &params.layers[li];
        let (out, a) = match &layer.kind {
            LayerKind::Conv3x3 { cin, cout } => {
                let geom = ConvGeom::new(*cin, in_shape[1], in_shape[2], *cout, 3, 1);
                (
                    conv_forward(x.data(), n, &geom, &p.params[0], &p.params[1]),
                    Aux::None,
                )
            }
            LayerKind::ConvHead { cin, cout, kernel } => {
                let geom = ConvGeom::new(*cin, in_shape[1], in_shape[2], *cout, *kernel, 0);
                (
                    conv_forward(x.data(), n, &geom, &p.params[0], &p.params[1]),
                    Aux::None,
                )
            }
            LayerKind::BatchNorm { channels } => {
                let plane = in_shape[1] * in_shape[2];
                batchnorm_forward(x.data(), n, *channels, plane, p, mode)
            }
            LayerKind::LeakyRelu { negative_slope } => (
                x.data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { v * negative_slope })
                    .collect(),
                Aux::None,
            ),
            LayerKind::Sigmoid => (x.data().iter().map(|&v| sigmoid(v)).collect(), Aux::None),
            LayerKind::MaxPool2 => {
                let (out, argmax) =
                    maxpool_forward(x.data(), n * in_shape[0], in_shape[1], in_shape[2]);
                (out, Aux::MaxPool { argmax })
            }
            LayerKind::ResidualAdd => {
                let y = &nodes[layer.inputs[1]];
                (
                    x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect(),
                    Aux::None,
                )
            }
            LayerKind::TransposeConv2 { cin, cout } => (
                tconv_forward(
                    x.data(),
                    n,
                    *cin,
                    in_shape[1],
                    in_shape[2],
                    &p.params[0],
                    &p.params[1],
                    *cout,
                ),
                Aux::None,
            ),
            LayerKind::SoftmaxChannel => {
                let c = in_shape[0];
                let plane = in_shape[1..].iter().product::<usize>().max(1);
                (softmax_forward(x.data(), n, c, plane), Aux::None)
            }
            LayerKind::Concat => {
                let plane = in_shape[1] * in_shape[2];
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for s in 0..n {
                    for &node in &layer.inputs {
                        let c = network.node_shapes[node][0];
                        let d = nodes[node].data();
                        out.extend_from_slice(&d[s * c * plane..(s + 1) * c * plane]);
                    }
                }
                (out, Aux::None)
            }
            LayerKind::Reshape { .. } => (x.data().to_vec(), Aux::None),
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { layer: li });
        }
        nodes.push(Tensor::new(out_shape, out)?);
        aux.push(a);
    }
    Ok(ForwardPass { nodes, aux, mode })
}

/// Inference-mode forward pass returning only the output.
pub fn predict(params: &ModelParams, network: &Network, batch: &Tensor) -> Result<Tensor> {
    Ok(forward(params, network, batch, Mode::Eval)?.into_output())
}

pub fn backward(
    params: &ModelParams,
    network: &Network,
    pass: &ForwardPass,
    grad_output: Tensor,
) -> Result<Gradients> {
    Ok(backward_impl(params, network, pass, grad_output)?.0)
}

/// Parameter gradients together with the gradient of the network input.
pub fn backward_with_input(
    params: &ModelParams,
    network: &Network,
    pass: &ForwardPass,
    grad_output: Tensor,
) -> Result<(Gradients, Tensor)> {
    let (grads, input) = backward_impl(params, network, pass, grad_output)?;
    let shape = pass.nodes[0].shape().to_vec();
    let data = input.unwrap_or_else(|| vec![0.0; shape.iter().product()]);
    Ok((grads, Tensor::new(shape, data)?))
}

fn backward_impl(
    params: &ModelParams,
    network: &Network,
    pass: &ForwardPass,
    grad_output: Tensor,
) -> Result<(Gradients, Option<Vec<f64>>)> {
    if grad_output.shape() != pass.output().shape() {
        return Err(Error::ShapeMismatch {
            expected: pass.output().shape().to_vec(),
            actual: grad_output.shape().to_vec(),
        });
    }
    let n = pass.nodes[0].shape()[0];
    let mut grads = Gradients::zeros_like(params);
    let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; pass.nodes.len()];
    *node_grads.last_mut().expect("nonempty") = Some(grad_output.into_data());

    for (li, layer) in network.layers.iter().enumerate().rev() {
        let Some(dy) = node_grads[li + 1].take() else {
            continue;
        };
        let in_shape = &network.node_shapes[layer.inputs[0]];
        let x = pass.nodes[layer.inputs[0]].data();
        let y = pass.nodes[li + 1].data();
        let p = &params.layers[li];
        let mut input_grads: Vec<Vec<f64>> = match &layer.kind {
            LayerKind::Conv3x3 { cin, cout } => {
                let (gw, gb) = grads.layers[li].split_at_mut(1);
                let geom = ConvGeom::new(*cin, in_shape[1], in_shape[2], *cout, 3, 1);
                vec![conv_backward(
                    x,
                    &dy,
                    n,
                    &geom,
                    &p.params[0],
                    &mut gw[0],
                    &mut gb[0],
                )]
            }
            LayerKind::ConvHead { cin, cout, kernel } => {
                let (gw, gb) = grads.layers[li].split_at_mut(1);
                let geom = ConvGeom::new(*cin, in_shape[1], in_shape[2], *cout, *kernel, 0);
                vec![conv_backward(
                    x,
                    &dy,
                    n,
                    &geom,
                    &p.params[0],
                    &mut gw[0],
                    &mut gb[0],
                )]
            }
            LayerKind::BatchNorm { channels } => {
                let plane = in_shape[1] * in_shape[2];
                vec![batchnorm_backward(
                    x,
                    &dy,
                    (n, *channels, plane),
                    p,
                    &pass.aux[li],
                    &mut grads.layers[li],
                )]
            }
            LayerKind::LeakyRelu { negative_slope } => vec![x
                .iter()
                .zip(&dy)
                .map(|(&v, &d)| if v > 0.0 { d } else { d * negative_slope })
                .collect()],
            LayerKind::Sigmoid => vec![y
                .iter()
                .zip(&dy)
                .map(|(&s, &d)| d * s * (1.0 - s))
                .collect()],
            LayerKind::MaxPool2 => {
                let Aux::MaxPool { argmax } = &pass.aux[li] else {
                    unreachable!("maxpool records its argmax")
                };
                let mut dx = vec![0.0; x.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += dy[o];
                }
                vec![dx]
            }
            LayerKind::ResidualAdd => vec![dy.clone(), dy],
            LayerKind::TransposeConv2 { cin, cout } => {
                let (gw, gb) = grads.layers[li].split_at_mut(1);
                vec![tconv_backward(
                    x,
                    &dy,
                    (n, *cin, in_shape[1], in_shape[2], *cout),
                    &p.params[0],
                    &mut gw[0],
                    &mut gb[0],
                )]
            }
            LayerKind::SoftmaxChannel => {
                let c = in_shape[0];
                let plane = in_shape[1..].iter().product::<usize>().max(1);
                vec![softmax_backward(y, &dy, n, c, plane)]
            }
            LayerKind::Concat => {
                let plane = in_shape[1] * in_shape[2];
                let total_c = network.node_shapes[li + 1][0];
                let mut outs: Vec<Vec<f64>> = layer
                    .inputs
                    .iter()
                    .map(|&node| Vec::with_capacity(n * network.node_shapes[node][0] * plane))
                    .collect();
                for s in 0..n {
                    let mut offset = s * total_c * plane;
                    for (k, &node) in layer.inputs.iter().enumerate() {
                        let len = network.node_shapes[node][0] * plane;
                        outs[k].extend_from_slice(&dy[offset..offset + len]);
                        offset += len;
                    }
                }
                outs
            }
            LayerKind::Reshape { .. } => vec![dy],
        };
        for (k, &node) in layer.inputs.iter().enumerate() {
            let g = std::mem::take(&mut input_grads[k]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical { layer: li });
            }
            match &mut node_grads[node] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        if grads.layers[li].iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical { layer: li });
        }
    }
    let input = node_grads[0].take();
    Ok((grads, input))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Geometry of a stride-1 convolution over one sample.
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(cin: usize, h: usize, w: usize, cout: usize, k: usize, pad: usize) -> Self {
        ConvGeom {
            cin,
            h,
            w,
            cout,
            k,
            pad,
            ho: h + 2 * pad - k + 1,
            wo: w + 2 * pad - k + 1,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Head convolutions that cover the whole input reduce to a matrix-vector product.
    fn is_dense(&self) -> bool {
        self.k == self.h && self.k == self.w && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = oi as isize + ki as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = oj as isize + kj as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..g.ho {
                    let ii = oi as isize + ki as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.wo {
                        let jj = oj as isize + kj as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f64], n: usize, g: &ConvGeom, weight: &Tensor, bias: &Tensor) -> Vec<f64> {
    let plane = g.out_plane();
    let rows = g.rows();
    let mut out = vec![0.0; n * g.cout * plane];
    let mut cols = if g.is_dense() {
        Vec::new()
    } else {
        vec![0.0; rows * plane]
    };
    for s in 0..n {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        let os = &mut out[s * g.cout * plane..(s + 1) * g.cout * plane];
        for (co, chunk) in os.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        if g.is_dense() {
            gemm(g.cout, rows, 1, weight.data(), false, xs, false, 1.0, os);
        } else {
            im2col(xs, g, &mut cols);
            gemm(
                g.cout,
                rows,
                plane,
                weight.data(),
                false,
                &cols,
                false,
                1.0,
                os,
            );
        }
    }
    out
}

fn conv_backward(
    x: &[f64],
    dy: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Vec<f64> {
    let plane = g.out_plane();
    let rows = g.rows();
    let mut dx = vec![0.0; n * g.in_len()];
    let (mut cols, mut dcols) = if g.is_dense() {
        (Vec::new(), Vec::new())
    } else {
        (vec![0.0; rows * plane], vec![0.0; rows * plane])
    };
    for s in 0..n {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        let dys = &dy[s * g.cout * plane..(s + 1) * g.cout * plane];
        for (co, chunk) in dys.chunks(plane).enumerate() {
            grad_b.data_mut()[co] += chunk.iter().sum::<f64>();
        }
        let dxs = &mut dx[s * g.in_len()..(s + 1) * g.in_len()];
        if g.is_dense() {
            gemm(
                g.cout,
                1,
                rows,
                dys,
                false,
                xs,
                false,
                1.0,
                grad_w.data_mut(),
            );
            gemm(rows, g.cout, 1, weight.data(), true, dys, false, 0.0, dxs);
        } else {
            im2col(xs, g, &mut cols);
            gemm(
                g.cout,
                plane,
                rows,
                dys,
                false,
                &cols,
                true,
                1.0,
                grad_w.data_mut(),
            );
            gemm(
                rows,
                g.cout,
                plane,
                weight.data(),
                true,
                dys,
                false,
                0.0,
                &mut dcols,
            );
            col2im(&dcols, g, dxs);
        }
    }
    dx
}

fn batchnorm_forward(
    x: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    p: &LayerParams,
    mode: Mode,
) -> (Vec<f64>, Aux) {
    let gamma = p.params[0].data();
    let beta = p.params[1].data();
    let mut out = vec![0.0; x.len()];
    match mode {
        Mode::Eval => {
            let rm = p.buffers[0].data();
            let rv = p.buffers[1].data();
            for s in 0..n {
                for ch in 0..c {
                    let inv = 1.0 / (rv[ch] + BATCH_NORM_EPS).sqrt();
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        out[i] = gamma[ch] * (x[i] - rm[ch]) * inv + beta[ch];
                    }
                }
            }
            (out, Aux::None)
        }
        Mode::Train => {
            let count = (n * plane) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    mean[ch] += x[base..base + plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    var[ch] += x[base..base + plane]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let inv_std: Vec<f64> = var
                .iter()
                .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
                .collect();
            let mut xhat = vec![0.0; x.len()];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * plane;
                    for i in base..base + plane {
                        xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                        out[i] = gamma[ch] * xhat[i] + beta[ch];
                    }
                }
            }
            let correction = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            let var_unbiased = var.iter().map(|v| v * correction).collect();
            (
                out,
                Aux::BatchNorm {
                    xhat,
                    inv_std,
                    mean,
                    var_unbiased,
                },
            )
        }
    }
}

fn batchnorm_backward(
    x: &[f64],
    dy: &[f64],
    (n, c, plane): (usize, usize, usize),
    p: &LayerParams,
    aux: &Aux,
    grads: &mut [Tensor],
) -> Vec<f64> {
    let gamma = p.params[0].data();
    let mut dx = vec![0.0; dy.len()];
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    if let Aux::BatchNorm { xhat, inv_std, .. } = aux {
        let count = (n * plane) as f64;
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    sum_dy[ch] += dy[i];
                    sum_dy_xhat[ch] += dy[i] * xhat[i];
                }
            }
        }
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let k = gamma[ch] * inv_std[ch] / count;
                for i in base..base + plane {
                    dx[i] = k * (count * dy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                }
            }
        }
    } else {
        // Frozen statistics: a per-channel affine map.
        let rm = p.buffers[0].data();
        let rv = p.buffers[1].data();
        for s in 0..n {
            for ch in 0..c {
                let inv = 1.0 / (rv[ch] + BATCH_NORM_EPS).sqrt();
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    sum_dy[ch] += dy[i];
                    sum_dy_xhat[ch] += dy[i] * (x[i] - rm[ch]) * inv;
                    dx[i] = dy[i] * gamma[ch] * inv;
                }
            }
        }
    }
    for ch in 0..c {
        grads[0].data_mut()[ch] += sum_dy_xhat[ch];
        grads[1].data_mut()[ch] += sum_dy[ch];
    }
    dx
}

fn maxpool_forward(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

#[allow(clippy::too_many_arguments)]
fn tconv_forward(
    x: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &Tensor,
    bias: &Tensor,
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * cout * ho * wo];
    // y' (cout*4 x plane) = W^T (cout*4 x cin) * x (cin x plane)
    let mut tmp = vec![0.0; cout * 4 * plane];
    for s in 0..n {
        let xs = &x[s * cin * plane..(s + 1) * cin * plane];
        gemm(
            cout * 4,
            cin,
            plane,
            weight.data(),
            true,
            xs,
            false,
            0.0,
            &mut tmp,
        );
        let os = &mut out[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        for co in 0..cout {
            for a in 0..2 {
                for b in 0..2 {
                    let src =
                        &tmp[((co * 2 + a) * 2 + b) * plane..((co * 2 + a) * 2 + b + 1) * plane];
                    for i in 0..h {
                        for j in 0..w {
                            os[(co * ho + 2 * i + a) * wo + 2 * j + b] =
                                src[i * w + j] + bias.data()[co];
                        }
                    }
                }
            }
        }
    }
    out
}

fn tconv_backward(
    x: &[f64],
    dy: &[f64],
    (n, cin, h, w, cout): (usize, usize, usize, usize, usize),
    weight: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Vec<f64> {
    let plane = h * w;
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0; n * cin * plane];
    let mut tmp = vec![0.0; cout * 4 * plane];
    for s in 0..n {
        let dys = &dy[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        for co in 0..cout {
            grad_b.data_mut()[co] += dys[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
            for a in 0..2 {
                for b in 0..2 {
                    let dst = &mut tmp
                        [((co * 2 + a) * 2 + b) * plane..((co * 2 + a) * 2 + b + 1) * plane];
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = dys[(co * ho + 2 * i + a) * wo + 2 * j + b];
                        }
                    }
                }
            }
        }
        let xs = &x[s * cin * plane..(s + 1) * cin * plane];
        // dW (cin x cout*4) += x (cin x plane) * tmp^T (plane x cout*4)
        gemm(
            cin,
            plane,
            cout * 4,
            xs,
            false,
            &tmp,
            true,
            1.0,
            grad_w.data_mut(),
        );
        // dx (cin x plane) = W (cin x cout*4) * tmp (cout*4 x plane)
        gemm(
            cin,
            cout * 4,
            plane,
            weight.data(),
            false,
            &tmp,
            false,
            0.0,
            &mut dx[s * cin * plane..(s + 1) * cin * plane],
        );
    }
    dx
}

fn softmax_forward(x: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let max = (0..c)
                .map(|ch| x[base + ch * plane + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ch in 0..c {
                let e = (x[base + ch * plane + p] - max).exp();
                out[base + ch * plane + p] = e;
                total += e;
            }
            for ch in 0..c {
                out[base + ch * plane + p] /= total;
            }
        }
    }
    out
}

fn softmax_backward(y: &[f64], dy: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for s in 0..n {
        let base = s * c * plane;
        for p in 0..plane {
            let dot: f64 = (0..c)
                .map(|ch| y[base + ch * plane + p] * dy[base + ch * plane + p])
                .sum();
            for ch in 0..c {
                let i = base + ch * plane + p;
                dx[i] = y[i] * (dy[i] - dot);
            }
        }
    }
    dx
}
