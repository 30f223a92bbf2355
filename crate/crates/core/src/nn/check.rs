//! Central-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    backward_with_input, forward, LayerKind, Mode, ModelParams, Network, NetworkBuilder,
};
use super::tensor::Tensor;
use crate::error::Result;

/// Largest `|analytic − numeric| / max(1, |numeric|)` over parameters and inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub params: f64,
    pub input: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.params.max(self.input)
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Checks every parameter and input element against central differences of the
/// scalar `Σ output · probe`, where `probe` is a fixed random tensor.
pub fn gradient_check(
    network: &Network,
    params: &ModelParams,
    input: &Tensor,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_len = forward(params, network, input, Mode::Train)?.output().len();
    let probe: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |p: &ModelParams, x: &Tensor| -> Result<f64> {
        let pass = forward(p, network, x, Mode::Train)?;
        Ok(pass
            .output()
            .data()
            .iter()
            .zip(&probe)
            .map(|(a, b)| a * b)
            .sum())
    };

    let pass = forward(params, network, input, Mode::Train)?;
    let grad_out = Tensor::new(pass.output().shape().to_vec(), probe.clone())?;
    let (grads, grad_in) = backward_with_input(params, network, &pass, grad_out)?;

    let mut worst_params = 0.0f64;
    let mut perturbed = params.clone();
    for (li, layer_grads) in grads.layers.iter().enumerate() {
        for (ti, g) in layer_grads.iter().enumerate() {
            for k in 0..g.len() {
                let orig = perturbed.layers[li].params[ti].data()[k];
                perturbed.layers[li].params[ti].data_mut()[k] = orig + h;
                let plus = objective(&perturbed, input)?;
                perturbed.layers[li].params[ti].data_mut()[k] = orig - h;
                let minus = objective(&perturbed, input)?;
                perturbed.layers[li].params[ti].data_mut()[k] = orig;
                worst_params = worst_params.max(rel_err(g.data()[k], (plus - minus) / (2.0 * h)));
            }
        }
    }

    let mut worst_input = 0.0f64;
    let mut x = input.clone();
    for k in 0..x.len() {
        let orig = x.data()[k];
        x.data_mut()[k] = orig + h;
        let plus = objective(params, &x)?;
        x.data_mut()[k] = orig - h;
        let minus = objective(params, &x)?;
        x.data_mut()[k] = orig;
        worst_input = worst_input.max(rel_err(grad_in.data()[k], (plus - minus) / (2.0 * h)));
    }
    Ok(GradCheck {
        params: worst_params,
        input: worst_input,
    })
}

/// One small network per layer kind on 8×8 inputs, each paired with its kind name.
pub fn layer_kind_cases() -> Vec<(&'static str, Network)> {
    let (c, s) = (2usize, 8usize);
    let build = |f: &dyn Fn(&mut NetworkBuilder)| {
        let mut b = NetworkBuilder::new(&[c, s, s]);
        f(&mut b);
        b.build().expect("valid test network")
    };
    let conv = |b: &mut NetworkBuilder, cout| b.then(LayerKind::Conv3x3 { cin: c, cout });
    vec![
        (
            "conv3x3",
            build(&|b| {
                conv(b, 3);
            }),
        ),
        (
            "batchnorm",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::BatchNorm { channels: 3 });
            }),
        ),
        (
            "leaky_relu",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::LeakyRelu {
                    negative_slope: 0.01,
                });
            }),
        ),
        (
            "maxpool2",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::MaxPool2);
            }),
        ),
        (
            "residual_add",
            build(&|b| {
                let a = conv(b, 3);
                let second = b.then(LayerKind::Conv3x3 { cin: 3, cout: 3 });
                b.push(LayerKind::ResidualAdd, &[second, a]);
            }),
        ),
        (
            "conv_head",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::ConvHead {
                    cin: 3,
                    cout: 4,
                    kernel: s,
                });
            }),
        ),
        (
            "transpose_conv2",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::TransposeConv2 { cin: 3, cout: 2 });
            }),
        ),
        (
            "sigmoid",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::Sigmoid);
            }),
        ),
        (
            "softmax_channel",
            build(&|b| {
                conv(b, 3);
                b.then(LayerKind::SoftmaxChannel);
            }),
        ),
        (
            "concat",
            build(&|b| {
                let a = conv(b, 3);
                let other = b.push(LayerKind::Conv3x3 { cin: c, cout: 2 }, &[0]);
                b.push(LayerKind::Concat, &[a, other]);
            }),
        ),
        (
            "reshape",
            build(&|b| {
                conv(b, 2);
                b.then(LayerKind::Reshape {
                    shape: vec![2, s * s],
                });
            }),
        ),
    ]
}

/// Runs [`gradient_check`] on every case with a batch of two random samples.
pub fn check_all_layer_kinds(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layer_kind_cases()
        .into_iter()
        .map(|(name, net)| {
            let params = ModelParams::init(&net, &mut rng);
            let mut shape = vec![2];
            shape.extend_from_slice(net.input_shape());
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let x = Tensor::new(shape, data)?;
            Ok((name, gradient_check(&net, &params, &x, 1e-5, seed)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_matches_central_differences() {
        for (name, check) in check_all_layer_kinds(11).unwrap() {
            assert!(check.max() < 1e-4, "{name}: {check:?}");
        }
    }

    #[test]
    fn covers_all_kinds() {
        let names: Vec<_> = layer_kind_cases().iter().map(|c| c.0).collect();
        assert_eq!(names.len(), 11);
    }
}
