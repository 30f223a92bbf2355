//! Builders for the tracing, growing, and encoder-decoder networks.
//!
//! All three share one encoder: blocks of three 3×3 conv + batch-norm +
//! leaky-ReLU layers with residual sums after the second and third conv, each
//! block but the last followed by 2×2 max pooling.

use super::layers::{LayerKind, Network, NetworkBuilder, LEAKY_RELU_SLOPE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub tile: usize,
    /// Channel width per block; the last block is not pooled.
    pub widths: Vec<usize>,
}

impl EncoderConfig {
    /// Spatial size at the encoder output.
    pub fn output_size(&self) -> usize {
        self.tile >> (self.widths.len().saturating_sub(1))
    }

    /// Number of layers the encoder contributes to a network.
    pub fn layer_count(&self) -> usize {
        self.widths.len() * LAYERS_PER_BLOCK + self.widths.len().saturating_sub(1)
    }

    fn validate(&self) -> Result<()> {
        let pools = self.widths.len().saturating_sub(1);
        if self.widths.is_empty() || self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::invalid(
                "encoder needs at least one nonzero block width",
            ));
        }
        if self.tile == 0 || !self.tile.is_multiple_of(1 << pools) {
            return Err(Error::invalid(format!(
                "tile {} is not divisible by 2^{pools}",
                self.tile
            )));
        }
        Ok(())
    }
}

const LAYERS_PER_BLOCK: usize = 11;

fn conv_bn_act(b: &mut NetworkBuilder, cin: usize, cout: usize) -> usize {
    b.then(LayerKind::Conv3x3 { cin, cout });
    b.then(LayerKind::BatchNorm { channels: cout });
    b.then(LayerKind::LeakyRelu {
        negative_slope: LEAKY_RELU_SLOPE,
    })
}

fn block(b: &mut NetworkBuilder, cin: usize, width: usize) -> usize {
    let first = conv_bn_act(b, cin, width);
    let second = conv_bn_act(b, width, width);
    let sum = b.push(LayerKind::ResidualAdd, &[second, first]);
    let third = conv_bn_act(b, width, width);
    b.push(LayerKind::ResidualAdd, &[third, sum])
}

/// Appends the encoder; returns the pre-pooling activations of every pooled block.
fn encoder(b: &mut NetworkBuilder, cfg: &EncoderConfig) -> Vec<(usize, usize)> {
    let mut skips = Vec::new();
    let mut cin = cfg.in_channels;
    for (i, &width) in cfg.widths.iter().enumerate() {
        let out = block(b, cin, width);
        if i + 1 < cfg.widths.len() {
            skips.push((out, width));
            b.then(LayerKind::MaxPool2);
        }
        cin = width;
    }
    skips
}

/// Encoder plus a linear full-extent head reshaped to `2 × points`.
pub fn tracer_network(cfg: &EncoderConfig, points: usize) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(&[cfg.in_channels, cfg.tile, cfg.tile]);
    encoder(&mut b, cfg);
    let width = *cfg.widths.last().expect("validated");
    b.then(LayerKind::ConvHead {
        cin: width,
        cout: 2 * points,
        kernel: cfg.output_size(),
    });
    b.then(LayerKind::Reshape {
        shape: vec![2, points],
    });
    b.build()
}

/// Encoder plus a head producing vein/background probabilities for the 3×3
/// neighborhood, shaped `[2, 3, 3]` with channel 0 = vein.
pub fn grower_network(cfg: &EncoderConfig) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(&[cfg.in_channels, cfg.tile, cfg.tile]);
    encoder(&mut b, cfg);
    let width = *cfg.widths.last().expect("validated");
    b.then(LayerKind::ConvHead {
        cin: width,
        cout: 18,
        kernel: cfg.output_size(),
    });
    b.then(LayerKind::Reshape {
        shape: vec![2, 3, 3],
    });
    b.then(LayerKind::SoftmaxChannel);
    b.build()
}

/// Encoder-decoder with skip concatenation and a one-channel sigmoid map.
pub fn dense_network(cfg: &EncoderConfig) -> Result<Network> {
    cfg.validate()?;
    let mut b = NetworkBuilder::new(&[cfg.in_channels, cfg.tile, cfg.tile]);
    let skips = encoder(&mut b, cfg);
    let mut channels = *cfg.widths.last().expect("validated");
    for &(skip, width) in skips.iter().rev() {
        let up = b.then(LayerKind::TransposeConv2 {
            cin: channels,
            cout: width,
        });
        b.push(LayerKind::Concat, &[up, skip]);
        block(&mut b, 2 * width, width);
        channels = width;
    }
    b.then(LayerKind::ConvHead {
        cin: channels,
        cout: 1,
        kernel: 1,
    });
    b.then(LayerKind::Sigmoid);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(c: usize, tile: usize, widths: &[usize]) -> EncoderConfig {
        EncoderConfig {
            in_channels: c,
            tile,
            widths: widths.to_vec(),
        }
    }

    #[test]
    fn output_shapes() {
        let t = tracer_network(&cfg(4, 32, &[4, 8, 8]), 16).unwrap();
        assert_eq!(t.output_shape(), &[2, 16]);
        let g = grower_network(&cfg(3, 16, &[4, 8])).unwrap();
        assert_eq!(g.output_shape(), &[2, 3, 3]);
        let d = dense_network(&cfg(3, 16, &[4, 8, 8])).unwrap();
        assert_eq!(d.output_shape(), &[1, 16, 16]);
    }

    #[test]
    fn full_scale_shapes_are_expressible() {
        let widths = [8, 8, 8, 8, 8, 8, 8];
        let t = tracer_network(&cfg(4, 256, &widths), 128).unwrap();
        assert_eq!(t.output_shape(), &[2, 128]);
        assert_eq!(
            t.node_shapes()[cfg(4, 256, &widths).layer_count()],
            vec![8, 4, 4]
        );
        let g = grower_network(&cfg(3, 128, &widths[1..])).unwrap();
        assert_eq!(g.output_shape(), &[2, 3, 3]);
    }

    #[test]
    fn rejects_indivisible_tile() {
        assert!(tracer_network(&cfg(4, 30, &[4, 8, 8]), 16).is_err());
    }
}
