use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::Shape3;
use super::network::{Network, NetworkBuilder};
use crate::activations::VariantConfig;
use crate::error::{Error, Result};

pub const MNIST_INPUT: Shape3 = Shape3::new(28, 28, 1);
pub const MNIST_CLASSES: usize = 10;

/// Named network layouts. Every convolution is 3x3, stride 1, "same"
/// padding, followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `{Conv[3x3,64]}x4, MaxPool[2x2,2], {Conv[3x3,64]}x3, MaxPool[2x2,2],
    /// {Conv[3x3,64]}x3, MaxPool[2x2,2], FC[256], FC[10]`.
    MnistTable1,
    /// The same layout with 16 channels and two convolutions per stage.
    MnistTable1Reduced,
    /// 784-256-10 with ReLU.
    MnistMlp,
    /// Any input, 256 hidden ReLU units, any class count.
    Mlp,
    /// A single dense layer.
    Linear,
}

impl Topology {
    pub const ALL: [Topology; 5] =
        [Topology::MnistTable1, Topology::MnistTable1Reduced, Topology::MnistMlp, Topology::Mlp, Topology::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Topology::MnistTable1 => "mnist_table1",
            Topology::MnistTable1Reduced => "mnist_table1_reduced",
            Topology::MnistMlp => "mnist_mlp",
            Topology::Mlp => "mlp",
            Topology::Linear => "linear",
        }
    }

    fn is_mnist_only(self) -> bool {
        matches!(self, Topology::MnistTable1 | Topology::MnistTable1Reduced | Topology::MnistMlp)
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown topology {s:?}")))
    }
}

fn conv_stages(mut b: NetworkBuilder, channels: usize, repeats: [usize; 3]) -> NetworkBuilder {
    for reps in repeats {
        for _ in 0..reps {
            b = b.conv2d(3, 3, channels).relu();
        }
        b = b.maxpool(2, 2);
    }
    b
}

/// Layer widths. [`Width::FULL`] is the published layout; smaller values
/// keep the structure and make per-parameter checks affordable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Width {
    /// Conv channels in `mnist_table1`. The reduced variant uses a quarter.
    pub channels: usize,
    /// Hidden units of the first dense layer.
    pub hidden: usize,
}

impl Width {
    pub const FULL: Width = Width { channels: 64, hidden: 256 };
}

/// Builds `topology` for inputs of `input` shape and `classes` outputs.
pub fn build_topology(
    topology: Topology,
    input: Shape3,
    classes: usize,
    head: VariantConfig,
    seed: u64,
) -> Result<Network> {
    build_topology_with_width(topology, input, classes, head, seed, Width::FULL)
}

/// [`build_topology`] with explicit layer widths.
pub fn build_topology_with_width(
    topology: Topology,
    input: Shape3,
    classes: usize,
    head: VariantConfig,
    seed: u64,
    width: Width,
) -> Result<Network> {
    if topology.is_mnist_only() && (input != MNIST_INPUT || classes != MNIST_CLASSES) {
        return Err(Error::Config(format!(
            "topology {topology} expects {MNIST_INPUT} inputs and {MNIST_CLASSES} classes, got {input} and {classes}"
        )));
    }
    if width.channels < 4 || width.hidden == 0 {
        return Err(Error::Config(format!("width too small: {width:?}")));
    }
    let Width { channels, hidden } = width;
    let b = NetworkBuilder::new(input);
    let b = match topology {
        Topology::MnistTable1 => conv_stages(b, channels, [4, 3, 3]).flatten().dense(hidden).relu().dense(classes),
        Topology::MnistTable1Reduced => {
            conv_stages(b, channels / 4, [2, 2, 2]).flatten().dense(hidden).relu().dense(classes)
        }
        Topology::MnistMlp | Topology::Mlp => b.flatten().dense(hidden).relu().dense(classes),
        Topology::Linear => b.flatten().dense(classes),
    };
    b.build(head, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;
    use ndarray::Array2;

    fn build(t: Topology) -> Network {
        build_topology(t, MNIST_INPUT, 10, VariantConfig::Softmax, 0).unwrap()
    }

    #[test]
    fn table1_layout() {
        let net = build(Topology::MnistTable1);
        let convs: Vec<_> = net.layers().iter().filter(|l| matches!(l.kind(), LayerKind::Conv2d { .. })).collect();
        assert_eq!(convs.len(), 10);
        for c in &convs {
            match c.kind() {
                LayerKind::Conv2d { kernel_h: 3, kernel_w: 3, out_channels: 64, .. } => {}
                other => panic!("{other:?}"),
            }
        }
        let pools: Vec<_> = net
            .layers()
            .iter()
            .filter(|l| matches!(l.kind(), LayerKind::MaxPool { size: 2, stride: 2 }))
            .map(|l| l.output_shape())
            .collect();
        assert_eq!(pools, vec![Shape3::new(14, 14, 64), Shape3::new(7, 7, 64), Shape3::new(3, 3, 64)]);
        let dense: Vec<_> = net
            .layers()
            .iter()
            .filter_map(|l| match l.kind() {
                LayerKind::Dense { inputs, outputs } => Some((inputs, outputs)),
                _ => None,
            })
            .collect();
        assert_eq!(dense, vec![(576, 256), (256, 10)]);
        // Conv stage order: 4 convs, pool, 3 convs, pool, 3 convs, pool.
        let seq: String = net
            .layers()
            .iter()
            .filter_map(|l| match l.kind() {
                LayerKind::Conv2d { .. } => Some('c'),
                LayerKind::MaxPool { .. } => Some('p'),
                LayerKind::Dense { .. } => Some('f'),
                _ => None,
            })
            .collect();
        assert_eq!(seq, "ccccpcccpcccpff");
    }

    #[test]
    fn mlp_parameter_count() {
        assert_eq!(build(Topology::MnistMlp).param_count(), 203_530);
    }

    #[test]
    fn every_topology_maps_mnist_to_ten_logits() {
        let x = Array2::from_elem((2, 784), 0.5);
        for t in Topology::ALL {
            let net = build(t);
            assert_eq!(net.infer(x.view()).unwrap().dim(), (2, 10), "{t}");
        }
    }

    #[test]
    fn names_round_trip() {
        for t in Topology::ALL {
            assert_eq!(t.name().parse::<Topology>().unwrap(), t);
        }
        assert!("resnet".parse::<Topology>().is_err());
        assert!(build_topology(Topology::MnistMlp, Shape3::flat(4), 2, VariantConfig::Softmax, 0).is_err());
    }
}
