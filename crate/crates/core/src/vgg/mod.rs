//! VGG-style network construction, transfer-learning head replacement, and
//! weight persistence.

mod archive;

pub use archive::{
    load_into_net, load_weights, net_to_archive, save_weights, ArchiveError, ArchiveTensor,
    WeightArchive,
};

use thiserror::Error;

use crate::nn::{LayerSpec, NetError, Network};
use crate::tensor::{Element, SeededRng};

#[derive(Debug, Error)]
pub enum VggError {
    #[error("network has no dense layer to replace")]
    NoDenseHead,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Architecture plan: stacks of 3x3 stride-1 pad-1 convolutions (each
/// followed by ReLU) with a 2x2 stride-2 max pool after every block, then
/// fully connected layers and a linear classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VggConfig {
    /// Per-sample input shape, `[channels, height, width]`.
    pub input: [usize; 3],
    /// Output channels of each convolution, grouped by block.
    pub conv_blocks: Vec<Vec<usize>>,
    /// Hidden fully connected widths (the final classifier layer is extra).
    pub fc_dims: Vec<usize>,
    /// Dropout rate applied after each hidden FC ReLU, if any.
    pub fc_dropout: Option<f64>,
    pub num_classes: usize,
}

impl VggConfig {
    /// The classic 16-weight-layer configuration: conv blocks
    /// 64-64 / 128-128 / 256-256-256 / 512-512-512 / 512-512-512 over
    /// 224x224 RGB input, then 4096-4096 fully connected with dropout 0.5.
    pub fn vgg16(num_classes: usize) -> Self {
        Self {
            input: [3, 224, 224],
            conv_blocks: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            fc_dims: vec![4096, 4096],
            fc_dropout: Some(0.5),
            num_classes,
        }
    }

    /// Desk-scale variant with the same shape grammar: 32x32 input, blocks
    /// 8-8 / 16-16, one 64-wide FC layer, no dropout. Small enough to train
    /// on a CPU in seconds.
    pub fn mini(num_classes: usize) -> Self {
        Self {
            input: [3, 32, 32],
            conv_blocks: vec![vec![8, 8], vec![16, 16]],
            fc_dims: vec![64],
            fc_dropout: None,
            num_classes,
        }
    }

    /// Expand the plan into layer specs.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut in_ch = self.input[0];
        let (mut h, mut w) = (self.input[1], self.input[2]);
        for block in &self.conv_blocks {
            for &out_ch in block {
                specs.push(LayerSpec::Conv2D {
                    in_ch,
                    out_ch,
                    kh: 3,
                    kw: 3,
                    stride: 1,
                    zero_pad: 1,
                });
                specs.push(LayerSpec::ReLU);
                in_ch = out_ch;
            }
            specs.push(LayerSpec::MaxPool2D { size: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
        specs.push(LayerSpec::Flatten);
        let mut in_dim = in_ch * h * w;
        for &width in &self.fc_dims {
            specs.push(LayerSpec::Dense {
                in_dim,
                out_dim: width,
            });
            specs.push(LayerSpec::ReLU);
            if let Some(rate) = self.fc_dropout {
                specs.push(LayerSpec::Dropout { rate });
            }
            in_dim = width;
        }
        specs.push(LayerSpec::Dense {
            in_dim,
            out_dim: self.num_classes,
        });
        specs
    }

    /// Width of the flattened feature vector entering the first FC layer.
    pub fn flatten_width(&self) -> usize {
        let pools = self.conv_blocks.len();
        let h = self.input[1] >> pools;
        let w = self.input[2] >> pools;
        let ch = *self
            .conv_blocks
            .last()
            .and_then(|b| b.last())
            .unwrap_or(&self.input[0]);
        ch * h * w
    }
}

/// Build a network from a config with Glorot-uniform weights. The dropout
/// stream seed is drawn from `rng`, so a builder seed fixes the whole net.
pub fn build<T: Element>(config: &VggConfig, rng: &mut SeededRng) -> Result<Network<T>, NetError> {
    let dropout_seed = rng.next_u64();
    let mut net = Network::new(config.input.to_vec(), config.layer_specs(), dropout_seed)?;
    net.init_glorot_uniform(rng);
    Ok(net)
}

/// The 16-weight-layer network over 224x224 RGB input.
pub fn build_vgg16<T: Element>(
    num_classes: usize,
    rng: &mut SeededRng,
) -> Result<Network<T>, NetError> {
    build(&VggConfig::vgg16(num_classes), rng)
}

/// The reduced desk-scale network over 32x32 RGB input.
pub fn build_vgg_mini<T: Element>(
    num_classes: usize,
    rng: &mut SeededRng,
) -> Result<Network<T>, NetError> {
    build(&VggConfig::mini(num_classes), rng)
}

/// Swap the final dense layer for a fresh `Dense(in -> out_dim)` head,
/// followed by a sigmoid when `out_dim == 1`. The new weights draw from
/// `uniform(-sqrt(6/(in+out)), +sqrt(6/(in+out)))` with zero bias; every
/// other tensor is left untouched. With `freeze_backbone` only the new head
/// remains trainable.
pub fn replace_head<T: Element>(
    net: &mut Network<T>,
    out_dim: usize,
    freeze_backbone: bool,
    rng: &mut SeededRng,
) -> Result<(), VggError> {
    let head_idx = net
        .layers()
        .iter()
        .rposition(|l| matches!(l.spec(), LayerSpec::Dense { .. }))
        .ok_or(VggError::NoDenseHead)?;
    let LayerSpec::Dense { in_dim, .. } = *net.layers()[head_idx].spec() else {
        unreachable!()
    };

    let mut specs: Vec<LayerSpec> = net.layers()[..head_idx]
        .iter()
        .map(|l| l.spec().clone())
        .collect();
    specs.push(LayerSpec::Dense {
        in_dim,
        out_dim,
    });
    if out_dim == 1 {
        specs.push(LayerSpec::Sigmoid);
    }

    let mut rebuilt = Network::new(net.input_shape().to_vec(), specs, net.rng_seed())?;

    // Move the backbone parameters across unchanged.
    for (li, layer) in net.layers_mut()[..head_idx].iter_mut().enumerate() {
        for (pi, p) in layer.params_mut().iter_mut().enumerate() {
            std::mem::swap(&mut rebuilt.layers_mut()[li].params_mut()[pi].value, &mut p.value);
        }
        rebuilt.layers_mut()[li].set_trainable(!freeze_backbone);
    }

    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let head = &mut rebuilt.layers_mut()[head_idx];
    for v in head.params_mut()[0].value.data_mut() {
        *v = T::from_f64(rng.uniform(-limit, limit));
    }
    head.set_trainable(true);

    *net = rebuilt;
    Ok(())
}
