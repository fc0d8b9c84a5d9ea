use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv_output_size;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// ResNet-style: 3x3 stem, `num_stages` stages of basic blocks with
    /// widths `width * 2^i`.
    SmallResnet,
    /// Same family with two blocks per stage by default (ResNet-18 layout at width 64).
    MidResnet,
    /// Wide-ResNet layout: 16-channel stem, 3 stages of width `16 * k * 2^i`
    /// where `width` is the widening factor `k`.
    WideResnetLike,
    /// Fully connected toy network: each stage is `blocks_per_stage` dense
    /// layers of `width` units with ReLU.
    Mlp,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-resnet" => Ok(BackboneKind::SmallResnet),
            "mid-resnet" => Ok(BackboneKind::MidResnet),
            "wide-resnet-like" => Ok(BackboneKind::WideResnetLike),
            "mlp" => Ok(BackboneKind::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub input_size: usize,
    pub num_classes: usize,
    pub width: usize,
    pub blocks_per_stage: usize,
    pub num_stages: usize,
}

impl Default for BackboneConfig {
    /// Desk-scale CIFAR backbone: 4 stages, one block each, base width 16.
    fn default() -> Self {
        BackboneConfig::small_resnet(10)
    }
}

impl BackboneConfig {
    pub fn small_resnet(num_classes: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::SmallResnet,
            in_channels: 3,
            input_size: 32,
            num_classes,
            width: 16,
            blocks_per_stage: 1,
            num_stages: 4,
        }
    }

    /// ResNet-18 layout for 32x32 inputs (3x3 stride-1 stem, no max-pool).
    pub fn resnet18(num_classes: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::MidResnet,
            width: 64,
            blocks_per_stage: 2,
            ..BackboneConfig::small_resnet(num_classes)
        }
    }

    /// Wide-ResNet of the given depth (`6n + 4`) and widening factor.
    pub fn wide_resnet(depth: usize, widen: usize, num_classes: usize) -> Result<Self> {
        if depth < 10 || !(depth - 4).is_multiple_of(6) {
            return Err(Error::InvalidConfig(format!("wide resnet depth {depth} is not 6n+4")));
        }
        Ok(BackboneConfig {
            kind: BackboneKind::WideResnetLike,
            in_channels: 3,
            input_size: 32,
            num_classes,
            width: widen,
            blocks_per_stage: (depth - 4) / 6,
            num_stages: 3,
        })
    }

    pub fn mlp(in_features: usize, hidden: usize, num_stages: usize, num_classes: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::Mlp,
            in_channels: in_features,
            input_size: 1,
            num_classes,
            width: hidden,
            blocks_per_stage: 1,
            num_stages,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockSpec {
    /// Post-activation basic block: conv3x3-BN-ReLU-conv3x3-BN, plus an
    /// identity or 1x1-conv-BN shortcut, then ReLU.
    Residual {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        out_hw: (usize, usize),
    },
    Dense {
        in_features: usize,
        out_features: usize,
        relu: bool,
    },
}

impl BlockSpec {
    /// Shapes of the weights that take part in grouping, in storage order.
    pub fn groupable_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            BlockSpec::Residual { in_channels, out_channels, .. } => vec![
                vec![out_channels, in_channels, 3, 3],
                vec![out_channels, out_channels, 3, 3],
            ],
            BlockSpec::Dense { in_features, out_features, .. } => vec![vec![out_features, in_features]],
        }
    }

    /// Output positions per sample of each groupable weight.
    pub fn groupable_positions(&self) -> Vec<usize> {
        match *self {
            BlockSpec::Residual { out_hw, .. } => vec![out_hw.0 * out_hw.1; 2],
            BlockSpec::Dense { .. } => vec![1],
        }
    }

    pub fn has_projection(&self) -> bool {
        matches!(*self, BlockSpec::Residual { in_channels, out_channels, stride, .. }
            if stride != 1 || in_channels != out_channels)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blocks: Vec<BlockSpec>,
    pub in_shape: (usize, usize, usize),
    pub out_shape: (usize, usize, usize),
}

impl StageSpec {
    pub fn groupable_shapes(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().flat_map(BlockSpec::groupable_shapes).collect()
    }

    pub fn groupable_len(&self) -> usize {
        self.groupable_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Resolved layer shapes of a staged backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_shape: (usize, usize, usize),
    /// Output channels of the 3x3 stride-1 stem convolution.
    pub stem_channels: Option<usize>,
    pub stages: Vec<StageSpec>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

pub const STEM_KERNEL: usize = 3;

impl Architecture {
    pub fn from_config(cfg: &BackboneConfig) -> Result<Self> {
        if cfg.num_stages == 0 || cfg.blocks_per_stage == 0 || cfg.width == 0 {
            return Err(Error::InvalidConfig(
                "num_stages, blocks_per_stage and width must be positive".into(),
            ));
        }
        if cfg.num_classes < 2 || cfg.in_channels == 0 || cfg.input_size == 0 {
            return Err(Error::InvalidConfig(
                "need at least 2 classes and a non-empty input".into(),
            ));
        }
        let in_shape = (cfg.in_channels, cfg.input_size, cfg.input_size);
        match cfg.kind {
            BackboneKind::Mlp => {
                let mut features = cfg.in_channels * cfg.input_size * cfg.input_size;
                let stages = (0..cfg.num_stages)
                    .map(|_| {
                        let stage_in = (features, 1, 1);
                        let blocks = (0..cfg.blocks_per_stage)
                            .map(|_| {
                                let b = BlockSpec::Dense {
                                    in_features: features,
                                    out_features: cfg.width,
                                    relu: true,
                                };
                                features = cfg.width;
                                b
                            })
                            .collect();
                        StageSpec {
                            blocks,
                            in_shape: stage_in,
                            out_shape: (features, 1, 1),
                        }
                    })
                    .collect();
                Ok(Architecture {
                    in_shape,
                    stem_channels: None,
                    stages,
                    feature_dim: cfg.width,
                    num_classes: cfg.num_classes,
                })
            }
            kind => {
                let (stem, widths): (usize, Vec<usize>) = match kind {
                    BackboneKind::WideResnetLike => {
                        (16, (0..cfg.num_stages).map(|i| (16 * cfg.width) << i).collect())
                    }
                    _ => (cfg.width, (0..cfg.num_stages).map(|i| cfg.width << i).collect()),
                };
                let (mut c, mut h, mut w) = (stem, cfg.input_size, cfg.input_size);
                let mut stages = Vec::with_capacity(cfg.num_stages);
                for (i, &width) in widths.iter().enumerate() {
                    let stage_in = (c, h, w);
                    let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
                    for b in 0..cfg.blocks_per_stage {
                        let stride = if i > 0 && b == 0 { 2 } else { 1 };
                        let (oh, ow) = (conv_output_size(h, 3, stride, 1), conv_output_size(w, 3, stride, 1));
                        blocks.push(BlockSpec::Residual {
                            in_channels: c,
                            out_channels: width,
                            stride,
                            out_hw: (oh, ow),
                        });
                        (c, h, w) = (width, oh, ow);
                    }
                    stages.push(StageSpec {
                        blocks,
                        in_shape: stage_in,
                        out_shape: (c, h, w),
                    });
                }
                Ok(Architecture {
                    in_shape,
                    stem_channels: Some(stem),
                    stages,
                    feature_dim: c,
                    num_classes: cfg.num_classes,
                })
            }
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(StageSpec::groupable_len).collect()
    }

    pub fn stem_shape(&self) -> Option<[usize; 4]> {
        self.stem_channels
            .map(|c| [c, self.in_shape.0, STEM_KERNEL, STEM_KERNEL])
    }

    pub fn stem_len(&self) -> Option<usize> {
        self.stem_shape().map(|s| s.iter().product())
    }
}
