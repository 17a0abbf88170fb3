//! Block-level architecture descriptions and block-removal compression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::conv_output_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Convolution, batch norm, ReLU6.
    ConvBnRelu,
    /// Pointwise expansion, depthwise 3×3, linear pointwise projection.
    InvertedResidual,
    /// Global average pooling followed by a dense layer.
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub block_id: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel size of a `ConvBnRelu` block; 3 for the depthwise stage of an
    /// inverted residual.
    pub kernel: usize,
    pub stride: usize,
    pub expansion: usize,
}

impl BlockSpec {
    pub fn conv_bn_relu(
        block_id: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self {
            kind: BlockKind::ConvBnRelu,
            block_id,
            in_channels,
            out_channels,
            kernel,
            stride,
            expansion: 1,
        }
    }

    pub fn inverted_residual(
        block_id: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        expansion: usize,
    ) -> Self {
        Self {
            kind: BlockKind::InvertedResidual,
            block_id,
            in_channels,
            out_channels,
            kernel: 3,
            stride,
            expansion,
        }
    }

    pub fn classifier(block_id: usize, features: usize, num_classes: usize) -> Self {
        Self {
            kind: BlockKind::Classifier,
            block_id,
            in_channels: features,
            out_channels: num_classes,
            kernel: 1,
            stride: 1,
            expansion: 1,
        }
    }

    /// Identity shortcut around an inverted residual.
    pub fn has_skip(&self) -> bool {
        self.kind == BlockKind::InvertedResidual
            && self.stride == 1
            && self.in_channels == self.out_channels
    }

    pub fn hidden_channels(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            BlockKind::ConvBnRelu => {
                self.in_channels * self.out_channels * self.kernel * self.kernel
                    + 2 * self.out_channels
            }
            BlockKind::InvertedResidual => {
                let hidden = self.hidden_channels();
                let expand = if self.expansion == 1 {
                    0
                } else {
                    self.in_channels * hidden + 2 * hidden
                };
                expand
                    + hidden * 9
                    + 2 * hidden
                    + hidden * self.out_channels
                    + 2 * self.out_channels
            }
            BlockKind::Classifier => self.in_channels * self.out_channels + self.out_channels,
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        match self.kind {
            BlockKind::ConvBnRelu => 1,
            BlockKind::InvertedResidual if self.expansion == 1 => 2,
            BlockKind::InvertedResidual => 3,
            BlockKind::Classifier => 0,
        }
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Spatial size after this block.
    pub fn output_hw(&self, (h, w): (usize, usize)) -> Option<(usize, usize)> {
        match self.kind {
            BlockKind::Classifier => Some((1, 1)),
            _ => Some((
                conv_output_len(h, self.kernel, self.stride, self.padding())?,
                conv_output_len(w, self.kernel, self.stride, self.padding())?,
            )),
        }
    }
}

/// One row of an inverted-residual stage table: `repeats` blocks of
/// `channels` outputs, the first using `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSetting {
    pub expansion: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
}

impl StageSetting {
    pub const fn new(expansion: usize, channels: usize, repeats: usize, stride: usize) -> Self {
        Self {
            expansion,
            channels,
            repeats,
            stride,
        }
    }
}

/// Which removal counts a family supports, and where each student taps its
/// attention activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub entries: Vec<PlanEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub blocks_removed: usize,
    pub attention_source: usize,
}

impl CompressionPlan {
    pub fn source_for(&self, removed: usize) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.blocks_removed == removed)
            .map(|e| e.attention_source)
    }

    pub fn removals(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.blocks_removed).collect()
    }
}

/// Channel widths and stage layout of an inverted-residual family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub name: String,
    pub input_shape: [usize; 3],
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageSetting>,
    pub last_channels: usize,
    pub plan: CompressionPlan,
}

impl WidthConfig {
    /// MobileNetV2 adapted to 32×32 inputs: stride-1 stem and second stage.
    pub fn mobilenet_v2_cifar() -> Self {
        let removals = [0, 2, 4, 6, 8, 10, 12, 14, 16];
        let sources = [9, 9, 9, 9, 4, 4, 4, 2, 0];
        Self {
            name: "mobilenet_v2".into(),
            input_shape: [3, 32, 32],
            stem_channels: 32,
            stem_stride: 1,
            stages: vec![
                StageSetting::new(1, 16, 1, 1),
                StageSetting::new(6, 24, 2, 1),
                StageSetting::new(6, 32, 3, 2),
                StageSetting::new(6, 64, 4, 2),
                StageSetting::new(6, 96, 3, 1),
                StageSetting::new(6, 160, 3, 2),
                StageSetting::new(6, 320, 1, 1),
            ],
            last_channels: 1280,
            plan: CompressionPlan {
                entries: removals
                    .iter()
                    .zip(sources)
                    .map(|(&blocks_removed, attention_source)| PlanEntry {
                        blocks_removed,
                        attention_source,
                    })
                    .collect(),
            },
        }
    }

    /// Desk-scale family with the same block grammar: MobileNetV2 channels
    /// divided by `divisor` (floored at 2) and only the first
    /// `ir_blocks` inverted residuals. Every removal that leaves at least
    /// one inverted residual is valid; students tap the middle retained block.
    pub fn micro(divisor: usize, ir_blocks: usize, image_size: usize) -> Self {
        let full = Self::mobilenet_v2_cifar();
        let scale = |c: usize| (c / divisor.max(1)).max(2);
        let mut stages = Vec::new();
        let mut left = ir_blocks;
        for s in &full.stages {
            if left == 0 {
                break;
            }
            let repeats = s.repeats.min(left);
            left -= repeats;
            stages.push(StageSetting::new(
                s.expansion,
                scale(s.channels),
                repeats,
                s.stride,
            ));
        }
        let blocks = stages.iter().map(|s| s.repeats).sum::<usize>();
        let entries = (0..blocks)
            .map(|removed| PlanEntry {
                blocks_removed: removed,
                attention_source: (blocks - removed).div_ceil(2),
            })
            .collect();
        Self {
            name: format!("micro_d{divisor}_b{blocks}"),
            input_shape: [3, image_size, image_size],
            stem_channels: scale(full.stem_channels),
            stem_stride: 1,
            stages,
            last_channels: scale(full.last_channels),
            plan: CompressionPlan { entries },
        }
    }

    /// The default desk-scale family: channels ÷8, four inverted residuals.
    pub fn micronet() -> Self {
        Self::micro(8, 4, 32)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: WidthConfig,
    pub blocks_removed: usize,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub blocks: Vec<BlockSpec>,
    pub attention_source: usize,
}

impl ModelSpec {
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(BlockSpec::param_count).sum()
    }

    /// Convolution layers plus the classifier head.
    pub fn layer_count(&self) -> usize {
        self.blocks
            .iter()
            .map(BlockSpec::conv_layer_count)
            .sum::<usize>()
            + 1
    }

    pub fn inverted_residual_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == BlockKind::InvertedResidual)
            .count()
    }

    /// Channel width entering the classifier.
    pub fn output_features(&self) -> usize {
        self.blocks.last().map(|b| b.in_channels).unwrap_or(0)
    }

    pub fn block_index(&self, block_id: usize) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.block_id == block_id && b.kind != BlockKind::Classifier)
    }

    /// `C×H×W` of the activation leaving block `block_id` for this spec's input.
    pub fn activation_shape(&self, block_id: usize) -> Result<[usize; 3]> {
        let idx = self.block_index(block_id).ok_or_else(|| {
            Error::invalid(format!(
                "block {block_id} is not a retained feature block of {}",
                self.name
            ))
        })?;
        let mut hw = (self.input_shape[1], self.input_shape[2]);
        for b in &self.blocks[..=idx] {
            hw = b.output_hw(hw).ok_or_else(|| {
                Error::invalid(format!(
                    "block {} does not fit input {:?}",
                    b.block_id, self.input_shape
                ))
            })?;
        }
        Ok([self.blocks[idx].out_channels, hw.0, hw.1])
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .blocks
            .last()
            .ok_or_else(|| Error::invalid("model has no blocks"))?;
        if last.kind != BlockKind::Classifier {
            return Err(Error::invalid("last block must be a classifier"));
        }
        if self.blocks[..self.blocks.len() - 1]
            .iter()
            .any(|b| b.kind == BlockKind::Classifier)
        {
            return Err(Error::invalid("classifier must be the final block"));
        }
        if self.block_index(self.attention_source).is_none() {
            return Err(Error::invalid(format!(
                "attention source {} is not a retained block",
                self.attention_source
            )));
        }
        let mut channels = self.input_shape[0];
        for b in &self.blocks {
            if b.in_channels != channels {
                return Err(Error::invalid(format!(
                    "block {} expects {} input channels but receives {channels}",
                    b.block_id, b.in_channels
                )));
            }
            channels = b.out_channels;
        }
        if channels != self.num_classes {
            return Err(Error::invalid("classifier width differs from num_classes"));
        }
        self.activation_shape(self.attention_source).map(|_| ())
    }
}

/// Full-depth network of a family: stem, all inverted residuals, final
/// 1×1 ConvBNReLU and classifier.
pub fn build_teacher_spec(num_classes: usize, family: &WidthConfig) -> Result<ModelSpec> {
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "num_classes must be at least 2, got {num_classes}"
        )));
    }
    let mut blocks = vec![BlockSpec::conv_bn_relu(
        0,
        family.input_shape[0],
        family.stem_channels,
        3,
        family.stem_stride,
    )];
    let mut channels = family.stem_channels;
    let mut id = 1;
    for stage in &family.stages {
        for r in 0..stage.repeats {
            let stride = if r == 0 { stage.stride } else { 1 };
            blocks.push(BlockSpec::inverted_residual(
                id,
                channels,
                stage.channels,
                stride,
                stage.expansion,
            ));
            channels = stage.channels;
            id += 1;
        }
    }
    blocks.push(BlockSpec::conv_bn_relu(
        id,
        channels,
        family.last_channels,
        1,
        1,
    ));
    blocks.push(BlockSpec::classifier(
        id + 1,
        family.last_channels,
        num_classes,
    ));
    let attention_source = family
        .plan
        .source_for(0)
        .ok_or_else(|| Error::invalid("compression plan lacks the full-depth entry"))?;
    let spec = ModelSpec {
        name: format!("{}_teacher", family.name),
        family: family.clone(),
        blocks_removed: 0,
        input_shape: family.input_shape,
        num_classes,
        blocks,
        attention_source,
    };
    spec.validate()?;
    Ok(spec)
}

/// Removes `n_blocks_removed` inverted residuals from the end of the teacher.
/// Students also drop the final ConvBNReLU and size the classifier to the
/// last retained block.
pub fn derive_student(teacher: &ModelSpec, n_blocks_removed: usize) -> Result<ModelSpec> {
    if teacher.blocks_removed != 0 {
        return Err(Error::invalid(
            "students must be derived from a full-depth teacher",
        ));
    }
    let Some(source) = teacher.family.plan.source_for(n_blocks_removed) else {
        return Err(Error::invalid(format!(
            "cannot remove {n_blocks_removed} blocks from {}; valid removal counts are {:?}",
            teacher.name,
            teacher.family.plan.removals()
        )));
    };
    if n_blocks_removed == 0 {
        return Ok(teacher.clone());
    }
    let total = teacher.inverted_residual_count();
    if n_blocks_removed >= total {
        return Err(Error::invalid(format!(
            "removing {n_blocks_removed} of {total} inverted residuals leaves none"
        )));
    }
    let keep = total - n_blocks_removed;
    let mut blocks: Vec<BlockSpec> = teacher.blocks[..1 + keep].to_vec();
    let features = blocks.last().map(|b| b.out_channels).unwrap_or(0);
    let classifier_id = teacher.blocks.last().map(|b| b.block_id).unwrap_or(0);
    blocks.push(BlockSpec::classifier(
        classifier_id,
        features,
        teacher.num_classes,
    ));
    let spec = ModelSpec {
        name: format!("{}_student_r{n_blocks_removed}", teacher.family.name),
        family: teacher.family.clone(),
        blocks_removed: n_blocks_removed,
        input_shape: teacher.input_shape,
        num_classes: teacher.num_classes,
        blocks,
        attention_source: source,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn compression_factor(teacher_params: usize, student_params: usize) -> Result<f64> {
    if teacher_params == 0 || student_params == 0 {
        return Err(Error::invalid(
            "compression factor needs positive parameter counts",
        ));
    }
    Ok(teacher_params as f64 / student_params as f64)
}
