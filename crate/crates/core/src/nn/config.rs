//! Declarative architecture description.

use serde::{Deserialize, Serialize};

use super::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// conv → batch norm → ReLU → max-pool.
    Basic,
    /// Two convolutions with squeeze-and-excitation gating and a residual
    /// connection.
    Rese2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub filters: usize,
    pub pool_size: usize,
    pub conv_kernel: usize,
    /// Channel reduction ratio of the excitation bottleneck (rese2 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_reduction: Option<usize>,
}

impl BlockSpec {
    pub fn basic(filters: usize, pool_size: usize, conv_kernel: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Basic,
            filters,
            pool_size,
            conv_kernel,
            se_reduction: None,
        }
    }

    /// ReSE-2 block with the default reduction `min(16, filters / 4)`.
    pub fn rese2(filters: usize, pool_size: usize, conv_kernel: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Rese2,
            filters,
            pool_size,
            conv_kernel,
            se_reduction: Some(default_se_reduction(filters)),
        }
    }
}

/// `min(16, filters / 4)`, at least 1, lowered until it divides `filters`.
pub fn default_se_reduction(filters: usize) -> usize {
    let mut r = (filters / 4).clamp(1, 16);
    while !filters.is_multiple_of(r) {
        r -= 1;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    /// Follow the strided convolution with batch norm and ReLU.
    #[serde(default = "yes")]
    pub bn_relu: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    SigmoidMultilabel,
    SoftmaxMulticlass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Width of the hidden fully connected layer; 0 maps the pooled
    /// features straight to class logits.
    pub hidden: usize,
    pub n_classes: usize,
    pub output: OutputKind,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_len: usize,
    pub sample_rate: u32,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    /// Indices into `blocks` whose outputs are globally max-pooled and
    /// concatenated in front of the head.
    pub concat_taps: Vec<usize>,
    pub head: HeadSpec,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

/// Which of the two architectures a preset builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Basic blocks, head fed by the last block only.
    SampleCnn,
    /// ReSE-2 blocks, head fed by the last three blocks.
    Rese2Multi,
}

const DEFAULT_FILTERS: [usize; 9] = [128, 128, 128, 256, 256, 256, 256, 512, 512];

impl ModelConfig {
    /// Stem of `stem_stride`-sized filters, `n_blocks` pool-3 blocks with
    /// the default filter plan.
    pub fn preset(
        arch: Architecture,
        input_len: usize,
        stem_stride: usize,
        n_blocks: usize,
        n_classes: usize,
        output: OutputKind,
    ) -> Self {
        let blocks: Vec<BlockSpec> = (0..n_blocks)
            .map(|i| {
                let filters = DEFAULT_FILTERS[i.min(DEFAULT_FILTERS.len() - 1)];
                match arch {
                    Architecture::SampleCnn => BlockSpec::basic(filters, 3, 3),
                    Architecture::Rese2Multi => BlockSpec::rese2(filters, 3, 3),
                }
            })
            .collect();
        let concat_taps = match arch {
            Architecture::SampleCnn => vec![n_blocks - 1],
            Architecture::Rese2Multi => (n_blocks.saturating_sub(3)..n_blocks).collect(),
        };
        ModelConfig {
            input_len,
            sample_rate: 16_000,
            stem: StemSpec {
                kernel: stem_stride,
                stride: stem_stride,
                filters: 128,
                bn_relu: true,
            },
            blocks,
            concat_taps,
            head: HeadSpec {
                hidden: 256,
                n_classes,
                output,
            },
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }

    /// Music auto-tagging: 39,366 samples, stride-2 stem, 9 blocks, 50 tags.
    pub fn mtat(arch: Architecture) -> Self {
        Self::preset(arch, 39_366, 2, 9, 50, OutputKind::SigmoidMultilabel)
    }

    /// Speech commands: 16,000 samples, stride-2 stem, 8 blocks, 12 classes.
    pub fn speech(arch: Architecture) -> Self {
        Self::preset(arch, 16_000, 2, 8, 12, OutputKind::SoftmaxMulticlass)
    }

    /// Acoustic scene tagging: 19,683 samples, stride-3 stem, 8 blocks,
    /// 17 events.
    pub fn dcase(arch: Architecture) -> Self {
        Self::preset(arch, 19_683, 3, 8, 17, OutputKind::SigmoidMultilabel)
    }

    /// Channel count entering block `i`.
    pub fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.stem.filters
        } else {
            self.blocks[i - 1].filters
        }
    }

    /// Width of the concatenated feature vector feeding the head.
    pub fn concat_width(&self) -> usize {
        self.concat_taps
            .iter()
            .map(|&i| self.blocks[i].filters)
            .sum()
    }

    /// Stem stride times the product of every pool size.
    pub fn total_downsampling(&self) -> usize {
        self.blocks
            .iter()
            .fold(self.stem.stride, |acc, b| acc * b.pool_size)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &str, reason: String| {
            Err(ConfigError::Invalid {
                field: field.to_string(),
                reason,
            })
        };
        if self.input_len == 0 {
            return err("input_len", "must be positive".into());
        }
        if self.sample_rate == 0 {
            return err("sample_rate", "must be positive".into());
        }
        if self.stem.kernel == 0 || self.stem.stride == 0 || self.stem.filters == 0 {
            return err("stem", "kernel, stride and filters must be positive".into());
        }
        if self.stem.kernel > self.input_len {
            return err(
                "stem.kernel",
                format!("{} exceeds input_len {}", self.stem.kernel, self.input_len),
            );
        }
        if self.blocks.is_empty() {
            return err("blocks", "at least one block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let field = |name: &str| format!("blocks[{i}].{name}");
            if !(2..=3).contains(&b.conv_kernel) {
                return err(
                    &field("conv_kernel"),
                    format!("must be 2 or 3, got {}", b.conv_kernel),
                );
            }
            if !(2..=3).contains(&b.pool_size) {
                return err(
                    &field("pool_size"),
                    format!("must be 2 or 3, got {}", b.pool_size),
                );
            }
            if b.filters == 0 {
                return err(&field("filters"), "must be positive".into());
            }
            match (b.kind, b.se_reduction) {
                (BlockKind::Rese2, None) => {
                    return err(&field("se_reduction"), "required for rese2 blocks".into());
                }
                (BlockKind::Rese2, Some(r)) if r == 0 || b.filters % r != 0 => {
                    return err(
                        &field("se_reduction"),
                        format!("{r} does not divide filters {}", b.filters),
                    );
                }
                (BlockKind::Basic, Some(_)) => {
                    return err(&field("se_reduction"), "only valid for rese2 blocks".into());
                }
                _ => {}
            }
        }
        if self.total_downsampling() > self.input_len {
            return err(
                "blocks",
                format!(
                    "total downsampling {} exceeds input_len {}",
                    self.total_downsampling(),
                    self.input_len
                ),
            );
        }
        if self.concat_taps.is_empty() {
            return err("concat_taps", "must not be empty".into());
        }
        if self.concat_taps.windows(2).any(|w| w[0] >= w[1]) {
            return err("concat_taps", "must be strictly increasing".into());
        }
        if let Some(&bad) = self.concat_taps.iter().find(|&&i| i >= self.blocks.len()) {
            return err(
                "concat_taps",
                format!("index {bad} out of range for {} blocks", self.blocks.len()),
            );
        }
        if self.head.n_classes < 2 {
            return err(
                "head.n_classes",
                format!("must be at least 2, got {}", self.head.n_classes),
            );
        }
        if !(self.bn_eps > 0.0) {
            return err("bn_eps", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return err("bn_momentum", "must lie in [0, 1]".into());
        }
        // Every block must receive at least one full pooling window.
        let trace = super::geometry::extent_trace(self, self.input_len)?;
        if let Some(i) = trace.iter().skip(1).position(|&t| t == 0) {
            return err(
                &format!("blocks[{i}]"),
                "temporal extent collapses to zero".into(),
            );
        }
        Ok(())
    }
}
