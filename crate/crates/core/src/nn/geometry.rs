//! Static shape arithmetic: temporal extents and receptive fields.

use super::{BlockKind, ConfigError, ModelConfig};

/// Temporal extent after the stem (index 0) and after every block
/// (index `i + 1`), for an input of `input_len` samples. Block convolutions
/// preserve length ("same" padding); pooling floors.
pub fn extent_trace(cfg: &ModelConfig, input_len: usize) -> Result<Vec<usize>, ConfigError> {
    if input_len < cfg.stem.kernel || cfg.stem.stride == 0 {
        return Err(ConfigError::Invalid {
            field: "stem.kernel".into(),
            reason: format!(
                "input of {input_len} samples is shorter than the stem kernel {}",
                cfg.stem.kernel
            ),
        });
    }
    let mut t = (input_len - cfg.stem.kernel) / cfg.stem.stride + 1;
    let mut trace = vec![t];
    for b in &cfg.blocks {
        t /= b.pool_size.max(1);
        trace.push(t);
    }
    Ok(trace)
}

/// Input span seen by one output frame at a given depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    /// Samples reached through the convolution and pooling path.
    pub span: usize,
    /// Input samples between neighbouring output frames.
    pub jump: usize,
    /// True once a squeeze-and-excitation gate has been applied: its global
    /// average makes every frame depend on the whole input, on top of `span`.
    pub global_gating: bool,
}

/// Receptive field after the stem (`depth == 0`) or after block `depth`
/// (1-based).
pub fn receptive_field(cfg: &ModelConfig, depth: usize) -> Result<ReceptiveField, ConfigError> {
    if depth > cfg.blocks.len() {
        return Err(ConfigError::Invalid {
            field: "depth".into(),
            reason: format!("{depth} exceeds the {} configured blocks", cfg.blocks.len()),
        });
    }
    let mut span = cfg.stem.kernel;
    let mut jump = cfg.stem.stride;
    let mut global = false;
    for b in &cfg.blocks[..depth] {
        let convs = match b.kind {
            BlockKind::Basic => 1,
            BlockKind::Rese2 => {
                global = true;
                2
            }
        };
        span += convs * (b.conv_kernel - 1) * jump;
        // Non-overlapping pooling: window p with stride p.
        span += (b.pool_size - 1) * jump;
        jump *= b.pool_size;
    }
    Ok(ReceptiveField {
        span,
        jump,
        global_gating: global,
    })
}
