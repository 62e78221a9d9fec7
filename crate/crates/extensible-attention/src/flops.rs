//! Exact multiply-accumulate accounting for one extensible-attention layer.

use crate::config::{EaConfig, ProjectionSource, SamplingKind};

/// Itemized MAC counts of one `ea_forward` pass. Softmax exponentials and
/// layer-norm bookkeeping carry no multiply-accumulates and are not counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    /// `H·W · C²` — query projection.
    pub query_proj: u64,
    /// `H·W · M·N · 2C` — offset prediction.
    pub offset_proj: u64,
    /// `H·W · M·N · 4C` — bilinear reads (4 weighted neighbours per channel).
    pub sampling: u64,
    /// `H·W · M·N · C·head_dim` — key projection.
    pub key_proj: u64,
    /// `H·W · M·N · C·head_dim` — value projection.
    pub value_proj: u64,
    /// `H·W · M·N · (head_dim + 1)` — similarity dots plus scaling.
    pub logits: u64,
    /// `H·W · M·N · head_dim` — weight × value aggregation.
    pub aggregation: u64,
    /// `H·W · C²` — output projection.
    pub output_proj: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.query_proj
            + self.offset_proj
            + self.sampling
            + self.key_proj
            + self.value_proj
            + self.logits
            + self.aggregation
            + self.output_proj
    }
}

/// MAC count of one extensible-attention layer on an `H×W` map.
pub fn flop_count(cfg: &EaConfig, h: usize, w: usize) -> FlopBreakdown {
    let hw = (h * w) as u64;
    let c = cfg.channels as u64;
    let mn = (cfg.heads * cfg.points) as u64;
    let hd = cfg.head_dim() as u64;
    let sampling_per_read = match (cfg.projection_source, cfg.sampling) {
        (ProjectionSource::Query, _) => 0,
        (_, SamplingKind::Bilinear) => 4 * c,
        (_, SamplingKind::Nearest) => 0,
    };
    FlopBreakdown {
        query_proj: hw * c * c,
        offset_proj: hw * mn * 2 * c,
        sampling: hw * mn * sampling_per_read,
        key_proj: hw * mn * c * hd,
        value_proj: hw * mn * c * hd,
        logits: hw * mn * (hd + 1),
        aggregation: hw * mn * hd,
        output_proj: hw * c * c,
    }
}
