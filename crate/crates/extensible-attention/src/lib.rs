//! Extensible attention: each query location predicts `N` offset points,
//! samples the map there, and aggregates the sampled values with
//! softmax-normalized similarity scores. Multi-head aggregation is realized
//! by a block concat-projection; layers stack sequentially so each layer
//! extends the regions reached by the previous one.

mod config;
mod dense;
mod flops;
mod layer;
mod params;

pub use config::{AttentionError, EaConfig, OffsetSource, ProjectionSource, Result, SamplingKind};
pub use dense::{dense_attention_oracle, DenseAttentionParams};
pub use flops::{flop_count, FlopBreakdown};
pub use layer::{ea_forward, predict_offsets, stack_forward, AttentionTrace, EaLayerVars};
pub use params::EaLayerParams;
