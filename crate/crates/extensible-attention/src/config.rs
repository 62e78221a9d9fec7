use std::fmt;

use numeric_core::NumericError;
use serde::{Deserialize, Serialize};

pub type Result<T> = std::result::Result<T, AttentionError>;

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionError {
    Config(String),
    /// A forward pass produced a non-finite activation in the given layer.
    NonFiniteLayer { layer: usize, source: NumericError },
    Numeric(NumericError),
}

impl fmt::Display for AttentionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionError::Config(msg) => write!(f, "attention config error: {msg}"),
            AttentionError::NonFiniteLayer { layer, source } => {
                write!(f, "non-finite activation in extensible attention layer {layer}: {source}")
            }
            AttentionError::Numeric(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AttentionError {}

impl From<NumericError> for AttentionError {
    fn from(e: NumericError) -> Self {
        AttentionError::Numeric(e)
    }
}

/// Where keys and values are projected from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSource {
    /// Project the features sampled at the offset points (default).
    #[default]
    Sampled,
    /// Project the query feature itself for every point.
    Query,
}

/// How sampling locations are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSource {
    /// Query position plus fixed base offset plus the learned offset (default).
    #[default]
    Learned,
    /// Enumerate every grid location; requires `points == H·W`. Used by the
    /// dense-equivalence mode.
    FullGrid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    #[default]
    Bilinear,
    Nearest,
}

/// Shape of one extensible-attention stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EaConfig {
    /// Common per-stage channel width `C`.
    pub channels: usize,
    /// Attention heads `M`; must divide `channels`.
    pub heads: usize,
    /// Extensible points per query per head `N`.
    pub points: usize,
    /// Stacked layers `L`.
    pub layers: usize,
    #[serde(default)]
    pub projection_source: ProjectionSource,
    #[serde(default)]
    pub offset_source: OffsetSource,
    /// Residual + layer norm around each layer. Disabling this is a test
    /// switch for linearity checks.
    #[serde(default = "default_true")]
    pub layer_norm: bool,
    #[serde(default)]
    pub sampling: SamplingKind,
}

fn default_true() -> bool {
    true
}

impl Default for EaConfig {
    fn default() -> Self {
        EaConfig {
            channels: 64,
            heads: 8,
            points: 4,
            layers: 7,
            projection_source: ProjectionSource::default(),
            offset_source: OffsetSource::default(),
            layer_norm: true,
            sampling: SamplingKind::default(),
        }
    }
}

impl EaConfig {
    pub fn new(channels: usize, heads: usize, points: usize, layers: usize) -> Self {
        EaConfig { channels, heads, points, layers, ..Default::default() }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 {
            return Err(AttentionError::Config("channels and heads must be positive".into()));
        }
        if self.channels % self.heads != 0 {
            return Err(AttentionError::Config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.points < 1 {
            return Err(AttentionError::Config("points must be at least 1".into()));
        }
        if self.layers < 1 {
            return Err(AttentionError::Config("layers must be at least 1".into()));
        }
        Ok(())
    }
}
