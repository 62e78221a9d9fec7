use std::fmt;

use extensible_attention::{
    stack_forward, AttentionError, AttentionTrace, EaConfig, EaLayerParams, EaLayerVars,
};
use numeric_core::{concat_channels, NumericError, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::posenc::positional_encoding_2d;

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Clone, Debug, PartialEq)]
pub enum FusionError {
    Config(String),
    Attention(AttentionError),
    Numeric(NumericError),
}

impl fmt::Display for FusionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionError::Config(msg) => write!(f, "fusion config error: {msg}"),
            FusionError::Attention(e) => write!(f, "{e}"),
            FusionError::Numeric(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FusionError {}

impl From<AttentionError> for FusionError {
    fn from(e: AttentionError) -> Self {
        FusionError::Attention(e)
    }
}

impl From<NumericError> for FusionError {
    fn from(e: NumericError) -> Self {
        FusionError::Numeric(e)
    }
}

/// The three backbone stage outputs at strides 4 / 8 / 16.
#[derive(Clone, Debug)]
pub struct StageBundle {
    pub s3: Tensor,
    pub s4: Tensor,
    pub s5: Tensor,
}

impl StageBundle {
    pub const STRIDES: [usize; 3] = [4, 8, 16];

    pub fn validate(&self) -> Result<()> {
        let d3 = self.s3.dims3("stage_bundle").map_err(FusionError::Numeric)?;
        let d4 = self.s4.dims3("stage_bundle").map_err(FusionError::Numeric)?;
        let d5 = self.s5.dims3("stage_bundle").map_err(FusionError::Numeric)?;
        if d3.1 != 2 * d4.1 || d3.2 != 2 * d4.2 || d4.1 != 2 * d5.1 || d4.2 != 2 * d5.2 {
            return Err(FusionError::Config(format!(
                "stage sizes must halve exactly: {}×{} / {}×{} / {}×{}",
                d3.1, d3.2, d4.1, d4.2, d5.1, d5.2
            )));
        }
        if d5.1 == 0 || d5.2 == 0 {
            return Err(FusionError::Config("coarsest stage is empty".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> [&Tensor; 3] {
        [&self.s3, &self.s4, &self.s5]
    }
}

/// Which stages run extensible attention. Unselected stages pass through
/// projection only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSet {
    pub s3: bool,
    pub s4: bool,
    pub s5: bool,
}

impl StageSet {
    pub const ALL: StageSet = StageSet { s3: true, s4: true, s5: true };
    pub const NONE: StageSet = StageSet { s3: false, s4: false, s5: false };

    pub fn contains(&self, stage: usize) -> bool {
        match stage {
            0 => self.s3,
            1 => self.s4,
            2 => self.s5,
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.s3 || self.s4 || self.s5)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.s3 {
            parts.push("s3");
        }
        if self.s4 {
            parts.push("s4");
        }
        if self.s5 {
            parts.push("s5");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Input channel widths of the three stages.
    pub stage_channels: [usize; 3],
    /// Common width `C` every stage is projected to; the fused map carries
    /// `3C` channels.
    pub common_channels: usize,
    /// Per-stage attention stack configuration (`channels` must equal
    /// `common_channels`).
    pub attention: EaConfig,
    #[serde(default = "StageSet::all_default")]
    pub ea_stages: StageSet,
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
}

impl StageSet {
    fn all_default() -> StageSet {
        StageSet::ALL
    }
}

fn default_true() -> bool {
    true
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attention.channels != self.common_channels {
            return Err(FusionError::Config(format!(
                "attention channels {} must equal common width {}",
                self.attention.channels, self.common_channels
            )));
        }
        if self.positional_encoding && self.common_channels % 4 != 0 {
            return Err(FusionError::Config(format!(
                "positional encoding needs common width divisible by 4, got {}",
                self.common_channels
            )));
        }
        self.attention.validate()?;
        Ok(())
    }

    pub fn fused_channels(&self) -> usize {
        3 * self.common_channels
    }
}

/// Restrict attention to a subset of stages (the stage-combination ablation).
/// The fusion graph itself is unchanged; unselected stages contribute their
/// projected features directly.
pub fn stage_ablation_mode(cfg: &FusionConfig, subset: StageSet) -> Result<FusionConfig> {
    if subset.is_empty() {
        return Err(FusionError::Config("stage ablation needs a non-empty subset".into()));
    }
    Ok(FusionConfig { ea_stages: subset, ..cfg.clone() })
}

/// All fusion weights: three stage projections plus one attention stack per
/// stage (kept allocated even for stages outside `ea_stages`, so ablation
/// sweeps share initialization).
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub proj: [Tensor; 3],
    pub ea_layers: [Vec<EaLayerParams>; 3],
}

impl FusionParams {
    pub fn init(cfg: &FusionConfig, rng: &mut impl Rng) -> Self {
        let proj = [0, 1, 2].map(|i| {
            let rows = cfg.stage_channels[i];
            let bound = (6.0 / (rows + cfg.common_channels) as f64).sqrt();
            Tensor::from_fn(&[rows, cfg.common_channels], |_| rng.gen_range(-bound..bound))
        });
        let ea_layers = [0, 1, 2].map(|_| {
            (0..cfg.attention.layers).map(|_| EaLayerParams::init(&cfg.attention, rng)).collect()
        });
        FusionParams { proj, ea_layers }
    }

    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> FusionVars<'t> {
        FusionVars {
            proj: [0, 1, 2].map(|i| tape.leaf(self.proj[i].clone(), trainable)),
            ea_layers: [0, 1, 2].map(|i| {
                self.ea_layers[i].iter().map(|l| l.vars(tape, trainable)).collect()
            }),
        }
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, p) in self.proj.iter().enumerate() {
            out.push((format!("{prefix}.proj.{i}"), p.clone()));
        }
        for (i, layers) in self.ea_layers.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                out.extend(layer.named_tensors(&format!("{prefix}.ea.{i}.{l}")));
            }
        }
        out
    }
}

pub struct FusionVars<'t> {
    pub proj: [Var<'t>; 3],
    pub ea_layers: [Vec<EaLayerVars<'t>>; 3],
}

/// The fused feature map (`3C` channels at the finest stage resolution) plus
/// per-stage attention traces.
pub struct FusedFeatures<'t> {
    pub map: Var<'t>,
    pub common_channels: usize,
    /// Traces per stage (s3, s4, s5), one per attention layer; empty for
    /// stages outside `ea_stages`.
    pub traces: [Vec<AttentionTrace>; 3],
}

/// 1×1 linear projection of a `Cᵢ×h×w` map to the common width.
pub fn project_stage<'t>(stage: Var<'t>, w_proj: Var<'t>) -> Result<Var<'t>> {
    let shape = stage.shape();
    let [_, h, w] = shape.as_slice() else {
        return Err(FusionError::Config(format!("stage must be C×H×W, got {shape:?}")));
    };
    let (h, w) = (*h, *w);
    let rows = stage.channels_to_rows()?;
    let projected = rows.matmul(w_proj)?;
    Ok(projected.rows_to_channels(h, w)?)
}

/// Project, encode, attend and fuse the three stages per the top-down graph:
/// `f4 = up(Φ5) + Φ4`, `f3 = up(f4) + Φ3`, output `Φ5↑4 ⊕ f4↑2 ⊕ f3`.
pub fn fuse_stages<'t>(
    tape: &'t Tape,
    bundle: [Var<'t>; 3],
    vars: &FusionVars<'t>,
    cfg: &FusionConfig,
) -> Result<FusedFeatures<'t>> {
    cfg.validate()?;
    let mut phi = Vec::with_capacity(3);
    let mut traces: [Vec<AttentionTrace>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..3 {
        let shape = bundle[i].shape();
        let [c, h, w] = shape.as_slice() else {
            return Err(FusionError::Config(format!("stage {i} must be C×H×W, got {shape:?}")));
        };
        if *c != cfg.stage_channels[i] {
            return Err(FusionError::Config(format!(
                "stage {i} has {c} channels, config says {}",
                cfg.stage_channels[i]
            )));
        }
        let mut map = project_stage(bundle[i], vars.proj[i])?;
        if cfg.ea_stages.contains(i) {
            if cfg.positional_encoding {
                let pe = positional_encoding_2d(*h, *w, cfg.common_channels)?;
                map = map.add(tape.constant(pe))?;
            }
            let (out, stage_traces) = stack_forward(tape, map, &vars.ea_layers[i], &cfg.attention)?;
            map = out;
            traces[i] = stage_traces;
        }
        phi.push(map);
    }
    let (phi3, phi4, phi5) = (phi[0], phi[1], phi[2]);
    let f4 = phi5.upsample2x()?.add(phi4)?;
    let f3 = f4.upsample2x()?.add(phi3)?;
    let phi5_up4 = phi5.upsample2x()?.upsample2x()?;
    let f4_up2 = f4.upsample2x()?;
    let map = concat_channels(&[phi5_up4, f4_up2, f3])?;
    Ok(FusedFeatures { map, common_channels: cfg.common_channels, traces })
}
