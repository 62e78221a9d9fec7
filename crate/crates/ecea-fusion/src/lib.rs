//! Wires three backbone stages into extensible attention: project each stage
//! to a common width, add a fixed sinusoidal positional encoding, run the
//! per-stage attention stacks, fuse top-down by upsample-add, and concatenate
//! everything at the finest resolution for the detection heads.

mod fusion;
mod posenc;

pub use fusion::{
    fuse_stages, project_stage, stage_ablation_mode, FusedFeatures, FusionConfig, FusionError,
    FusionParams, FusionVars, Result, StageBundle, StageSet,
};
pub use posenc::positional_encoding_2d;
