use numeric_core::{Tape, Tensor};
use rand::Rng;

use crate::config::{AttentionError, EaConfig, Result};
use crate::layer::EaLayerVars;

/// All learnable weights of one extensible-attention layer plus the fixed
/// per-point base offsets. Per-head/per-point matrices are stored flat,
/// indexed `m * points + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EaLayerParams {
    /// `C×C` query projection.
    pub w_query: Tensor,
    /// `M·N` offset projections, each `C×2` producing `(Δy, Δx)`.
    pub w_offset: Vec<Tensor>,
    /// `M·N` key projections, each `C×head_dim`.
    pub w_key: Vec<Tensor>,
    /// `M·N` value projections, each `C×head_dim`.
    pub w_value: Vec<Tensor>,
    /// `C×C` output projection realizing the head aggregation as one block
    /// matrix.
    pub w_out: Tensor,
    pub ln_scale: Tensor,
    pub ln_shift: Tensor,
    /// `[M·N, 2]` fixed base offsets (not trainable). Initialized on a
    /// radius-1 ring so the initial points are distinct even though the
    /// learned offset weights start at zero.
    pub base_offsets: Tensor,
}

impl EaLayerParams {
    /// Random initialization: uniform Xavier bounds for the projections,
    /// zeros for the offset weights, identity-like layer norm.
    pub fn init(cfg: &EaConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        let hd = cfg.head_dim();
        let mn = cfg.heads * cfg.points;
        let xavier = |fan_in: usize, fan_out: usize, rng: &mut dyn rand::RngCore| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-bound..bound))
        };
        let w_query = xavier(c, c, rng);
        let w_offset = (0..mn).map(|_| Tensor::zeros(&[c, 2])).collect();
        let w_key = (0..mn).map(|_| xavier(c, hd, rng)).collect();
        let w_value = (0..mn).map(|_| xavier(c, hd, rng)).collect();
        let w_out = xavier(c, c, rng);
        EaLayerParams {
            w_query,
            w_offset,
            w_key,
            w_value,
            w_out,
            ln_scale: Tensor::full(&[c], 1.0),
            ln_shift: Tensor::zeros(&[c]),
            base_offsets: ring_base_offsets(cfg.heads, cfg.points, 1.0),
        }
    }

    /// All-zero weights (layer reduces to residual + layer norm).
    pub fn zeros(cfg: &EaConfig) -> Self {
        let c = cfg.channels;
        let hd = cfg.head_dim();
        let mn = cfg.heads * cfg.points;
        EaLayerParams {
            w_query: Tensor::zeros(&[c, c]),
            w_offset: (0..mn).map(|_| Tensor::zeros(&[c, 2])).collect(),
            w_key: (0..mn).map(|_| Tensor::zeros(&[c, hd])).collect(),
            w_value: (0..mn).map(|_| Tensor::zeros(&[c, hd])).collect(),
            w_out: Tensor::zeros(&[c, c]),
            ln_scale: Tensor::full(&[c], 1.0),
            ln_shift: Tensor::zeros(&[c]),
            base_offsets: Tensor::zeros(&[mn, 2]),
        }
    }

    pub fn validate(&self, cfg: &EaConfig) -> Result<()> {
        cfg.validate()?;
        let c = cfg.channels;
        let hd = cfg.head_dim();
        let mn = cfg.heads * cfg.points;
        let check = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape() != shape {
                return Err(AttentionError::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(AttentionError::Config(format!("{name} contains non-finite values")));
            }
            Ok(())
        };
        check("w_query", &self.w_query, &[c, c])?;
        if self.w_offset.len() != mn || self.w_key.len() != mn || self.w_value.len() != mn {
            return Err(AttentionError::Config(format!(
                "per-point weight counts {}/{}/{} do not match heads·points = {mn}",
                self.w_offset.len(),
                self.w_key.len(),
                self.w_value.len()
            )));
        }
        for (i, t) in self.w_offset.iter().enumerate() {
            check(&format!("w_offset[{i}]"), t, &[c, 2])?;
        }
        for (i, t) in self.w_key.iter().enumerate() {
            check(&format!("w_key[{i}]"), t, &[c, hd])?;
        }
        for (i, t) in self.w_value.iter().enumerate() {
            check(&format!("w_value[{i}]"), t, &[c, hd])?;
        }
        check("w_out", &self.w_out, &[c, c])?;
        check("ln_scale", &self.ln_scale, &[c])?;
        check("ln_shift", &self.ln_shift, &[c])?;
        check("base_offsets", &self.base_offsets, &[mn, 2])?;
        Ok(())
    }

    /// Trainable tensors in a fixed order (base offsets excluded).
    pub fn flatten(&self) -> Vec<Tensor> {
        let mut out = vec![self.w_query.clone()];
        out.extend(self.w_offset.iter().cloned());
        out.extend(self.w_key.iter().cloned());
        out.extend(self.w_value.iter().cloned());
        out.push(self.w_out.clone());
        out.push(self.ln_scale.clone());
        out.push(self.ln_shift.clone());
        out
    }

    pub fn tensor_count(cfg: &EaConfig) -> usize {
        4 + 3 * cfg.heads * cfg.points
    }

    /// Rebuild from the [`flatten`](Self::flatten) order.
    pub fn from_tensors(cfg: &EaConfig, base_offsets: Tensor, tensors: &[Tensor]) -> Result<Self> {
        let mn = cfg.heads * cfg.points;
        if tensors.len() != Self::tensor_count(cfg) {
            return Err(AttentionError::Config(format!(
                "expected {} tensors, got {}",
                Self::tensor_count(cfg),
                tensors.len()
            )));
        }
        let params = EaLayerParams {
            w_query: tensors[0].clone(),
            w_offset: tensors[1..1 + mn].to_vec(),
            w_key: tensors[1 + mn..1 + 2 * mn].to_vec(),
            w_value: tensors[1 + 2 * mn..1 + 3 * mn].to_vec(),
            w_out: tensors[1 + 3 * mn].clone(),
            ln_scale: tensors[2 + 3 * mn].clone(),
            ln_shift: tensors[3 + 3 * mn].clone(),
            base_offsets,
        };
        params.validate(cfg)?;
        Ok(params)
    }

    /// Mount the trainable tensors on a tape.
    pub fn vars<'t>(&self, tape: &'t Tape, trainable: bool) -> EaLayerVars<'t> {
        EaLayerVars {
            w_query: tape.leaf(self.w_query.clone(), trainable),
            w_offset: self.w_offset.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_key: self.w_key.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_value: self.w_value.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_out: tape.leaf(self.w_out.clone(), trainable),
            ln_scale: tape.leaf(self.ln_scale.clone(), trainable),
            ln_shift: tape.leaf(self.ln_shift.clone(), trainable),
            base_offsets: self.base_offsets.clone(),
        }
    }

    /// Named views of every tensor including the fixed base offsets, for
    /// checkpointing. Names are `<prefix>.<field>[.<index>]`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![(format!("{prefix}.w_query"), self.w_query.clone())];
        for (i, t) in self.w_offset.iter().enumerate() {
            out.push((format!("{prefix}.w_offset.{i}"), t.clone()));
        }
        for (i, t) in self.w_key.iter().enumerate() {
            out.push((format!("{prefix}.w_key.{i}"), t.clone()));
        }
        for (i, t) in self.w_value.iter().enumerate() {
            out.push((format!("{prefix}.w_value.{i}"), t.clone()));
        }
        out.push((format!("{prefix}.w_out"), self.w_out.clone()));
        out.push((format!("{prefix}.ln_scale"), self.ln_scale.clone()));
        out.push((format!("{prefix}.ln_shift"), self.ln_shift.clone()));
        out.push((format!("{prefix}.base_offsets"), self.base_offsets.clone()));
        out
    }
}

/// Base offsets on a radius-`r` ring, angles spread per point and rotated per
/// head so all `M·N` initial points are distinct. A fixed phase keeps the
/// initial points off exact grid lines, where bilinear weights have kinks.
pub(crate) fn ring_base_offsets(heads: usize, points: usize, radius: f64) -> Tensor {
    const PHASE: f64 = 0.35;
    Tensor::from_fn(&[heads * points, 2], |i| {
        let idx = i / 2;
        let (m, n) = (idx / points, idx % points);
        let angle =
            PHASE + std::f64::consts::TAU * (n as f64 + m as f64 / heads as f64) / points as f64;
        if i % 2 == 0 {
            radius * angle.sin()
        } else {
            radius * angle.cos()
        }
    })
}
