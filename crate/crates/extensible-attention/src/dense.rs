//! Full softmax attention over every grid location, computed with explicit
//! dense matrices. Test oracle only: when extensible attention is restricted
//! to `N = H·W` grid-enumerating points with shared per-point projections,
//! its output must match this.
//!
//! The arithmetic here is deliberately self-contained — it shares no code
//! with the tape path it checks.

use numeric_core::Tensor;
use rand::Rng;

use crate::config::{AttentionError, EaConfig, OffsetSource, Result};
use crate::params::EaLayerParams;

/// Weights of a standard multi-head attention layer: one shared key/value
/// projection per head instead of per-point ones.
#[derive(Clone, Debug)]
pub struct DenseAttentionParams {
    pub w_query: Tensor,      // C×C
    pub w_key: Vec<Tensor>,   // M entries, C×head_dim
    pub w_value: Vec<Tensor>, // M entries, C×head_dim
    pub w_out: Tensor,        // C×C
    pub ln_scale: Tensor,
    pub ln_shift: Tensor,
}

impl DenseAttentionParams {
    pub fn init(cfg: &EaConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        let hd = cfg.head_dim();
        let mut mat = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-bound..bound))
        };
        let w_query = mat(c, c);
        let w_key = (0..cfg.heads).map(|_| mat(c, hd)).collect();
        let w_value = (0..cfg.heads).map(|_| mat(c, hd)).collect();
        let w_out = mat(c, c);
        DenseAttentionParams {
            w_query,
            w_key,
            w_value,
            w_out,
            ln_scale: Tensor::from_fn(&[c], |_| rng.gen_range(0.5..1.5)),
            ln_shift: Tensor::from_fn(&[c], |_| rng.gen_range(-0.5..0.5)),
        }
    }

    /// Expand into extensible-attention form: `points = H·W`, offsets
    /// enumerating the grid, key/value projections replicated across points.
    pub fn to_equivalence_params(&self, cfg: &EaConfig, h: usize, w: usize) -> (EaLayerParams, EaConfig) {
        let c = cfg.channels;
        let points = h * w;
        let mut ea_cfg = cfg.clone();
        ea_cfg.points = points;
        ea_cfg.offset_source = OffsetSource::FullGrid;
        let mn = cfg.heads * points;
        let mut w_offset = Vec::with_capacity(mn);
        let mut w_key = Vec::with_capacity(mn);
        let mut w_value = Vec::with_capacity(mn);
        for m in 0..cfg.heads {
            for _ in 0..points {
                w_offset.push(Tensor::zeros(&[c, 2]));
                w_key.push(self.w_key[m].clone());
                w_value.push(self.w_value[m].clone());
            }
        }
        let params = EaLayerParams {
            w_query: self.w_query.clone(),
            w_offset,
            w_key,
            w_value,
            w_out: self.w_out.clone(),
            ln_scale: self.ln_scale.clone(),
            ln_shift: self.ln_shift.clone(),
            base_offsets: Tensor::zeros(&[mn, 2]),
        };
        (params, ea_cfg)
    }
}

fn dense_mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Standard full attention over all `H·W` keys, residual + layer norm.
/// Refuses configs whose point count differs from `H·W`.
pub fn dense_attention_oracle(
    x: &Tensor,
    params: &DenseAttentionParams,
    cfg: &EaConfig,
) -> Result<Tensor> {
    let [c, h, w] = x.shape() else {
        return Err(AttentionError::Config(format!("input must be C×H×W, got {:?}", x.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    let hw = h * w;
    if cfg.points != hw {
        return Err(AttentionError::Config(format!(
            "dense oracle requires points == H·W ({hw}), got {}",
            cfg.points
        )));
    }
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    // Rows: one C-vector per location.
    let mut rows = vec![0.0; hw * c];
    for ch in 0..c {
        for p in 0..hw {
            rows[p * c + ch] = x.data()[ch * hw + p];
        }
    }
    let q_full = dense_mm(&rows, hw, c, params.w_query.data(), c); // HW×C
    let scale = 1.0 / (hd as f64).sqrt();
    let mut merged = vec![0.0; hw * c]; // heads side by side
    for m in 0..heads {
        let k_m = dense_mm(&rows, hw, c, params.w_key[m].data(), hd); // HW×hd
        let v_m = dense_mm(&rows, hw, c, params.w_value[m].data(), hd); // HW×hd
        for q in 0..hw {
            // logits over all keys, softmax, weighted value sum
            let qvec = &q_full[q * c + m * hd..q * c + (m + 1) * hd];
            let mut logits = vec![0.0; hw];
            for (kidx, l) in logits.iter_mut().enumerate() {
                let kvec = &k_m[kidx * hd..(kidx + 1) * hd];
                *l = qvec.iter().zip(kvec).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            for (kidx, l) in logits.iter().enumerate() {
                let weight = l / denom;
                for d in 0..hd {
                    merged[q * c + m * hd + d] += weight * v_m[kidx * hd + d];
                }
            }
        }
    }
    let projected = dense_mm(&merged, hw, c, params.w_out.data(), c);
    // Residual + layer norm per row.
    let mut out = vec![0.0; c * hw];
    for q in 0..hw {
        let mut row: Vec<f64> = (0..c).map(|ch| rows[q * c + ch] + projected[q * c + ch]).collect();
        if cfg.layer_norm {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + 1e-6).sqrt();
            for (ch, v) in row.iter_mut().enumerate() {
                *v = params.ln_scale.data()[ch] * ((*v - mean) * istd) + params.ln_shift.data()[ch];
            }
        }
        for (ch, v) in row.iter().enumerate() {
            out[ch * hw + q] = *v;
        }
    }
    Ok(Tensor::new(vec![c, h, w], out)?)
}
