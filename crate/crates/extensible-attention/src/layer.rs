use numeric_core::{concat_cols, concat_rows, SampleMode, Tape, Tensor, Var};

use crate::config::{
    AttentionError, EaConfig, OffsetSource, ProjectionSource, Result, SamplingKind,
};

const LN_EPS: f64 = 1e-6;

/// Tape handles for one layer's weights, plus the constant base offsets.
pub struct EaLayerVars<'t> {
    pub w_query: Var<'t>,
    pub w_offset: Vec<Var<'t>>,
    pub w_key: Vec<Var<'t>>,
    pub w_value: Vec<Var<'t>>,
    pub w_out: Var<'t>,
    pub ln_scale: Var<'t>,
    pub ln_shift: Var<'t>,
    pub base_offsets: Tensor,
}

impl<'t> EaLayerVars<'t> {
    /// Rebuild from vars laid out in [`EaLayerParams::flatten`] order, e.g.
    /// inside a gradient-check closure.
    pub fn from_slice(cfg: &EaConfig, base_offsets: Tensor, vars: &[Var<'t>]) -> Result<Self> {
        let mn = cfg.heads * cfg.points;
        if vars.len() != 4 + 3 * mn {
            return Err(AttentionError::Config(format!(
                "expected {} vars, got {}",
                4 + 3 * mn,
                vars.len()
            )));
        }
        Ok(EaLayerVars {
            w_query: vars[0],
            w_offset: vars[1..1 + mn].to_vec(),
            w_key: vars[1 + mn..1 + 2 * mn].to_vec(),
            w_value: vars[1 + 2 * mn..1 + 3 * mn].to_vec(),
            w_out: vars[1 + 3 * mn],
            ln_scale: vars[2 + 3 * mn],
            ln_shift: vars[3 + 3 * mn],
            base_offsets,
        })
    }
}

/// Sampled coordinates and attention weights of one layer, per query.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub height: usize,
    pub width: usize,
    pub heads: usize,
    pub points: usize,
    /// `(y, x)` per `[query][head][point]`, flattened.
    pub coords: Vec<f64>,
    /// Attention weight per `[query][head][point]`, flattened.
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    pub fn queries(&self) -> usize {
        self.height * self.width
    }

    fn flat(&self, q: usize, m: usize, n: usize) -> usize {
        (q * self.heads + m) * self.points + n
    }

    pub fn weight(&self, q: usize, m: usize, n: usize) -> f64 {
        self.weights[self.flat(q, m, n)]
    }

    pub fn coord(&self, q: usize, m: usize, n: usize) -> (f64, f64) {
        let i = self.flat(q, m, n) * 2;
        (self.coords[i], self.coords[i + 1])
    }

    /// Worst deviation of any per-(query, head) weight sum from 1.
    pub fn max_weight_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for q in 0..self.queries() {
            for m in 0..self.heads {
                let sum: f64 = (0..self.points).map(|n| self.weight(q, m, n)).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        worst
    }
}

/// Learned offsets of one query feature for head `m`: `Δp_n = x_q · W_offset[m,n]`.
/// The fixed base offsets are not included; they are added at sampling time.
pub fn predict_offsets(x_q: &Tensor, params: &crate::EaLayerParams, head: usize) -> Vec<(f64, f64)> {
    let c = x_q.numel();
    let points = params.w_offset.len() / params_heads(params);
    (0..points)
        .map(|n| {
            let w = &params.w_offset[head * points + n];
            let mut dy = 0.0;
            let mut dx = 0.0;
            for i in 0..c {
                dy += x_q.data()[i] * w.at2(i, 0);
                dx += x_q.data()[i] * w.at2(i, 1);
            }
            (dy, dx)
        })
        .collect()
}

fn params_heads(params: &crate::EaLayerParams) -> usize {
    // w_query is C×C and w_key entries are C×head_dim.
    let c = params.w_query.shape()[0];
    let hd = params.w_key[0].shape()[1];
    c / hd
}

/// One multi-head extensible-attention layer over a `C×H×W` map.
///
/// Per query `q` and head `m`: sample `N` points at `q + base + Δp` from the
/// layer input, score them against the query projection (scaled by
/// `1/√head_dim`), softmax over the points, aggregate their value
/// projections, concatenate heads, project, then residual + layer norm.
pub fn ea_forward<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    vars: &EaLayerVars<'t>,
    cfg: &EaConfig,
) -> Result<(Var<'t>, AttentionTrace)> {
    cfg.validate()?;
    let shape = x.shape();
    let [c, h, w] = shape.as_slice() else {
        return Err(AttentionError::Config(format!("input must be C×H×W, got {shape:?}")));
    };
    let (c, h, w) = (*c, *h, *w);
    if c != cfg.channels {
        return Err(AttentionError::Config(format!(
            "input has {c} channels, config says {}",
            cfg.channels
        )));
    }
    let hw = h * w;
    let heads = cfg.heads;
    let points = cfg.points;
    let hd = cfg.head_dim();
    if cfg.offset_source == OffsetSource::FullGrid && points != hw {
        return Err(AttentionError::Config(format!(
            "full-grid offsets need points == H·W ({hw}), got {points}"
        )));
    }

    let x_rows = x.channels_to_rows()?; // HW×C
    let q_all = x_rows.matmul(vars.w_query)?; // HW×C

    // Sampling locations per (head, point), each HW×2.
    let mut locs: Vec<Var<'t>> = Vec::with_capacity(heads * points);
    for m in 0..heads {
        for n in 0..points {
            let idx = m * points + n;
            match cfg.offset_source {
                OffsetSource::Learned => {
                    let (by, bx) =
                        (vars.base_offsets.at2(idx, 0), vars.base_offsets.at2(idx, 1));
                    let base = Tensor::from_fn(&[hw, 2], |i| {
                        let q = i / 2;
                        if i % 2 == 0 {
                            (q / w) as f64 + by
                        } else {
                            (q % w) as f64 + bx
                        }
                    });
                    let delta = x_rows.matmul(vars.w_offset[idx])?; // HW×2
                    locs.push(delta.add(tape.constant(base))?);
                }
                OffsetSource::FullGrid => {
                    let (gy, gx) = ((n / w) as f64, (n % w) as f64);
                    let grid = Tensor::from_fn(&[hw, 2], |i| if i % 2 == 0 { gy } else { gx });
                    locs.push(tape.constant(grid));
                }
            }
        }
    }
    let all_locs = concat_rows(&locs)?; // (M·N·HW)×2

    let sampled = match cfg.projection_source {
        ProjectionSource::Sampled => {
            let mode = match cfg.sampling {
                SamplingKind::Bilinear => SampleMode::Bilinear,
                SamplingKind::Nearest => SampleMode::Nearest,
            };
            Some(x.sample_gather(all_locs, mode)?) // (M·N·HW)×C
        }
        ProjectionSource::Query => None,
    };

    let scale = 1.0 / (hd as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    let mut head_weights = Vec::with_capacity(heads);
    for m in 0..heads {
        let q_m = q_all.slice_cols(m * hd, hd)?; // HW×hd
        let mut logit_cols = Vec::with_capacity(points);
        let mut values = Vec::with_capacity(points);
        for n in 0..points {
            let idx = m * points + n;
            let feats = match sampled {
                Some(s) => s.slice_rows(idx * hw, hw)?, // HW×C
                None => x_rows,
            };
            let k = feats.matmul(vars.w_key[idx])?; // HW×hd
            logit_cols.push(q_m.rows_dot(k)?.scale(scale)?); // HW×1
            values.push(feats.matmul(vars.w_value[idx])?); // HW×hd
        }
        let logits = concat_cols(&logit_cols)?; // HW×N
        let weights = logits.softmax_rows()?; // HW×N
        let mut head = values[0].scale_rows(weights.slice_cols(0, 1)?)?;
        for (n, v) in values.iter().enumerate().skip(1) {
            head = head.add(v.scale_rows(weights.slice_cols(n, 1)?)?)?;
        }
        head_outputs.push(head);
        head_weights.push(weights);
    }

    let merged = concat_cols(&head_outputs)?; // HW×C
    let projected = merged.matmul(vars.w_out)?;
    let residual = x_rows.add(projected)?;
    let out_rows = if cfg.layer_norm {
        residual.layer_norm_rows(vars.ln_scale, vars.ln_shift, LN_EPS)?
    } else {
        residual
    };
    let out = out_rows.rows_to_channels(h, w)?;

    // Assemble the trace from recorded values.
    let mut coords = vec![0.0; hw * heads * points * 2];
    let mut weights_flat = vec![0.0; hw * heads * points];
    let loc_vals: Vec<Tensor> = locs.iter().map(|l| l.value()).collect();
    let weight_vals: Vec<Tensor> = head_weights.iter().map(|wv| wv.value()).collect();
    for q in 0..hw {
        for m in 0..heads {
            for n in 0..points {
                let flat = (q * heads + m) * points + n;
                let lv = &loc_vals[m * points + n];
                coords[flat * 2] = lv.at2(q, 0);
                coords[flat * 2 + 1] = lv.at2(q, 1);
                weights_flat[flat] = weight_vals[m].at2(q, n);
            }
        }
    }
    let trace =
        AttentionTrace { height: h, width: w, heads, points, coords, weights: weights_flat };
    Ok((out, trace))
}

/// `L` stacked layers: the output of each layer is the input of the next.
/// Returns the final map and one trace per layer.
pub fn stack_forward<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    layers: &[EaLayerVars<'t>],
    cfg: &EaConfig,
) -> Result<(Var<'t>, Vec<AttentionTrace>)> {
    if layers.len() != cfg.layers {
        return Err(AttentionError::Config(format!(
            "{} layer params for {} configured layers",
            layers.len(),
            cfg.layers
        )));
    }
    let mut current = x;
    let mut traces = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let (next, trace) = ea_forward(tape, current, layer, cfg).map_err(|e| match e {
            AttentionError::Numeric(src @ numeric_core::NumericError::NonFinite { .. }) => {
                AttentionError::NonFiniteLayer { layer: i, source: src }
            }
            other => other,
        })?;
        current = next;
        traces.push(trace);
    }
    Ok((current, traces))
}
