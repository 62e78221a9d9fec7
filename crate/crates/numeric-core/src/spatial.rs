//! Spatial ops on `C×H×W` feature maps: fractional sampling, 2× upsampling,
//! channel concatenation, layout permutes and a plain strided convolution.

use crate::error::{NumericError, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// How fractional locations are read from a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Bilinear interpolation of the four integer neighbours; differentiable
    /// in both the map and the location.
    Bilinear,
    /// Snap to the nearest pixel; the location receives no gradient.
    Nearest,
}

/// Axis weights of one interpolated read at `coord` on an axis of size `n`.
/// Out-of-range coordinates clamp to the border. The two weights always sum
/// to 1 (partition of unity).
fn axis_lerp(n: usize, coord: f64) -> (usize, usize, f64, bool) {
    debug_assert!(n >= 1);
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let max = (n - 1) as f64;
    let inside = (0.0..=max).contains(&coord);
    let c = coord.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(n - 2);
    let frac = c - i0 as f64;
    (i0, i0 + 1, frac, inside)
}

/// Source rows and bilinear weights feeding output row `i_out` of a 2×
/// upsample along an axis of `n_in` elements (half-pixel centers).
pub fn upsample2x_axis_weights(n_in: usize, i_out: usize) -> ((usize, f64), (usize, f64)) {
    let src = (i_out as f64 + 0.5) / 2.0 - 0.5;
    let (i0, i1, f, _) = axis_lerp(n_in, src);
    ((i0, 1.0 - f), (i1, f))
}

impl<'t> Var<'t> {
    /// Read `K` fractional locations from a `C×H×W` map; `locs` is `[K, 2]`
    /// holding `(y, x)` per row. Returns `[K, C]`. Locations outside the map
    /// clamp to the border, where their gradient vanishes.
    pub fn sample_gather(self, locs: Var<'t>, mode: SampleMode) -> Result<Var<'t>> {
        let tape = self.tape;
        let map_val = self.value();
        let locs_val = locs.value();
        let (c, h, w) = map_val.dims3("sample_gather")?;
        let (k, two) = locs_val.dims2("sample_gather")?;
        if two != 2 {
            return Err(NumericError::shape(
                "sample_gather",
                format!("locations must be [K, 2], got {:?}", locs_val.shape()),
            ));
        }
        let mut out = vec![0.0; k * c];
        match mode {
            SampleMode::Bilinear => {
                for r in 0..k {
                    let (y0, y1, fy, _) = axis_lerp(h, locs_val.data()[r * 2]);
                    let (x0, x1, fx, _) = axis_lerp(w, locs_val.data()[r * 2 + 1]);
                    let (w00, w01) = ((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx);
                    let (w10, w11) = (fy * (1.0 - fx), fy * fx);
                    for ch in 0..c {
                        let plane = &map_val.data()[ch * h * w..(ch + 1) * h * w];
                        out[r * c + ch] = w00 * plane[y0 * w + x0]
                            + w01 * plane[y0 * w + x1]
                            + w10 * plane[y1 * w + x0]
                            + w11 * plane[y1 * w + x1];
                    }
                }
            }
            SampleMode::Nearest => {
                for r in 0..k {
                    let y = nearest_index(h, locs_val.data()[r * 2]);
                    let x = nearest_index(w, locs_val.data()[r * 2 + 1]);
                    for ch in 0..c {
                        out[r * c + ch] = map_val.at3(ch, y, x);
                    }
                }
            }
        }
        let req = self.requires_grad() || locs.requires_grad();
        let (im, il) = (self.id, locs.id);
        let (rm, rl) = (self.requires_grad(), locs.requires_grad());
        tape.push_result(
            "sample_gather",
            Tensor::new(vec![k, c], out)?,
            req,
            Some(Box::new(move |g, buf| {
                let mut dmap = vec![0.0; c * h * w];
                let mut dlocs = vec![0.0; k * 2];
                for r in 0..k {
                    match mode {
                        SampleMode::Bilinear => {
                            let (y0, y1, fy, in_y) = axis_lerp(h, locs_val.data()[r * 2]);
                            let (x0, x1, fx, in_x) = axis_lerp(w, locs_val.data()[r * 2 + 1]);
                            let (w00, w01) = ((1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx);
                            let (w10, w11) = (fy * (1.0 - fx), fy * fx);
                            let mut dy = 0.0;
                            let mut dx = 0.0;
                            for ch in 0..c {
                                let gv = g.data()[r * c + ch];
                                let base = ch * h * w;
                                if rm {
                                    dmap[base + y0 * w + x0] += gv * w00;
                                    dmap[base + y0 * w + x1] += gv * w01;
                                    dmap[base + y1 * w + x0] += gv * w10;
                                    dmap[base + y1 * w + x1] += gv * w11;
                                }
                                if rl {
                                    let plane = &map_val.data()[base..base + h * w];
                                    let (v00, v01) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                                    let (v10, v11) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                                    dy += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                                    dx += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                                }
                            }
                            if rl {
                                dlocs[r * 2] = if in_y { dy } else { 0.0 };
                                dlocs[r * 2 + 1] = if in_x { dx } else { 0.0 };
                            }
                        }
                        SampleMode::Nearest => {
                            if rm {
                                let y = nearest_index(h, locs_val.data()[r * 2]);
                                let x = nearest_index(w, locs_val.data()[r * 2 + 1]);
                                for ch in 0..c {
                                    dmap[(ch * h + y) * w + x] += g.data()[r * c + ch];
                                }
                            }
                        }
                    }
                }
                if rm {
                    buf.accumulate(im, Tensor::new(vec![c, h, w], dmap).unwrap());
                }
                if rl {
                    buf.accumulate(il, Tensor::new(vec![k, 2], dlocs).unwrap());
                }
            })),
        )
    }

    /// Bilinear read of one `(y, x)` location from a `C×H×W` map; `loc` has
    /// shape `[2]`. Returns the interpolated `[C]` vector; gradients flow to
    /// both the map and the location.
    pub fn bilinear_sample(self, loc: Var<'t>) -> Result<Var<'t>> {
        if loc.shape() != [2] {
            return Err(NumericError::shape(
                "bilinear_sample",
                format!("loc must be [2], got {:?}", loc.shape()),
            ));
        }
        let c = self.shape()[0];
        let locs = loc.reshape(&[1, 2])?;
        self.sample_gather(locs, SampleMode::Bilinear)?.reshape(&[c])
    }

    /// Bilinear 2× upsample of a `C×H×W` map with half-pixel centers.
    pub fn upsample2x(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let map_val = self.value();
        let (c, h, w) = map_val.dims3("upsample2x")?;
        let (h2, w2) = (h * 2, w * 2);
        let ywts: Vec<_> = (0..h2).map(|i| upsample2x_axis_weights(h, i)).collect();
        let xwts: Vec<_> = (0..w2).map(|j| upsample2x_axis_weights(w, j)).collect();
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            let plane = &map_val.data()[ch * h * w..(ch + 1) * h * w];
            let oplane = &mut out[ch * h2 * w2..(ch + 1) * h2 * w2];
            for (i, &((y0, wy0), (y1, wy1))) in ywts.iter().enumerate() {
                for (j, &((x0, wx0), (x1, wx1))) in xwts.iter().enumerate() {
                    oplane[i * w2 + j] = wy0 * (wx0 * plane[y0 * w + x0] + wx1 * plane[y0 * w + x1])
                        + wy1 * (wx0 * plane[y1 * w + x0] + wx1 * plane[y1 * w + x1]);
                }
            }
        }
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "upsample2x",
            Tensor::new(vec![c, h2, w2], out)?,
            req,
            Some(Box::new(move |g, buf| {
                let mut dmap = vec![0.0; c * h * w];
                for ch in 0..c {
                    let gplane = &g.data()[ch * h2 * w2..(ch + 1) * h2 * w2];
                    let dplane = &mut dmap[ch * h * w..(ch + 1) * h * w];
                    for (i, &((y0, wy0), (y1, wy1))) in ywts.iter().enumerate() {
                        for (j, &((x0, wx0), (x1, wx1))) in xwts.iter().enumerate() {
                            let gv = gplane[i * w2 + j];
                            dplane[y0 * w + x0] += gv * wy0 * wx0;
                            dplane[y0 * w + x1] += gv * wy0 * wx1;
                            dplane[y1 * w + x0] += gv * wy1 * wx0;
                            dplane[y1 * w + x1] += gv * wy1 * wx1;
                        }
                    }
                }
                buf.accumulate(ia, Tensor::new(vec![c, h, w], dmap).unwrap());
            })),
        )
    }

    /// Permute a `C×H×W` map into `[H·W, C]` rows (one row per location).
    pub fn channels_to_rows(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let map_val = self.value();
        let (c, h, w) = map_val.dims3("channels_to_rows")?;
        let hw = h * w;
        let mut out = vec![0.0; hw * c];
        for ch in 0..c {
            for p in 0..hw {
                out[p * c + ch] = map_val.data()[ch * hw + p];
            }
        }
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "channels_to_rows",
            Tensor::new(vec![hw, c], out)?,
            req,
            Some(Box::new(move |g, buf| {
                let mut dmap = vec![0.0; c * hw];
                for ch in 0..c {
                    for p in 0..hw {
                        dmap[ch * hw + p] = g.data()[p * c + ch];
                    }
                }
                buf.accumulate(ia, Tensor::new(vec![c, h, w], dmap).unwrap());
            })),
        )
    }

    /// Inverse of [`Var::channels_to_rows`]: `[H·W, C]` rows back to `C×H×W`.
    pub fn rows_to_channels(self, h: usize, w: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        let rows_val = self.value();
        let (hw, c) = rows_val.dims2("rows_to_channels")?;
        if hw != h * w {
            return Err(NumericError::shape(
                "rows_to_channels",
                format!("{hw} rows vs {h}×{w}"),
            ));
        }
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for p in 0..hw {
                out[ch * hw + p] = rows_val.data()[p * c + ch];
            }
        }
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "rows_to_channels",
            Tensor::new(vec![c, h, w], out)?,
            req,
            Some(Box::new(move |g, buf| {
                let mut drows = vec![0.0; hw * c];
                for ch in 0..c {
                    for p in 0..hw {
                        drows[p * c + ch] = g.data()[ch * hw + p];
                    }
                }
                buf.accumulate(ia, Tensor::new(vec![hw, c], drows).unwrap());
            })),
        )
    }

    /// Convolution of a `Cin×H×W` input with `Cout×Cin×kh×kw` weights plus a
    /// `[Cout]` bias, zero padding `pad` and stride `stride`.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        let x_val = self.value();
        let w_val = weight.value();
        let b_val = bias.value();
        let (cin, h, w) = x_val.dims3("conv2d")?;
        let wshape = w_val.shape().to_vec();
        if wshape.len() != 4 || wshape[1] != cin {
            return Err(NumericError::shape(
                "conv2d",
                format!("weight {:?} vs input channels {cin}", wshape),
            ));
        }
        let (cout, kh, kw) = (wshape[0], wshape[2], wshape[3]);
        if b_val.shape() != [cout] {
            return Err(NumericError::shape(
                "conv2d",
                format!("bias {:?} vs {cout} output channels", b_val.shape()),
            ));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(NumericError::arg(
                "conv2d",
                format!("kernel {kh}×{kw} stride {stride} pad {pad} on {h}×{w}"),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b_val.data()[co];
                    for ci in 0..cin {
                        let plane = &x_val.data()[ci * h * w..(ci + 1) * h * w];
                        let kbase = ((co * cin + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += w_val.data()[kbase + ky * kw + kx]
                                    * plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = acc;
                }
            }
        }
        let req = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let (ix, iw, ib) = (self.id, weight.id, bias.id);
        let (rx, rw, rb) = (self.requires_grad(), weight.requires_grad(), bias.requires_grad());
        tape.push_result(
            "conv2d",
            Tensor::new(vec![cout, ho, wo], out)?,
            req,
            Some(Box::new(move |g, buf| {
                let mut dx = vec![0.0; cin * h * w];
                let mut dw = vec![0.0; cout * cin * kh * kw];
                let mut db = vec![0.0; cout];
                for co in 0..cout {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = g.data()[(co * ho + oy) * wo + ox];
                            db[co] += gv;
                            for ci in 0..cin {
                                let kbase = ((co * cin + ci) * kh) * kw;
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let pix = (ci * h + iy as usize) * w + ix as usize;
                                        dw[kbase + ky * kw + kx] += gv * x_val.data()[pix];
                                        dx[pix] += gv * w_val.data()[kbase + ky * kw + kx];
                                    }
                                }
                            }
                        }
                    }
                }
                if rx {
                    buf.accumulate(ix, Tensor::new(vec![cin, h, w], dx).unwrap());
                }
                if rw {
                    buf.accumulate(iw, Tensor::new(vec![cout, cin, kh, kw], dw).unwrap());
                }
                if rb {
                    buf.accumulate(ib, Tensor::new(vec![cout], db).unwrap());
                }
            })),
        )
    }
}

fn nearest_index(n: usize, coord: f64) -> usize {
    (coord.round().max(0.0) as usize).min(n - 1)
}

/// Concatenate `Cᵢ×H×W` maps along the channel axis in argument order.
pub fn concat_channels<'t>(maps: &[Var<'t>]) -> Result<Var<'t>> {
    if maps.is_empty() {
        return Err(NumericError::arg("concat_channels", "no inputs"));
    }
    let tape = maps[0].tape;
    let vals: Vec<Tensor> = maps.iter().map(|m| m.value()).collect();
    let (_, h, w) = vals[0].dims3("concat_channels")?;
    let mut channels = Vec::with_capacity(vals.len());
    for v in &vals {
        let (ci, hi, wi) = v.dims3("concat_channels")?;
        if (hi, wi) != (h, w) {
            return Err(NumericError::shape(
                "concat_channels",
                format!("{hi}×{wi} vs {h}×{w}"),
            ));
        }
        channels.push(ci);
    }
    let total: usize = channels.iter().sum();
    let mut out = Vec::with_capacity(total * h * w);
    for v in &vals {
        out.extend_from_slice(v.data());
    }
    let req = maps.iter().any(|m| m.requires_grad());
    let meta: Vec<(usize, bool)> = maps.iter().map(|m| (m.id, m.requires_grad())).collect();
    tape.push_result(
        "concat_channels",
        Tensor::new(vec![total, h, w], out)?,
        req,
        Some(Box::new(move |g, buf| {
            let mut off = 0;
            for (&(id, r), &ci) in meta.iter().zip(&channels) {
                if r {
                    let part = g.data()[off * h * w..(off + ci) * h * w].to_vec();
                    buf.accumulate(id, Tensor::new(vec![ci, h, w], part).unwrap());
                }
                off += ci;
            }
        })),
    )
}
