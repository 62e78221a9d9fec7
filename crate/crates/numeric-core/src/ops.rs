//! Elementwise, matrix and row-structured ops on tape variables.

use crate::error::{NumericError, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Row-major matrix product `out[m×n] = a[m×k] · b[k×n]`.
pub(crate) fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m×n] = a[k×m]ᵀ · b[k×n]`.
fn mm_at_b(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m×k] = a[m×n] · b[k×n]ᵀ`.
fn mm_a_bt(a: &[f64], m: usize, n: usize, b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = tape.with_values2(self.id, other.id, |a, b| -> Result<Tensor> {
            same_shape("add", a, b)?;
            a.add_tensor(b)
        })?;
        let req = self.requires_grad() || other.requires_grad();
        let (ia, ib) = (self.id, other.id);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        tape.push_result(
            "add",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if ra {
                    buf.accumulate(ia, g.clone());
                }
                if rb {
                    buf.accumulate(ib, g.clone());
                }
            })),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = tape.with_values2(self.id, other.id, |a, b| -> Result<Tensor> {
            same_shape("sub", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Tensor::new(a.shape().to_vec(), data)
        })?;
        let req = self.requires_grad() || other.requires_grad();
        let (ia, ib) = (self.id, other.id);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        tape.push_result(
            "sub",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if ra {
                    buf.accumulate(ia, g.clone());
                }
                if rb {
                    buf.accumulate(ib, g.scale_tensor(-1.0));
                }
            })),
        )
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, a_val, b_val) =
            tape.with_values2(self.id, other.id, |a, b| -> Result<(Tensor, Tensor, Tensor)> {
                same_shape("mul", a, b)?;
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Ok((Tensor::new(a.shape().to_vec(), data)?, a.clone(), b.clone()))
            })?;
        let req = self.requires_grad() || other.requires_grad();
        let (ia, ib) = (self.id, other.id);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        tape.push_result(
            "mul",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if ra {
                    let data = g.data().iter().zip(b_val.data()).map(|(gv, bv)| gv * bv).collect();
                    buf.accumulate(ia, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
                if rb {
                    let data = g.data().iter().zip(a_val.data()).map(|(gv, av)| gv * av).collect();
                    buf.accumulate(ib, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
            })),
        )
    }

    pub fn scale(self, k: f64) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = tape.with_value(self.id, |a| a.scale_tensor(k));
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "scale",
            value,
            req,
            Some(Box::new(move |g, buf| buf.accumulate(ia, g.scale_tensor(k)))),
        )
    }

    /// Forward identity; backward multiplies the upstream gradient by `c`.
    /// This is the gradient-decoupling primitive.
    pub fn scale_grad(self, c: f64) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = tape.with_value(self.id, |a| a.clone());
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "scale_grad",
            value,
            req,
            Some(Box::new(move |g, buf| buf.accumulate(ia, g.scale_tensor(c)))),
        )
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, a_val, b_val, m, k, n) = tape.with_values2(
            self.id,
            other.id,
            |a, b| -> Result<(Tensor, Tensor, Tensor, usize, usize, usize)> {
                let (m, k) = a.dims2("matmul")?;
                let (k2, n) = b.dims2("matmul")?;
                if k != k2 {
                    return Err(NumericError::shape(
                        "matmul",
                        format!("inner dims {k} vs {k2} ({:?} · {:?})", a.shape(), b.shape()),
                    ));
                }
                let out = Tensor::new(vec![m, n], mm(a.data(), m, k, b.data(), n))?;
                Ok((out, a.clone(), b.clone(), m, k, n))
            },
        )?;
        let req = self.requires_grad() || other.requires_grad();
        let (ia, ib) = (self.id, other.id);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        tape.push_result(
            "matmul",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if ra {
                    // dA = dC · Bᵀ
                    let da = mm_a_bt(g.data(), m, n, b_val.data(), k);
                    buf.accumulate(ia, Tensor::new(vec![m, k], da).unwrap());
                }
                if rb {
                    // dB = Aᵀ · dC
                    let db = mm_at_b(a_val.data(), m, k, g.data(), n);
                    buf.accumulate(ib, Tensor::new(vec![k, n], db).unwrap());
                }
            })),
        )
    }

    /// Numerically stabilized softmax over each row of a rank-2 tensor.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, m, n) = tape.with_value(self.id, |x| -> Result<(Tensor, usize, usize)> {
            let (m, n) = x.dims2("softmax_rows")?;
            if n == 0 {
                return Err(NumericError::arg("softmax_rows", "empty rows"));
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &x.data()[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let orow = &mut out[i * n..(i + 1) * n];
                let mut sum = 0.0;
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o = (v - max).exp();
                    sum += *o;
                }
                for o in orow.iter_mut() {
                    *o /= sum;
                }
            }
            Ok((Tensor::new(vec![m, n], out)?, m, n))
        })?;
        let req = self.requires_grad();
        let ia = self.id;
        let y = value.clone();
        tape.push_result(
            "softmax_rows",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for ((d, &yv), &gv) in dx[i * n..(i + 1) * n].iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                buf.accumulate(ia, Tensor::new(vec![m, n], dx).unwrap());
            })),
        )
    }

    /// Layer norm over each row: `y = scale · (x − μ)/√(σ² + eps) + shift`.
    pub fn layer_norm_rows(self, scale: Var<'t>, shift: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let tape = self.tape;
        let x_val = self.value();
        let (m, n) = x_val.dims2("layer_norm_rows")?;
        let s_val = scale.value();
        let b_val = shift.value();
        if s_val.shape() != [n] || b_val.shape() != [n] {
            return Err(NumericError::shape(
                "layer_norm_rows",
                format!("scale {:?} / shift {:?} vs row width {n}", s_val.shape(), b_val.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &x_val.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..n {
                let h = (row[j] - mean) * istd;
                xhat[i * n + j] = h;
                out[i * n + j] = s_val.data()[j] * h + b_val.data()[j];
            }
        }
        let req = self.requires_grad() || scale.requires_grad() || shift.requires_grad();
        let (ix, is, ib) = (self.id, scale.id, shift.id);
        let (rx, rs, rb) = (self.requires_grad(), scale.requires_grad(), shift.requires_grad());
        let s_saved = s_val.clone();
        tape.push_result(
            "layer_norm_rows",
            Tensor::new(vec![m, n], out)?,
            req,
            Some(Box::new(move |g, buf| {
                if rs {
                    let mut ds = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            ds[j] += g.data()[i * n + j] * xhat[i * n + j];
                        }
                    }
                    buf.accumulate(is, Tensor::new(vec![n], ds).unwrap());
                }
                if rb {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g.data()[i * n + j];
                        }
                    }
                    buf.accumulate(ib, Tensor::new(vec![n], db).unwrap());
                }
                if rx {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let gr = &g.data()[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * s_saved.data()[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * s_saved.data()[j];
                            dx[i * n + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    buf.accumulate(ix, Tensor::new(vec![m, n], dx).unwrap());
                }
            })),
        )
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, shape) = tape.with_value(self.id, |x| {
            (Tensor::scalar(x.data().iter().sum()), x.shape().to_vec())
        });
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "sum",
            value,
            req,
            Some(Box::new(move |g, buf| {
                buf.accumulate(ia, Tensor::full(&shape, g.item()));
            })),
        )
    }

    /// Fixed projection to a scalar: `Σ x_i · w_i` with constant weights.
    pub fn dot_const(self, weights: &Tensor) -> Result<Var<'t>> {
        let tape = self.tape;
        let w = weights.clone();
        let value = tape.with_value(self.id, |x| -> Result<Tensor> {
            if x.numel() != w.numel() {
                return Err(NumericError::shape(
                    "dot_const",
                    format!("{} elements vs {} weights", x.numel(), w.numel()),
                ));
            }
            Ok(Tensor::scalar(x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()))
        })?;
        let req = self.requires_grad();
        let ia = self.id;
        let shape = self.shape();
        tape.push_result(
            "dot_const",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let k = g.item();
                let data = w.data().iter().map(|wv| wv * k).collect();
                buf.accumulate(ia, Tensor::new(shape.clone(), data).unwrap());
            })),
        )
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let x_val = self.value();
        let data: Vec<f64> = x_val.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(x_val.shape().to_vec(), data)?;
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "relu",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let data = g
                    .data()
                    .iter()
                    .zip(x_val.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                buf.accumulate(ia, Tensor::new(g.shape().to_vec(), data).unwrap());
            })),
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        let tape = self.tape;
        let value = tape.with_value(self.id, |x| {
            let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        });
        let req = self.requires_grad();
        let ia = self.id;
        let y = value.clone();
        tape.push_result(
            "sigmoid",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                buf.accumulate(ia, Tensor::new(g.shape().to_vec(), data).unwrap());
            })),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let tape = self.tape;
        let old_shape = self.shape();
        let value = tape.with_value(self.id, |x| x.reshaped(shape))?;
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "reshape",
            value,
            req,
            Some(Box::new(move |g, buf| {
                buf.accumulate(ia, g.reshaped(&old_shape).unwrap());
            })),
        )
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, m, n) = tape.with_value(self.id, |x| -> Result<(Tensor, usize, usize)> {
            let (m, n) = x.dims2("slice_cols")?;
            if start + len > n {
                return Err(NumericError::arg(
                    "slice_cols",
                    format!("range {start}..{} exceeds {n} cols", start + len),
                ));
            }
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&x.data()[i * n + start..i * n + start + len]);
            }
            Ok((Tensor::new(vec![m, len], out)?, m, n))
        })?;
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "slice_cols",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                buf.accumulate(ia, Tensor::new(vec![m, n], dx).unwrap());
            })),
        )
    }

    /// Rows `[start, start+len)` of a rank-2 tensor.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, m, n) = tape.with_value(self.id, |x| -> Result<(Tensor, usize, usize)> {
            let (m, n) = x.dims2("slice_rows")?;
            if start + len > m {
                return Err(NumericError::arg(
                    "slice_rows",
                    format!("range {start}..{} exceeds {m} rows", start + len),
                ));
            }
            let out = x.data()[start * n..(start + len) * n].to_vec();
            Ok((Tensor::new(vec![len, n], out)?, m, n))
        })?;
        let req = self.requires_grad();
        let ia = self.id;
        tape.push_result(
            "slice_rows",
            value,
            req,
            Some(Box::new(move |g, buf| {
                let mut dx = vec![0.0; m * n];
                dx[start * n..(start + len) * n].copy_from_slice(g.data());
                buf.accumulate(ia, Tensor::new(vec![m, n], dx).unwrap());
            })),
        )
    }

    /// Row-wise dot product of two same-shape rank-2 tensors, shape `[m, 1]`.
    pub fn rows_dot(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, a_val, b_val, m, n) = tape.with_values2(
            self.id,
            other.id,
            |a, b| -> Result<(Tensor, Tensor, Tensor, usize, usize)> {
                same_shape("rows_dot", a, b)?;
                let (m, n) = a.dims2("rows_dot")?;
                let mut out = vec![0.0; m];
                for i in 0..m {
                    out[i] = a.data()[i * n..(i + 1) * n]
                        .iter()
                        .zip(&b.data()[i * n..(i + 1) * n])
                        .map(|(x, y)| x * y)
                        .sum();
                }
                Ok((Tensor::new(vec![m, 1], out)?, a.clone(), b.clone(), m, n))
            },
        )?;
        let req = self.requires_grad() || other.requires_grad();
        let (ia, ib) = (self.id, other.id);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        tape.push_result(
            "rows_dot",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if ra {
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        for j in 0..n {
                            da[i * n + j] = gi * b_val.data()[i * n + j];
                        }
                    }
                    buf.accumulate(ia, Tensor::new(vec![m, n], da).unwrap());
                }
                if rb {
                    let mut db = vec![0.0; m * n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        for j in 0..n {
                            db[i * n + j] = gi * a_val.data()[i * n + j];
                        }
                    }
                    buf.accumulate(ib, Tensor::new(vec![m, n], db).unwrap());
                }
            })),
        )
    }

    /// Multiply row `i` of `self` by scalar `s[i]`; `s` has shape `[m, 1]`.
    pub fn scale_rows(self, s: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, x_val, s_val, m, n) = tape.with_values2(
            self.id,
            s.id,
            |x, s| -> Result<(Tensor, Tensor, Tensor, usize, usize)> {
                let (m, n) = x.dims2("scale_rows")?;
                if s.shape() != [m, 1] {
                    return Err(NumericError::shape(
                        "scale_rows",
                        format!("scales {:?} vs [{m}, 1]", s.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let k = s.data()[i];
                    for j in 0..n {
                        out[i * n + j] = x.data()[i * n + j] * k;
                    }
                }
                Ok((Tensor::new(vec![m, n], out)?, x.clone(), s.clone(), m, n))
            },
        )?;
        let req = self.requires_grad() || s.requires_grad();
        let (ix, is) = (self.id, s.id);
        let (rx, rs) = (self.requires_grad(), s.requires_grad());
        tape.push_result(
            "scale_rows",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if rx {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let k = s_val.data()[i];
                        for j in 0..n {
                            dx[i * n + j] = g.data()[i * n + j] * k;
                        }
                    }
                    buf.accumulate(ix, Tensor::new(vec![m, n], dx).unwrap());
                }
                if rs {
                    let mut ds = vec![0.0; m];
                    for i in 0..m {
                        ds[i] = g.data()[i * n..(i + 1) * n]
                            .iter()
                            .zip(&x_val.data()[i * n..(i + 1) * n])
                            .map(|(gv, xv)| gv * xv)
                            .sum();
                    }
                    buf.accumulate(is, Tensor::new(vec![m, 1], ds).unwrap());
                }
            })),
        )
    }

    /// Add a `[n]` bias vector to every row of a `[m, n]` tensor.
    pub fn add_bias_rows(self, bias: Var<'t>) -> Result<Var<'t>> {
        let tape = self.tape;
        let (value, m, n) = tape.with_values2(
            self.id,
            bias.id,
            |x, b| -> Result<(Tensor, usize, usize)> {
                let (m, n) = x.dims2("add_bias_rows")?;
                if b.shape() != [n] {
                    return Err(NumericError::shape(
                        "add_bias_rows",
                        format!("bias {:?} vs row width {n}", b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = x.data()[i * n + j] + b.data()[j];
                    }
                }
                Ok((Tensor::new(vec![m, n], out)?, m, n))
            },
        )?;
        let req = self.requires_grad() || bias.requires_grad();
        let (ix, ib) = (self.id, bias.id);
        let (rx, rb) = (self.requires_grad(), bias.requires_grad());
        tape.push_result(
            "add_bias_rows",
            value,
            req,
            Some(Box::new(move |g, buf| {
                if rx {
                    buf.accumulate(ix, g.clone());
                }
                if rb {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g.data()[i * n + j];
                        }
                    }
                    buf.accumulate(ib, Tensor::new(vec![n], db).unwrap());
                }
            })),
        )
    }
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Concatenate rank-2 tensors along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    if parts.is_empty() {
        return Err(NumericError::arg("concat_cols", "no inputs"));
    }
    let tape = parts[0].tape;
    let vals: Vec<Tensor> = parts.iter().map(|v| v.value()).collect();
    let (m, _) = vals[0].dims2("concat_cols")?;
    let mut widths = Vec::with_capacity(vals.len());
    for v in &vals {
        let (mi, ni) = v.dims2("concat_cols")?;
        if mi != m {
            return Err(NumericError::shape("concat_cols", format!("{mi} rows vs {m}")));
        }
        widths.push(ni);
    }
    let total: usize = widths.iter().sum();
    let mut out = vec![0.0; m * total];
    for i in 0..m {
        let mut off = 0;
        for (v, &w) in vals.iter().zip(&widths) {
            out[i * total + off..i * total + off + w]
                .copy_from_slice(&v.data()[i * w..(i + 1) * w]);
            off += w;
        }
    }
    let req = parts.iter().any(|p| p.requires_grad());
    let meta: Vec<(usize, bool)> = parts.iter().map(|p| (p.id, p.requires_grad())).collect();
    tape.push_result(
        "concat_cols",
        Tensor::new(vec![m, total], out)?,
        req,
        Some(Box::new(move |g, buf| {
            let mut off = 0;
            for (&(id, r), &w) in meta.iter().zip(&widths) {
                if r {
                    let mut part = vec![0.0; m * w];
                    for i in 0..m {
                        part[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    buf.accumulate(id, Tensor::new(vec![m, w], part).unwrap());
                }
                off += w;
            }
        })),
    )
}

/// Concatenate rank-2 tensors along rows.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    if parts.is_empty() {
        return Err(NumericError::arg("concat_rows", "no inputs"));
    }
    let tape = parts[0].tape;
    let vals: Vec<Tensor> = parts.iter().map(|v| v.value()).collect();
    let (_, n) = vals[0].dims2("concat_rows")?;
    let mut heights = Vec::with_capacity(vals.len());
    for v in &vals {
        let (mi, ni) = v.dims2("concat_rows")?;
        if ni != n {
            return Err(NumericError::shape("concat_rows", format!("{ni} cols vs {n}")));
        }
        heights.push(mi);
    }
    let total: usize = heights.iter().sum();
    let mut out = Vec::with_capacity(total * n);
    for v in &vals {
        out.extend_from_slice(v.data());
    }
    let req = parts.iter().any(|p| p.requires_grad());
    let meta: Vec<(usize, bool)> = parts.iter().map(|p| (p.id, p.requires_grad())).collect();
    tape.push_result(
        "concat_rows",
        Tensor::new(vec![total, n], out)?,
        req,
        Some(Box::new(move |g, buf| {
            let mut off = 0;
            for (&(id, r), &h) in meta.iter().zip(&heights) {
                if r {
                    let part = g.data()[off * n..(off + h) * n].to_vec();
                    buf.accumulate(id, Tensor::new(vec![h, n], part).unwrap());
                }
                off += h;
            }
        })),
    )
}
