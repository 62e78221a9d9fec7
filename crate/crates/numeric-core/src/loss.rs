//! Fused, numerically stable loss reductions. Targets and per-element weights
//! enter as constants; each op reduces to a `[1]` scalar (weighted sum — the
//! caller folds any normalization into the weights).

use crate::error::{NumericError, Result};
use crate::ops::sigmoid_scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    /// Weighted binary cross-entropy on logits:
    /// `Σ w_i · (max(z_i, 0) − z_i·y_i + ln(1 + e^{−|z_i|}))`.
    pub fn bce_with_logits(self, targets: &Tensor, weights: &Tensor) -> Result<Var<'t>> {
        let tape = self.tape;
        let z = self.value();
        if z.shape() != targets.shape() || z.shape() != weights.shape() {
            return Err(NumericError::shape(
                "bce_with_logits",
                format!(
                    "logits {:?} targets {:?} weights {:?}",
                    z.shape(),
                    targets.shape(),
                    weights.shape()
                ),
            ));
        }
        let mut total = 0.0;
        for ((&zv, &yv), &wv) in z.data().iter().zip(targets.data()).zip(weights.data()) {
            total += wv * (zv.max(0.0) - zv * yv + (-zv.abs()).exp().ln_1p());
        }
        let req = self.requires_grad();
        let ia = self.id;
        let y = targets.clone();
        let w = weights.clone();
        tape.push_result(
            "bce_with_logits",
            Tensor::scalar(total),
            req,
            Some(Box::new(move |g, buf| {
                let k = g.item();
                let data = z
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(w.data())
                    .map(|((&zv, &yv), &wv)| k * wv * (sigmoid_scalar(zv) - yv))
                    .collect();
                buf.accumulate(ia, Tensor::new(z.shape().to_vec(), data).unwrap());
            })),
        )
    }

    /// Weighted softmax cross-entropy over rows of `[m, n]` logits:
    /// `Σ_i w_i · (logsumexp(z_i) − z_i[t_i])`.
    pub fn softmax_cross_entropy(self, targets: &[usize], weights: &Tensor) -> Result<Var<'t>> {
        let tape = self.tape;
        let z = self.value();
        let (m, n) = z.dims2("softmax_cross_entropy")?;
        if targets.len() != m || weights.shape() != [m] {
            return Err(NumericError::shape(
                "softmax_cross_entropy",
                format!("{m} rows vs {} targets / {:?} weights", targets.len(), weights.shape()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(NumericError::arg(
                "softmax_cross_entropy",
                format!("target class {t} out of range {n}"),
            ));
        }
        let mut total = 0.0;
        let mut probs = vec![0.0; m * n];
        for i in 0..m {
            let row = &z.data()[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &v) in probs[i * n..(i + 1) * n].iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            for p in probs[i * n..(i + 1) * n].iter_mut() {
                *p /= sum;
            }
            total += weights.data()[i] * (sum.ln() + max - row[targets[i]]);
        }
        let req = self.requires_grad();
        let ia = self.id;
        let t: Vec<usize> = targets.to_vec();
        let w = weights.clone();
        tape.push_result(
            "softmax_cross_entropy",
            Tensor::scalar(total),
            req,
            Some(Box::new(move |g, buf| {
                let k = g.item();
                let mut dz = vec![0.0; m * n];
                for i in 0..m {
                    let wi = k * w.data()[i];
                    for j in 0..n {
                        let ind = if j == t[i] { 1.0 } else { 0.0 };
                        dz[i * n + j] = wi * (probs[i * n + j] - ind);
                    }
                }
                buf.accumulate(ia, Tensor::new(vec![m, n], dz).unwrap());
            })),
        )
    }

    /// Weighted smooth-L1 (Huber, delta = 1) against constant targets:
    /// per element `0.5 d²` for `|d| < 1`, else `|d| − 0.5`, with `d = x − t`.
    pub fn smooth_l1(self, targets: &Tensor, weights: &Tensor) -> Result<Var<'t>> {
        let tape = self.tape;
        let x = self.value();
        if x.shape() != targets.shape() || x.shape() != weights.shape() {
            return Err(NumericError::shape(
                "smooth_l1",
                format!(
                    "pred {:?} targets {:?} weights {:?}",
                    x.shape(),
                    targets.shape(),
                    weights.shape()
                ),
            ));
        }
        let mut total = 0.0;
        for ((&xv, &tv), &wv) in x.data().iter().zip(targets.data()).zip(weights.data()) {
            let d = xv - tv;
            total += wv * if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
        }
        let req = self.requires_grad();
        let ia = self.id;
        let t = targets.clone();
        let w = weights.clone();
        tape.push_result(
            "smooth_l1",
            Tensor::scalar(total),
            req,
            Some(Box::new(move |g, buf| {
                let k = g.item();
                let data = x
                    .data()
                    .iter()
                    .zip(t.data())
                    .zip(w.data())
                    .map(|((&xv, &tv), &wv)| k * wv * (xv - tv).clamp(-1.0, 1.0))
                    .collect();
                buf.accumulate(ia, Tensor::new(x.shape().to_vec(), data).unwrap());
            })),
        )
    }
}
