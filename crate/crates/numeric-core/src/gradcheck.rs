//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumericError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Options for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step `h`.
    pub step: f64,
    /// Pass threshold on the worst relative error.
    pub tolerance: f64,
    /// Check at most this many coordinates per input (chosen deterministically
    /// from `seed`, always including the coordinate with the largest analytic
    /// gradient). `None` checks every coordinate.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-5, max_coords_per_input: None, seed: 0 }
    }
}

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
    /// `(input index, coordinate, analytic, numeric)` of the worst mismatch.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} over {} coords (tol {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.coords_checked,
            self.tolerance
        )?;
        if let Some((input, coord, a, n)) = self.worst {
            write!(f, "; worst input {input} coord {coord}: analytic {a:.9e} vs numeric {n:.9e}")?;
        }
        Ok(())
    }
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 {
        return Err(NumericError::arg(
            "grad_check",
            format!("function must be scalar-valued, got shape {:?}", v.shape()),
        ));
    }
    let y = v.item();
    if !y.is_finite() {
        return Err(NumericError::NonFinite { op: "grad_check", context: "objective value".into() });
    }
    Ok(y)
}

/// Compare reverse-mode gradients of a scalar-valued function against central
/// finite differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
///
/// The error metric is `|a − n| / max(|a|, |n|, 1)`, i.e. relative for large
/// gradients and absolute near zero.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    if out.value().numel() != 1 {
        return Err(NumericError::arg(
            "grad_check",
            format!("function must be scalar-valued, got shape {:?}", out.value().shape()),
        ));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut coords_checked = 0;

    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(limit) if n > limit => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                let mut chosen: Vec<usize> = all.into_iter().take(limit).collect();
                // Keep the strongest analytic coordinate in the sample.
                let strongest = analytic[idx]
                    .data()
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if !chosen.contains(&strongest) {
                    chosen[0] = strongest;
                }
                chosen.sort_unstable();
                chosen
            }
            _ => (0..n).collect(),
        };
        for coord in coords {
            let original = input.data()[coord];
            perturbed[idx].data_mut()[coord] = original + cfg.step;
            let plus = eval_scalar(&f, &perturbed)?;
            perturbed[idx].data_mut()[coord] = original - cfg.step;
            let minus = eval_scalar(&f, &perturbed)?;
            perturbed[idx].data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[idx].data()[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            coords_checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((idx, coord, a, numeric));
            }
        }
    }

    Ok(GradCheckReport { max_rel_err, coords_checked, tolerance: cfg.tolerance, worst })
}
