use numeric_core::Tensor;

use crate::fusion::{FusionError, Result};

/// Fixed 2D sinusoidal positional encoding: the first `C/2` channels encode
/// the row index, the rest the column index, as alternating sin/cos pairs
/// over geometric frequencies. `C` must be divisible by 4.
pub fn positional_encoding_2d(h: usize, w: usize, c: usize) -> Result<Tensor> {
    if c % 4 != 0 {
        return Err(FusionError::Config(format!(
            "positional encoding needs channels divisible by 4, got {c}"
        )));
    }
    let half = c / 2;
    let pairs = half / 2;
    let mut out = Tensor::zeros(&[c, h, w]);
    for k in 0..pairs {
        let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64);
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let hw = h * w;
                let (ry, rx) = (y as f64 * freq, x as f64 * freq);
                out.data_mut()[(2 * k) * hw + idx] = ry.sin();
                out.data_mut()[(2 * k + 1) * hw + idx] = ry.cos();
                out.data_mut()[(half + 2 * k) * hw + idx] = rx.sin();
                out.data_mut()[(half + 2 * k + 1) * hw + idx] = rx.cos();
            }
        }
    }
    Ok(out)
}
