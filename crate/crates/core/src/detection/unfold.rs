//! UnfoldSoftmax detection loss.
//!
//! Every valid `k x k` patch of the logit map is treated as a (k*k + 1)-way
//! classification: one class per pixel plus a "no keypoint" class whose logit
//! is fixed at 0. The per-patch loss is
//! `-(sum_i x_i y_i - log(sum_i exp(x_i) + 1))` and the total is the mean
//! over patches. Patches are valid-only (no padding).

use super::{BinaryHeatmap, Raster};
use crate::error::{Error, Result};
use crate::linalg::pairwise_mean;

/// Kernel size used for training.
pub const DEFAULT_KERNEL: usize = 5;
/// Logits above this make `exp` unsafe in the literal two-convolution form.
pub const EXP_OVERFLOW_LIMIT: f64 = 80.0;

fn check_inputs(logits: &Raster, target: &BinaryHeatmap, k: usize) -> Result<(usize, usize)> {
    if logits.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            left: logits.shape(),
            right: target.shape(),
        });
    }
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::EvenKernel(k));
    }
    let (h, w) = logits.shape();
    if k > h || k > w {
        return Err(Error::KernelTooLarge {
            kernel: k,
            height: h,
            width: w,
        });
    }
    Ok((h - k + 1, w - k + 1))
}

/// `log(sum_i exp(x_i) + 1)` over one patch, shifted for stability.
fn patch_log_partition(logits: &Raster, py: usize, px: usize, k: usize) -> f64 {
    let mut m = 0.0_f64;
    for y in py..py + k {
        for x in px..px + k {
            m = m.max(logits.get(y, x));
        }
    }
    let mut acc = (-m).exp();
    for y in py..py + k {
        for x in px..px + k {
            acc += (logits.get(y, x) - m).exp();
        }
    }
    m + acc.ln()
}

/// Reference implementation: loops over every patch explicitly.
pub fn unfold_softmax_naive(logits: &Raster, target: &BinaryHeatmap, k: usize) -> Result<f64> {
    let (ph, pw) = check_inputs(logits, target, k)?;
    let mut per_patch = Vec::with_capacity(ph * pw);
    for py in 0..ph {
        for px in 0..pw {
            let mut selected = 0.0;
            for y in py..py + k {
                for x in px..px + k {
                    if target.get(y, x) == 1 {
                        selected += logits.get(y, x);
                    }
                }
            }
            per_patch.push(-(selected - patch_log_partition(logits, py, px, k)));
        }
    }
    Ok(pairwise_mean(&per_patch))
}

/// Valid correlation with a `k x k` all-ones kernel, done as two 1-D box
/// sums.
fn box_correlate(values: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &values[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = src[x..x + k].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (y..y + k).map(|yy| rows[yy * ow + x]).sum();
        }
    }
    out
}

/// Two-convolution form: `l1 = conv(X * Y, 1)`, `l2 = conv(exp X, 1) + 1`,
/// loss `= -mean(l1 - log l2)`.
///
/// `exp` is taken literally without shifting, so logits above
/// [`EXP_OVERFLOW_LIMIT`] are rejected with [`Error::NumericOverflow`].
pub fn unfold_softmax_fast(logits: &Raster, target: &BinaryHeatmap, k: usize) -> Result<f64> {
    check_inputs(logits, target, k)?;
    let (h, w) = logits.shape();
    if let Some((index, &value)) = logits
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| v > EXP_OVERFLOW_LIMIT)
    {
        return Err(Error::NumericOverflow { index, value });
    }

    let masked: Vec<f64> = logits
        .values()
        .iter()
        .zip(target.values())
        .map(|(&x, &y)| x * f64::from(y))
        .collect();
    let exps: Vec<f64> = logits.values().iter().map(|x| x.exp()).collect();
    let l1 = box_correlate(&masked, h, w, k);
    let l2 = box_correlate(&exps, h, w, k);

    let terms: Vec<f64> = l1.iter().zip(&l2).map(|(a, b)| (b + 1.0).ln() - a).collect();
    Ok(pairwise_mean(&terms))
}

/// Analytic gradient of the loss with respect to the logits:
/// `-(1/P) * sum_{p contains j} (y_j - exp(x_j) / l2_p)`.
pub fn unfold_softmax_grad(logits: &Raster, target: &BinaryHeatmap, k: usize) -> Result<Raster> {
    let (ph, pw) = check_inputs(logits, target, k)?;
    let (h, w) = logits.shape();
    let n_patches = (ph * pw) as f64;

    let mut log_l2 = vec![0.0; ph * pw];
    for py in 0..ph {
        for px in 0..pw {
            log_l2[py * pw + px] = patch_log_partition(logits, py, px, k);
        }
    }

    let mut grad = vec![0.0; h * w];
    for y in 0..h {
        let py_lo = y.saturating_sub(k - 1);
        let py_hi = y.min(ph - 1);
        for x in 0..w {
            let px_lo = x.saturating_sub(k - 1);
            let px_hi = x.min(pw - 1);
            let xj = logits.get(y, x);
            let yj = f64::from(target.get(y, x));
            let mut g = 0.0;
            for py in py_lo..=py_hi {
                for px in px_lo..=px_hi {
                    g += yj - (xj - log_l2[py * pw + px]).exp();
                }
            }
            grad[y * w + x] = -g / n_patches;
        }
    }
    Raster::new(h, w, grad)
}
