//! Small dense linear-algebra helpers shared by the loss modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted in nonincreasing order.
///
/// Each left singular vector is sign-fixed so that its largest-magnitude
/// entry is positive; the matching right singular vector is flipped with it
/// so that `u * diag(s) * v_t` still reproduces the input.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

// nalgebra's SVD loses accuracy on some small, nearly rank-deficient inputs
// (reconstruction errors around 1e-2 on 2x2 matrices), which is fatal for
// Procrustes; the decomposition is delegated to faer.
pub(crate) fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SvdFailure);
    }
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = a.thin_svd().map_err(|_| Error::SvdFailure)?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = m.nrows().min(m.ncols());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| fs[i]).collect();
    if singular_values.iter().any(|s| !s.is_finite()) {
        return Err(Error::SvdFailure);
    }
    let mut u = DMatrix::from_fn(m.nrows(), k, |i, c| fu[(i, order[c])]);
    let mut v_t = DMatrix::from_fn(k, m.ncols(), |r, j| fv[(j, order[r])]);

    for k in 0..u.ncols() {
        let col = u.column(k);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            u.column_mut(k).neg_mut();
            v_t.row_mut(k).neg_mut();
        }
    }

    Ok(ThinSvd {
        u,
        singular_values,
        v_t,
    })
}

/// Squared Frobenius norm.
pub(crate) fn frob2(m: &DMatrix<f64>) -> f64 {
    pairwise_sum(&m.iter().map(|x| x * x).collect::<Vec<_>>())
}

/// Pairwise (tree) summation. The reduction order depends only on the
/// slice length, so results are reproducible regardless of how the terms
/// were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean of a non-empty slice, accumulated as offsets from the first element
/// so that a constant slice returns that constant exactly.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    let base = values[0];
    let offsets: Vec<f64> = values.iter().map(|v| v - base).collect();
    base + pairwise_sum(&offsets) / values.len() as f64
}

pub(crate) fn ensure_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}
