//! Cross-dimensional descriptor distillation.
//!
//! A teacher mini-set `D_t` (rows x teacher_dim) is compressed to a target
//! `D_l` (rows x c_desc) whose Gram matrix matches the teacher's. Because any
//! orthogonal re-parameterization of `D_l` has the same Gram matrix, student
//! descriptors are compared to `D_l * Omega` with `Omega` chosen in closed
//! form by solving an orthogonal Procrustes problem per view. The solved
//! `Omega` is treated as a constant when differentiating.

use std::borrow::Borrow;

use nalgebra::DMatrix;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::linalg::{ensure_same_shape, frob2, thin_svd};

/// Maximum `||Q Q^T - I||_F` accepted for an [`OrthogonalMap`].
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

/// A square orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMap(DMatrix<f64>);

impl OrthogonalMap {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::BadDimension(format!(
                "orthogonal map must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = orthogonality_defect(&m);
        if !(dev <= ORTHOGONALITY_TOLERANCE) {
            return Err(Error::BadDimension(format!(
                "matrix is not orthogonal (||QQ^T - I||_F = {dev:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `||Q Q^T - I||_F`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    (q * q.transpose() - DMatrix::<f64>::identity(n, n)).norm()
}

/// Teacher descriptors compressed to `c_desc` columns.
#[derive(Debug, Clone)]
pub struct CompressedTeacher {
    /// `rows x c_desc`; rows are unit length only when the compression is
    /// lossless.
    pub target: DMatrix<f64>,
    /// Leading singular values of the teacher, nonincreasing, zero-padded to
    /// `c_desc`.
    pub singular_values: Vec<f64>,
}

/// Weights of the combined training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_op: f64,
    pub w_sim: f64,
    pub w_detect: f64,
}

impl LossWeights {
    pub fn new(w_op: f64, w_sim: f64, w_detect: f64) -> Result<Self> {
        for (name, w) in [("w_op", w_op), ("w_sim", w_sim), ("w_detect", w_detect)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(Self { w_op, w_sim, w_detect })
    }
}

impl Default for LossWeights {
    /// Descriptor 0.5, similarity 0.1, detection 1.
    fn default() -> Self {
        Self {
            w_op: 0.5,
            w_sim: 0.1,
            w_detect: 1.0,
        }
    }
}

fn check_c_desc(c_desc: usize, dim: usize) -> Result<()> {
    if c_desc < 2 || c_desc > dim {
        return Err(Error::BadDimension(format!(
            "target dimension {c_desc} outside 2..={dim}"
        )));
    }
    Ok(())
}

/// Columns `sigma_i * u_i` for the leading `c_desc` singular triplets of `m`,
/// zero-padded when `m` has fewer than `c_desc` rows.
fn scaled_left_singular_vectors(m: &DMatrix<f64>, c_desc: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = thin_svd(m)?;
    let keep = c_desc.min(svd.singular_values.len());
    let mut out = DMatrix::zeros(m.nrows(), c_desc);
    let mut sv = vec![0.0; c_desc];
    for k in 0..keep {
        let s = svd.singular_values[k];
        sv[k] = s;
        out.column_mut(k).copy_from(&(svd.u.column(k) * s));
    }
    Ok((out, sv))
}

/// Low-rank compression of a teacher mini-set.
///
/// `D_l D_l^T` is the best rank-`c_desc` approximation of `D_t D_t^T`, and
/// equals it exactly when the teacher has at most `c_desc` rows.
pub fn lra_compress(teacher: &DescriptorSet, c_desc: usize) -> Result<CompressedTeacher> {
    lra_compress_matrix(teacher.matrix(), c_desc)
}

/// [`lra_compress`] on a raw matrix.
pub fn lra_compress_matrix(teacher: &DMatrix<f64>, c_desc: usize) -> Result<CompressedTeacher> {
    check_c_desc(c_desc, teacher.ncols())?;
    let (target, singular_values) = scaled_left_singular_vectors(teacher, c_desc)?;
    Ok(CompressedTeacher {
        target,
        singular_values,
    })
}

/// Mean-centred projection onto the top `c_desc` principal directions.
pub fn pca_compress(teacher: &DescriptorSet, c_desc: usize) -> Result<DMatrix<f64>> {
    pca_compress_matrix(teacher.matrix(), c_desc)
}

/// [`pca_compress`] on a raw matrix.
pub fn pca_compress_matrix(teacher: &DMatrix<f64>, c_desc: usize) -> Result<DMatrix<f64>> {
    if teacher.nrows() < 2 {
        return Err(Error::BadDimension("PCA needs at least two rows".into()));
    }
    check_c_desc(c_desc, teacher.ncols())?;
    let mean = teacher.row_mean();
    let mut centered = teacher.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    // centered * v_k == sigma_k * u_k, so projecting onto the principal axes
    // is the same column construction as the LRA path
    let (out, _) = scaled_left_singular_vectors(&centered, c_desc)?;
    Ok(out)
}

/// Closed-form orthogonal Procrustes solution:
/// `argmin_{X orthogonal} ||target * X - student||_F^2 = V U^T`, where
/// `U S V^T` is the SVD of `student^T * target`.
pub fn procrustes_solve(target: &DMatrix<f64>, student: &DMatrix<f64>) -> Result<OrthogonalMap> {
    ensure_same_shape(target, student)?;
    let cross = student.transpose() * target;
    let svd = thin_svd(&cross)?;
    let omega = svd.v_t.transpose() * svd.u.transpose();
    OrthogonalMap::new(omega)
}

/// `||target * omega - student||_F^2`.
pub fn procrustes_residual(
    target: &DMatrix<f64>,
    student: &DMatrix<f64>,
    omega: &OrthogonalMap,
) -> Result<f64> {
    ensure_same_shape(target, student)?;
    if omega.dim() != target.ncols() {
        return Err(Error::ShapeMismatch {
            left: omega.matrix().shape(),
            right: (target.ncols(), target.ncols()),
        });
    }
    Ok(frob2(&(target * omega.matrix() - student)))
}

/// Orthogonal Procrustes loss averaged over the views. Also returns the
/// per-view solved maps.
pub fn op_loss(target: &DMatrix<f64>, students: &[DescriptorSet]) -> Result<(f64, Vec<OrthogonalMap>)> {
    if students.is_empty() {
        return Err(Error::InvalidConfig("op_loss needs at least one view".into()));
    }
    let mut maps = Vec::with_capacity(students.len());
    let mut terms = Vec::with_capacity(students.len());
    for s in students {
        let omega = procrustes_solve(target, s.matrix())?;
        terms.push(procrustes_residual(target, s.matrix(), &omega)?);
        maps.push(omega);
    }
    let loss = terms.iter().sum::<f64>() / students.len() as f64;
    Ok((loss, maps))
}

/// Gradient of `(1/n_views) ||target * omega - student||^2` with respect to
/// `student`, holding `omega` fixed.
pub fn op_loss_grad(
    target: &DMatrix<f64>,
    student: &DMatrix<f64>,
    omega: &OrthogonalMap,
    n_views: usize,
) -> Result<DMatrix<f64>> {
    ensure_same_shape(target, student)?;
    if omega.dim() != target.ncols() {
        return Err(Error::ShapeMismatch {
            left: omega.matrix().shape(),
            right: (target.ncols(), target.ncols()),
        });
    }
    if n_views == 0 {
        return Err(Error::InvalidConfig("n_views must be >= 1".into()));
    }
    Ok((student - target * omega.matrix()) * (2.0 / n_views as f64))
}

fn check_views<M: Borrow<DMatrix<f64>>>(views: &[M]) -> Result<()> {
    if views.len() < 2 {
        return Err(Error::NeedTwoViews(views.len()));
    }
    let first = views[0].borrow();
    for v in &views[1..] {
        ensure_same_shape(first, v.borrow())?;
    }
    Ok(())
}

/// Similarity loss `1/(N(N-1)) * sum_{i<j} ||D_i - D_j||_F^2`.
///
/// The normalization is applied to a sum over unordered pairs, so this is
/// half the mean pairwise distance.
pub fn sim_loss<M: Borrow<DMatrix<f64>>>(students: &[M]) -> Result<f64> {
    check_views(students)?;
    let n = students.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += frob2(&(students[i].borrow() - students[j].borrow()));
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Per-view gradients of [`sim_loss`]:
/// `2/(N(N-1)) * sum_{j != i} (D_i - D_j)`, computed as
/// `2/(N(N-1)) * (N D_i - sum_j D_j)`.
pub fn sim_loss_grad<M: Borrow<DMatrix<f64>>>(students: &[M]) -> Result<Vec<DMatrix<f64>>> {
    check_views(students)?;
    let n = students.len();
    let (rows, cols) = students[0].borrow().shape();
    let mut sum = DMatrix::zeros(rows, cols);
    for s in students {
        sum += s.borrow();
    }
    let scale = 2.0 / (n * (n - 1)) as f64;
    Ok(students
        .iter()
        .map(|s| (s.borrow() * n as f64 - &sum) * scale)
        .collect())
}

/// Weighted sum of the three training losses.
pub fn total_loss(l_op: f64, l_sim: f64, l_detect: f64, w: &LossWeights) -> f64 {
    w.w_op * l_op + w.w_sim * l_sim + w.w_detect * l_detect
}
