//! Unit-norm descriptor sets, Gram matrices and mutual-nearest-neighbour
//! matching.

use std::borrow::Borrow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::frob2;

/// Rows with a norm at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;
/// Accepted deviation from unit length in [`DescriptorSet::from_unit_rows`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// A `rows x dim` matrix whose rows are unit L2-norm embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    data: DMatrix<f64>,
}

impl DescriptorSet {
    /// Normalizes every row to unit length.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        l2_normalize_rows(&data)
    }

    /// Validates an already-normalized matrix without modifying it. Used for
    /// data read back from files.
    pub fn from_unit_rows(data: DMatrix<f64>) -> Result<Self> {
        check_shape(&data)?;
        check_finite(&data)?;
        for (index, row) in data.row_iter().enumerate() {
            let norm = row.norm();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::NotUnitNorm { index, norm });
            }
        }
        Ok(Self { data })
    }

    pub fn from_row_slice(rows: usize, dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::BadDimension(format!(
                "{} values for a {rows}x{dim} set",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, dim, values))
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Cosine similarity between row `i` of `self` and row `j` of `other`.
    pub fn cosine(&self, i: usize, other: &DescriptorSet, j: usize) -> f64 {
        self.data.row(i).dot(&other.data.row(j))
    }

    pub fn gram(&self) -> DMatrix<f64> {
        gram(&self.data)
    }

    /// Applies a right multiplication and re-validates.
    pub fn transform(&self, map: &DMatrix<f64>) -> Result<Self> {
        Self::new(&self.data * map)
    }
}

impl AsRef<DMatrix<f64>> for DescriptorSet {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.data
    }
}

impl Borrow<DMatrix<f64>> for DescriptorSet {
    fn borrow(&self) -> &DMatrix<f64> {
        &self.data
    }
}

fn check_shape(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() < 1 {
        return Err(Error::BadDimension("descriptor set needs at least one row".into()));
    }
    if m.ncols() < 2 {
        return Err(Error::BadDimension(format!(
            "descriptor dimension must be at least 2, got {}",
            m.ncols()
        )));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    // nalgebra stores column-major; report the row-major flat index
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite {
                    index: r * m.ncols() + c,
                });
            }
        }
    }
    Ok(())
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &DMatrix<f64>) -> Result<DescriptorSet> {
    check_shape(m)?;
    check_finite(m)?;
    let mut data = m.clone();
    for (index, mut row) in data.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm <= ZERO_NORM {
            return Err(Error::ZeroRow { index });
        }
        row /= norm;
    }
    Ok(DescriptorSet { data })
}

/// `D * D^T`.
pub fn gram(d: &DMatrix<f64>) -> DMatrix<f64> {
    d * d.transpose()
}

/// Squared Frobenius distance between the Gram matrices of two sets with the
/// same number of rows. Dimensions may differ.
pub fn gram_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::RowCountMismatch {
            left: a.nrows(),
            right: b.nrows(),
        });
    }
    Ok(frob2(&(gram(a) - gram(b))))
}

/// Mutual nearest-neighbour matches between two descriptor sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchList {
    pub pairs: Vec<(usize, usize)>,
    pub similarities: Vec<f64>,
}

impl MatchList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Reorders matches by descending similarity (stable on ties).
    pub fn sort_by_similarity(&mut self) {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.sort_by(|&x, &y| self.similarities[y].total_cmp(&self.similarities[x]));
        self.pairs = order.iter().map(|&k| self.pairs[k]).collect();
        self.similarities = order.iter().map(|&k| self.similarities[k]).collect();
    }
}

/// Index of the first maximum; strict `>` keeps the lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((k, v)),
        }
    }
    best.map(|(k, _)| k)
}

/// Mutual nearest-neighbour matching on cosine similarity. Pairs are
/// returned in increasing order of the index into `a`.
pub fn mnn_match(a: &DescriptorSet, b: &DescriptorSet) -> Result<MatchList> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let sim = a.matrix() * b.matrix().transpose();

    let best_in_b: Vec<usize> = (0..sim.nrows())
        .map(|i| argmax(sim.row(i).iter().copied()).expect("non-empty row"))
        .collect();
    let best_in_a: Vec<usize> = (0..sim.ncols())
        .map(|j| argmax(sim.column(j).iter().copied()).expect("non-empty column"))
        .collect();

    let mut out = MatchList::default();
    for (i, &j) in best_in_b.iter().enumerate() {
        if best_in_a[j] == i {
            out.pairs.push((i, j));
            out.similarities.push(sim[(i, j)]);
        }
    }
    Ok(out)
}
