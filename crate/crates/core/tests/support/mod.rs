//! Reference implementations used as test oracles. Nothing here calls into
//! the library's numerics; the eigen solver, orthogonal sampler and finite
//! differences are written from scratch.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = gaussian(rows, cols, rng);
    for mut r in m.row_iter_mut() {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r /= n;
    }
    m
}

/// Haar-ish random orthogonal matrix by modified Gram-Schmidt on a Gaussian
/// matrix, with a random reflection half the time.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = gaussian(n, n, rng);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v: Vec<f64> = g.column(j).iter().copied().collect();
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= d * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    let mut q = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    if rng.random_bool(0.5) {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn frob2(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and matching unit eigenvectors as
/// columns.
pub fn jacobi_eigen(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sym[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[r][order[c]]);
    (values, vectors)
}

/// Central differences of a scalar function of a matrix.
pub fn numeric_grad(x: &DMatrix<f64>, h: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + h;
            let up = f(&probe);
            probe[(i, j)] = orig - h;
            let down = f(&probe);
            probe[(i, j)] = orig;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// Largest entrywise relative error, with `floor` guarding tiny entries.
pub fn max_rel_err(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn dot_rows(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| a[(i, k)] * b[(j, k)]).sum()
}

/// Gram matrix by explicit double loop.
pub fn gram_loop(d: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(d.nrows(), d.nrows(), |i, j| dot_rows(d, i, d, j))
}

/// Mutual nearest neighbours by exhaustive search, lowest index on ties.
pub fn mnn_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let argmax = |scores: Vec<f64>| {
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = k;
            }
        }
        best
    };
    let mut out = Vec::new();
    for i in 0..a.nrows() {
        let j = argmax((0..b.nrows()).map(|j| dot_rows(a, i, b, j)).collect());
        let back = argmax((0..a.nrows()).map(|k| dot_rows(a, k, b, j)).collect());
        if back == i {
            out.push((i, j));
        }
    }
    out
}
