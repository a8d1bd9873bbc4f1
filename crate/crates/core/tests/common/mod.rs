// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ts_lens::numerics::Matrix;
use ts_lens::synthgen::Rng;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.next_gaussian())
}

pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let q = to_na(&random(n, n, seed)).qr().q();
    Matrix::from_fn(n, n, |i, j| q[(i, j)])
}

fn center(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for c in 0..x.ncols() {
        let mean = x.column(c).mean();
        out.column_mut(c).add_scalar_mut(-mean);
    }
    out
}

/// Linear CKA evaluated directly with nalgebra.
pub fn cka_oracle(x: &Matrix, y: &Matrix) -> f64 {
    let (x, y) = (center(&to_na(x)), center(&to_na(y)));
    let xy = (x.transpose() * &y).norm();
    let xx = (x.transpose() * &x).norm();
    let yy = (y.transpose() * &y).norm();
    xy * xy / (xx * yy)
}

/// Smallest `k` whose leading squared singular values reach `keep` of the total.
fn retained(s: &[f64], keep: f64) -> usize {
    let total: f64 = s.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    for (i, v) in s.iter().enumerate() {
        acc += v * v;
        if acc >= keep * total * (1.0 - 1e-12) {
            return i + 1;
        }
    }
    s.len()
}

fn inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Truncate each input to its leading singular directions, then run full
/// CCA through whitened cross-covariance; mean canonical correlation.
pub fn truncated_cca_oracle(x: &Matrix, y: &Matrix, keep: f64) -> f64 {
    let reduce = |m: &Matrix| {
        let c = center(&to_na(m));
        let svd = c.clone().svd(false, true);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let vt = svd.v_t.unwrap();
        // nalgebra does not promise sorted output
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        s = order.iter().map(|&i| s[i]).collect();
        let k = retained(&s, keep);
        let basis = DMatrix::from_fn(c.ncols(), k, |r, j| vt[(order[j], r)]);
        c * basis
    };
    let (a, b) = (reduce(x), reduce(y));
    let saa = a.transpose() * &a;
    let sbb = b.transpose() * &b;
    let sab = a.transpose() * &b;
    let t = inv_sqrt(&saa) * sab * inv_sqrt(&sbb);
    let corr = t.svd(false, false).singular_values;
    corr.iter().sum::<f64>() / corr.len() as f64
}

/// Greedy partition replayed from brute-force segment checks, then the
/// size and full-submatrix filters. Returns 1-based inclusive ranges.
pub fn blocks_oracle(v: &Matrix, tau: f64, k: usize) -> Vec<(usize, usize)> {
    let n = v.rows();
    // a segment is greedy-admissible when every later member clears tau
    // against every earlier one
    let admissible = |s: usize, e: usize| {
        (s..=e).all(|i| (s..i).all(|j| v[(i, j)] >= tau))
    };
    let mut segments = Vec::new();
    let mut s = 0;
    while s < n {
        let e = (s..n).rev().find(|&e| admissible(s, e)).unwrap();
        segments.push((s, e));
        s = e + 1;
    }
    segments
        .into_iter()
        .filter(|&(s, e)| e - s + 1 >= k)
        .filter(|&(s, e)| (s..=e).all(|i| (s..=e).all(|j| v[(i, j)] >= tau)))
        .map(|(s, e)| (s + 1, e + 1))
        .collect()
}

/// Random symmetric matrix with planted blocks, noise, and an occasional
/// low diagonal entry.
pub fn planted_similarity(n: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let mut group = vec![0usize; n];
    let mut g = 0;
    for slot in group.iter_mut().skip(1) {
        if rng.next_f64() < 0.3 {
            g += 1;
        }
        *slot = g;
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let base = if group[i] == group[j] { 0.9 } else { 0.5 };
            let v = (base + 0.12 * (rng.next_f64() - 0.5) * 2.0).clamp(0.0, 1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] = if rng.next_f64() < 0.1 { 0.8 } else { 1.0 };
    }
    m
}

/// Fisher criterion `(wᵀd)² / (wᵀΣw)`.
pub fn fisher_criterion(w: &[f64], gap: &[f64], cov: &Matrix) -> f64 {
    let num: f64 = w.iter().zip(gap).map(|(a, b)| a * b).sum();
    let mut den = 0.0;
    for i in 0..w.len() {
        for j in 0..w.len() {
            den += w[i] * cov[(i, j)] * w[j];
        }
    }
    num * num / den
}

/// DFT magnitudes for bins `0..=n/2` through rustfft.
pub fn fft_magnitudes(x: &[f64]) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf[..=x.len() / 2].iter().map(|c| c.norm()).collect()
}

/// Largest-magnitude bin other than DC, via rustfft.
pub fn fft_dominant_bin(x: &[f64]) -> usize {
    let mags = fft_magnitudes(x);
    (1..mags.len())
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]).then(b.cmp(&a)))
        .unwrap_or(0)
}
