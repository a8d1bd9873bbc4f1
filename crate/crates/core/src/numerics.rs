// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major `f64` matrices and the handful of factorizations the
//! analysis modules need: column centering, a one-sided Jacobi SVD, ridge
//! solves through Cholesky, and PCA.
//!
//! Everything here is a pure function of its inputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`Matrix::new`] but panics on invalid input. Meant for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::new(r, c, data).expect("invalid matrix literal")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shape(format!(
                "cannot form Aᵀ·B for {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = rhs.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, |a, b| a + b)
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        if self.rows == 0 {
            return means;
        }
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Sub-matrix of the given columns.
    pub fn select_columns(&self, cols: std::ops::Range<usize>) -> Matrix {
        let width = cols.len();
        Matrix::from_fn(self.rows, width, |r, c| self[(r, cols.start + c)])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Subtracts each column's mean.
pub fn center_columns(m: &Matrix) -> Matrix {
    let means = m.column_means();
    let mut out = m.clone();
    for r in 0..out.rows {
        for (v, mu) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

/// Thin singular value decomposition `m = u · diag(s) · vt`.
///
/// For an `r×c` input with `k = min(r, c)`: `u` is `r×k`, `s` has `k`
/// entries sorted descending, `vt` is `k×c`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (v, s) in us.row_mut(r).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformable")
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::shape("svd of an empty matrix"));
    }
    if m.rows() < m.cols() {
        // Aᵀ = U' S V'ᵀ  =>  A = V' S U'ᵀ
        let t = jacobi_tall(&m.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    jacobi_tall(m)
}

/// Jacobi SVD for `rows >= cols`.
fn jacobi_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    // Work column-major: columns of A and V are rotated in pairs.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    // columns below this squared norm are numerically zero; rounding noise
    // would otherwise keep them from ever looking orthogonal
    let negligible = eps * eps * m.as_slice().iter().map(|x| x * x).sum::<f64>();
    let mut converged = cols < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&a[p], &a[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NonConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let smax = norms[order[0]];
    let tiny = smax * eps * rows as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut vt = Matrix::zeros(cols, cols);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > tiny && sigma > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(vec![0.0; rows]);
            s.push(0.0);
        }
        for (c, &val) in v[j].iter().enumerate() {
            vt[(k, c)] = val;
        }
    }
    complete_orthonormal(&mut u_cols, &s);

    let u = Matrix::from_fn(rows, cols, |r, c| u_cols[c][r]);
    Ok(SvdResult { u, s, vt })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Replaces the columns paired with zero singular values by unit vectors
/// orthogonal to every other column (Gram–Schmidt against the standard basis).
fn complete_orthonormal(u_cols: &mut [Vec<f64>], s: &[f64]) {
    let rows = u_cols.first().map_or(0, Vec::len);
    let mut candidate = 0;
    for k in 0..u_cols.len() {
        if s[k] > 0.0 {
            continue;
        }
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, col) in u_cols.iter().enumerate() {
                    if j == k || (s[j] == 0.0 && j > k) {
                        continue;
                    }
                    let dot: f64 = col.iter().zip(&e).map(|(a, b)| a * b).sum();
                    for (x, c) in e.iter_mut().zip(col) {
                        *x -= dot * c;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                u_cols[k] = e.iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix, or `None`
/// when a pivot falls below `tol`.
fn cholesky(a: &Matrix, tol: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `(L Lᵀ) x = b` column by column.
fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `(A + alpha·I) x = b` for a symmetric positive (semi)definite `A`.
pub fn solve_spd_shifted(a: &Matrix, b: &Matrix, alpha: f64) -> Result<Matrix> {
    if a.rows() != a.cols() || a.rows() != b.rows() {
        return Err(Error::shape("shifted SPD solve needs square A matching b"));
    }
    let mut shifted = a.clone();
    let scale = (0..a.rows()).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
    for i in 0..a.rows() {
        shifted[(i, i)] += alpha;
    }
    let tol = (scale * 1e-13).max(f64::MIN_POSITIVE);
    let l = cholesky(&shifted, tol).ok_or(Error::SingularSystem)?;
    Ok(cholesky_solve(&l, b))
}

/// Ridge regression: minimizes `‖a·x − b‖²_F + alpha·‖x‖²_F` through the
/// normal equations `(aᵀa + alpha·I) x = aᵀb`.
pub fn solve_ridge(a: &Matrix, b: &Matrix, alpha: f64) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "ridge: a has {} rows, b has {}",
            a.rows(),
            b.rows()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let ata = a.t_matmul(a)?;
    let atb = a.t_matmul(b)?;
    solve_spd_shifted(&ata, &atb, alpha)
}

/// Principal components of a data matrix (rows are observations).
#[derive(Debug, Clone)]
pub struct Pca {
    /// `k×cols`, orthonormal rows; each row's largest-magnitude entry is positive.
    pub components: Matrix,
    /// `rows×k` projection of the centered data.
    pub projected: Matrix,
    /// Per-component variance with `n − 1` denominator, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Column means removed before projection.
    pub mean: Vec<f64>,
    /// Set when fewer than `k` singular values are nonzero.
    pub rank_deficient: bool,
}

impl Pca {
    /// Projects new observations with the fitted mean and components.
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::shape("pca transform: column count differs"));
        }
        let mut centered = m.clone();
        for r in 0..centered.rows() {
            for (v, mu) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= mu;
            }
        }
        centered.matmul(&self.components.transpose())
    }
}

/// Fits `k` principal components.
pub fn pca(m: &Matrix, k: usize) -> Result<Pca> {
    let (rows, cols) = m.shape();
    if rows < 2 {
        return Err(Error::InvalidArgument("pca needs at least two rows".into()));
    }
    if k == 0 || k > (rows - 1).min(cols) {
        return Err(Error::InvalidArgument(format!(
            "pca: k = {k} must be in 1..={}",
            (rows - 1).min(cols)
        )));
    }
    let mean = m.column_means();
    let centered = center_columns(m);
    let dec = svd(&centered)?;

    let mut components = Matrix::zeros(k, cols);
    for i in 0..k {
        let row = dec.vt.row(i);
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, &v) in components.row_mut(i).iter_mut().zip(row) {
            *dst = sign * v;
        }
    }
    let denom = (rows - 1) as f64;
    let explained_variance: Vec<f64> = dec.s[..k].iter().map(|s| s * s / denom).collect();
    let tol = dec.s[0] * 1e-12;
    let rank = dec.s.iter().filter(|&&s| s > tol).count();
    let projected = centered.matmul(&components.transpose())?;
    Ok(Pca {
        components,
        projected,
        explained_variance,
        mean,
        rank_deficient: rank < k,
    })
}

/// Magnitudes of the discrete Fourier transform for bins `0..=len/2`.
pub fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                // reduce the phase index first to keep the angle small
                let angle = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Index of the largest DFT magnitude, ignoring bin 0.
pub fn dominant_nonzero_bin(x: &[f64]) -> usize {
    let mags = dft_magnitudes(x);
    (1..mags.len())
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]).then(b.cmp(&a)))
        .unwrap_or(0)
}

/// Slope of the least-squares line through `(t, x[t])`.
pub fn least_squares_slope(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &v) in x.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (v - x_mean);
        den += dt * dt;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.next_gaussian())
    }

    #[test]
    fn center_columns_examples() {
        let m = Matrix::from_rows(&[&[1.0], &[3.0]]);
        assert_eq!(center_columns(&m), Matrix::from_rows(&[&[-1.0], &[1.0]]));
        assert_eq!(center_columns(&Matrix::zeros(3, 2)), Matrix::zeros(3, 2));

        let m = random(5, 3, 11);
        let c = center_columns(&m);
        for col in 0..3 {
            // oracle: direct column sum after subtracting a separately computed mean
            let mean: f64 = m.column(col).iter().sum::<f64>() / 5.0;
            let sum: f64 = c.column(col).iter().sum();
            assert!(sum.abs() < 1e-10 * 5.0);
            assert!((c[(0, col)] - (m[(0, col)] - mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn svd_diagonal_and_rank_one() {
        let d = svd(&Matrix::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-14 && (d.s[1] - 1.0).abs() < 1e-14);

        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 4.0];
        let m = Matrix::from_fn(3, 2, |r, c| u[r] * v[c]);
        let d = svd(&m).unwrap();
        assert!((d.s[0] - 15.0).abs() < 1e-12);
        assert!(d.s[1].abs() < 1e-12);
        let utu = d.u.t_matmul(&d.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn svd_reconstructs_random() {
        let m = random(6, 4, 3);
        let d = svd(&m).unwrap();
        let err = d.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
        assert!(err < 1e-8, "{err}");
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_converges_on_repeated_rows() {
        // two distinct points, centered: rank one with 64 columns
        let a: Vec<f64> = (0..64).map(|j| ((j * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let b: Vec<f64> = (0..64).map(|j| ((j * 13 % 7) as f64 - 3.0) * 1.7).collect();
        let m = Matrix::from_fn(600, 64, |r, c| if r < 100 { a[c] } else { b[c] });
        let d = svd(&center_columns(&m)).unwrap();
        assert!(d.s[1] < 1e-9 * d.s[0]);
        let err = d.reconstruct().sub(&center_columns(&m)).unwrap().frobenius();
        assert!(err < 1e-8 * d.s[0]);
        assert!(pca(&m, 2).unwrap().rank_deficient);
    }

    #[test]
    fn svd_wide_matrix() {
        let m = random(3, 7, 5);
        let d = svd(&m).unwrap();
        assert_eq!(d.u.shape(), (3, 3));
        assert_eq!(d.vt.shape(), (3, 7));
        let err = d.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
        assert!(err < 1e-8);
    }

    #[test]
    fn ridge_identity_cases() {
        let i3 = Matrix::identity(3);
        let x = solve_ridge(&i3, &i3, 0.0).unwrap();
        assert!(x.sub(&i3).unwrap().max_abs() < 1e-15);
        let i2 = Matrix::identity(2);
        let x = solve_ridge(&i2, &i2, 1.0).unwrap();
        assert!(x.sub(&i2.scale(0.5)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn ridge_matches_normal_equation_oracle() {
        let a = random(8, 3, 21);
        let b = random(8, 2, 22);
        let alpha = 0.1;
        let x = solve_ridge(&a, &b, alpha).unwrap();
        // oracle: 3x3 normal equations solved by Cramer's rule
        let mut g = a.t_matmul(&a).unwrap();
        for i in 0..3 {
            g[(i, i)] += alpha;
        }
        let rhs = a.t_matmul(&b).unwrap();
        let det3 = |m: &Matrix| {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        };
        let det = det3(&g);
        for c in 0..2 {
            for i in 0..3 {
                let mut gi = g.clone();
                for r in 0..3 {
                    gi[(r, i)] = rhs[(r, c)];
                }
                let want = det3(&gi) / det;
                assert!((x[(i, c)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ridge_singular_without_regularization() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        let b = Matrix::from_rows(&[&[1.0], &[2.0], &[3.0]]);
        assert!(matches!(
            solve_ridge(&a, &b, 0.0),
            Err(Error::SingularSystem)
        ));
        assert!(solve_ridge(&a, &b, 1e-3).is_ok());
    }

    #[test]
    fn pca_collinear_points() {
        let m = Matrix::from_fn(6, 2, |r, c| if c == 0 { r as f64 } else { 2.0 * r as f64 });
        let p = pca(&m, 2).unwrap();
        let s5 = 5f64.sqrt();
        assert!((p.components[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((p.components[(0, 1)] - 2.0 / s5).abs() < 1e-12);
        assert!(p.explained_variance[1].abs() < 1e-20);
        assert!(p.rank_deficient);
    }

    #[test]
    fn pca_full_rank_explains_total_variance() {
        let m = random(20, 4, 8);
        let p = pca(&m, 4).unwrap();
        let c = center_columns(&m);
        let total: f64 = c.as_slice().iter().map(|v| v * v).sum::<f64>() / 19.0;
        let sum: f64 = p.explained_variance.iter().sum();
        assert!((sum - total).abs() < 1e-8);
        assert!(!p.rank_deficient);
    }

    #[test]
    fn pca_rejects_bad_k() {
        let m = random(3, 5, 1);
        assert!(pca(&m, 3).is_err());
        assert!(pca(&m, 0).is_err());
    }

    #[test]
    fn dft_of_pure_tone() {
        let x: Vec<f64> = (0..128)
            .map(|t| 3.0 + 50.0 * (2.0 * std::f64::consts::PI * t as f64 / 32.0).sin())
            .collect();
        let m = dft_magnitudes(&x);
        assert_eq!(m.len(), 65);
        assert!((m[0] - 3.0 * 128.0).abs() < 1e-9);
        assert!((m[4] - 50.0 * 64.0).abs() < 1e-8);
        assert_eq!(dominant_nonzero_bin(&x), 4);
    }

    #[test]
    fn slope_of_a_line() {
        let x: Vec<f64> = (0..10).map(|t| 2.0 - 0.5 * t as f64).collect();
        assert!((least_squares_slope(&x) + 0.5).abs() < 1e-12);
        assert_eq!(least_squares_slope(&[4.0]), 0.0);
    }
}
