// SPDX-License-Identifier: MIT OR Apache-2.0

//! Representation similarity between layers.
//!
//! All metrics take `n × D` matrices with one row per sample. Inputs are
//! column-centered before scoring, so linear CKA and its HSIC form agree.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Fnv1a};
use crate::model::CaptureSet;
use crate::numerics::{center_columns, svd, Matrix};

const DEGENERATE: f64 = 1e-12;
const RANGE_TOL: f64 = 1e-9;

/// How a `n × N × D` capture becomes a 2-D representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average over tokens: `n × D`.
    #[default]
    Mean,
    /// Tokens become samples: `(n·N) × D`.
    Flatten,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Mean => "mean",
            Reduction::Flatten => "flatten",
        })
    }
}

/// Layer similarity metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cka,
    Cosine,
    Svcca,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cka => "cka",
            Metric::Cosine => "cosine",
            Metric::Svcca => "svcca",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cka" => Ok(Metric::Cka),
            "cosine" => Ok(Metric::Cosine),
            "svcca" => Ok(Metric::Svcca),
            other => Err(Error::InvalidArgument(format!(
                "unknown metric `{other}` (cka, cosine, svcca)"
            ))),
        }
    }
}

/// One layer's representation with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMatrix {
    pub values: Matrix,
    pub layer: usize,
    pub model_hash: u64,
    pub reduction: Reduction,
}

/// Reduces capture index `layer` of `captures`.
pub fn reduce(captures: &CaptureSet, layer: usize, reduction: Reduction) -> RepMatrix {
    let values = match reduction {
        Reduction::Mean => captures.token_mean(layer),
        Reduction::Flatten => captures.flatten_tokens(layer),
    };
    RepMatrix {
        values,
        layer,
        model_hash: captures.model_hash,
        reduction,
    }
}

fn check_pair(x: &Matrix, y: &Matrix, min_rows: usize) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::SampleMismatch(format!(
            "{} vs {} samples",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_rows} samples, got {}",
            x.rows()
        )));
    }
    Ok(())
}

fn clamp_unit(v: f64) -> f64 {
    debug_assert!(
        (-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v),
        "score {v} outside [0, 1]"
    );
    v.clamp(0.0, 1.0)
}

/// Linear CKA: `‖XᵀY‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on centered inputs.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (xc, yc) = (center_columns(x), center_columns(y));
    let xx = xc.t_matmul(&xc)?.frobenius();
    let yy = yc.t_matmul(&yc)?.frobenius();
    if xx < DEGENERATE || yy < DEGENERATE {
        return Err(Error::DegenerateRepresentation("zero variance after centering"));
    }
    let xy = xc.t_matmul(&yc)?.frobenius();
    Ok(clamp_unit(xy * xy / (xx * yy)))
}

/// CKA through centered Gram matrices, `HSIC(K, L) / √(HSIC(K, K) HSIC(L, L))`
/// with `K = XXᵀ`, `L = YYᵀ`.
pub fn hsic_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y, 2)?;
    let k = centered_gram(x)?;
    let l = centered_gram(y)?;
    let n = x.rows() as f64;
    let hsic = |a: &Matrix, b: &Matrix| -> f64 {
        // tr(HKH · HLH) over symmetric inputs is the elementwise sum
        a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum::<f64>()
            / ((n - 1.0) * (n - 1.0))
    };
    let kk = hsic(&k, &k);
    let ll = hsic(&l, &l);
    if kk.sqrt() < DEGENERATE || ll.sqrt() < DEGENERATE {
        return Err(Error::DegenerateRepresentation("zero variance after centering"));
    }
    Ok(clamp_unit(hsic(&k, &l) / (kk * ll).sqrt()))
}

/// `H · X Xᵀ · H`.
fn centered_gram(x: &Matrix) -> Result<Matrix> {
    let k = x.matmul(&x.transpose())?;
    let n = k.rows();
    let row_means: Vec<f64> = (0..n).map(|r| k.row(r).iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    // K is symmetric, so column means equal row means
    Ok(Matrix::from_fn(n, n, |i, j| {
        k[(i, j)] - row_means[i] - row_means[j] + grand
    }))
}

/// Mean over samples of the cosine between matching rows.
pub fn avg_cosine(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y, 1)?;
    if x.cols() != y.cols() {
        return Err(Error::shape(format!(
            "cosine needs equal widths, got {} and {}",
            x.cols(),
            y.cols()
        )));
    }
    let mut total = 0.0;
    for r in 0..x.rows() {
        let (a, b) = (x.row(r), y.row(r));
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na < DEGENERATE || nb < DEGENERATE {
            return Err(Error::ZeroVector { index: r });
        }
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        total += dot / (na * nb);
    }
    Ok((total / x.rows() as f64).clamp(-1.0, 1.0))
}

/// Left singular vectors covering `variance_keep` of the centered energy.
fn retained_basis(x: &Matrix, variance_keep: f64) -> Result<Matrix> {
    let dec = svd(&center_columns(x))?;
    let energy: Vec<f64> = dec.s.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if dec.s[0] < DEGENERATE {
        return Err(Error::DegenerateRepresentation("zero variance input"));
    }
    let mut acc = 0.0;
    let mut k = energy.len();
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= variance_keep * total * (1.0 - 1e-12) {
            k = i + 1;
            break;
        }
    }
    Ok(dec.u.select_columns(0..k))
}

/// SVCCA: mean canonical correlation between the retained left singular
/// subspaces of the two centered inputs.
pub fn svcca(x: &Matrix, y: &Matrix, variance_keep: f64) -> Result<f64> {
    check_pair(x, y, 3)?;
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance_keep {variance_keep} outside (0, 1]"
        )));
    }
    let ux = retained_basis(x, variance_keep)?;
    let uy = retained_basis(y, variance_keep)?;
    let m = ux.t_matmul(&uy)?;
    let s = svd(&m)?.s;
    Ok(clamp_unit(s.iter().sum::<f64>() / s.len() as f64))
}

/// Default retained-variance fraction for SVCCA.
pub const DEFAULT_VARIANCE_KEEP: f64 = 0.99;

/// Scores two representations with `metric`.
pub fn score(metric: Metric, x: &Matrix, y: &Matrix) -> Result<f64> {
    match metric {
        Metric::Cka => linear_cka(x, y),
        Metric::Cosine => avg_cosine(x, y),
        Metric::Svcca => svcca(x, y, DEFAULT_VARIANCE_KEEP),
    }
}

/// Options for [`layer_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerMatrixOptions {
    pub metric: Metric,
    pub reduction: Reduction,
    /// Include the post-embedding stream as row/column 0.
    pub include_embedding: bool,
}

/// Layer × layer similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub metric: Metric,
    pub reduction: Reduction,
    pub model_hash_a: u64,
    pub model_hash_b: u64,
    pub dataset_checksum: u64,
    /// Capture index of row and column 0 (1 unless the embedding is included).
    pub first_layer: usize,
}

/// JSON sidecar of an exported [`SimilarityMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMeta {
    pub metric: Metric,
    pub reduction: Reduction,
    pub model_hash_a: String,
    pub model_hash_b: String,
    pub dataset_checksum: String,
    #[serde(default = "one")]
    pub first_layer: usize,
}

fn one() -> usize {
    1
}

impl SimilarityMatrix {
    pub fn is_square(&self) -> bool {
        self.values.rows() == self.values.cols()
    }

    /// FNV-1a over the little-endian bytes of the values.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        for v in self.values.as_slice() {
            h.update(&v.to_le_bytes());
        }
        h.finish()
    }

    pub fn meta(&self) -> SimilarityMeta {
        SimilarityMeta {
            metric: self.metric,
            reduction: self.reduction,
            model_hash_a: io::hex(self.model_hash_a),
            model_hash_b: io::hex(self.model_hash_b),
            dataset_checksum: io::hex(self.dataset_checksum),
            first_layer: self.first_layer,
        }
    }

    /// Writes the CSV and its `.meta.json` sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        io::write_matrix_csv(path, &self.values)?;
        io::write_json(io::sidecar_path(path), &self.meta())
    }

    /// Reads a CSV and, when present, its sidecar.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let values = io::read_matrix_csv(path)?;
        let side = io::sidecar_path(path);
        let meta: Option<SimilarityMeta> = if side.exists() {
            Some(io::read_json(&side)?)
        } else {
            None
        };
        let hex = |s: &str| io::parse_hex(s).unwrap_or(0);
        Ok(match meta {
            Some(m) => SimilarityMatrix {
                values,
                metric: m.metric,
                reduction: m.reduction,
                model_hash_a: hex(&m.model_hash_a),
                model_hash_b: hex(&m.model_hash_b),
                dataset_checksum: hex(&m.dataset_checksum),
                first_layer: m.first_layer,
            },
            None => SimilarityMatrix {
                values,
                metric: Metric::Cka,
                reduction: Reduction::Mean,
                model_hash_a: 0,
                model_hash_b: 0,
                dataset_checksum: 0,
                first_layer: 1,
            },
        })
    }
}

/// Scores every pair of layers of `a` (rows) and `b` (columns).
///
/// Both capture sets must come from the same dataset in the same order.
pub fn layer_matrix(
    a: &CaptureSet,
    b: &CaptureSet,
    opts: LayerMatrixOptions,
) -> Result<SimilarityMatrix> {
    if a.n_samples() != b.n_samples() {
        return Err(Error::SampleMismatch(format!(
            "{} vs {} samples",
            a.n_samples(),
            b.n_samples()
        )));
    }
    if a.dataset_checksum != b.dataset_checksum {
        return Err(Error::SampleMismatch(format!(
            "dataset checksums {:016x} and {:016x} differ",
            a.dataset_checksum, b.dataset_checksum
        )));
    }
    if opts.metric == Metric::Cosine && a.dim() != b.dim() {
        return Err(Error::shape("cosine needs equal model widths"));
    }
    let first = usize::from(!opts.include_embedding);
    let reps = |c: &CaptureSet| -> Vec<Matrix> {
        (first..c.n_layers())
            .into_par_iter()
            .map(|l| reduce(c, l, opts.reduction).values)
            .collect()
    };
    let ra = reps(a);
    let rb = if std::ptr::eq(a, b) { ra.clone() } else { reps(b) };
    let (la, lb) = (ra.len(), rb.len());
    let cells: Vec<Result<f64>> = (0..la * lb)
        .into_par_iter()
        .map(|idx| score(opts.metric, &ra[idx / lb], &rb[idx % lb]))
        .collect();
    let values = cells.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(SimilarityMatrix {
        values: Matrix::new(la, lb, values)?,
        metric: opts.metric,
        reduction: opts.reduction,
        model_hash_a: a.model_hash,
        model_hash_b: b.model_hash,
        dataset_checksum: a.dataset_checksum,
        first_layer: first,
    })
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
    fn cka_self_and_scale() {
        let x = random(16, 4, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        for c in [0.5, 3.0, -2.0] {
            assert!((linear_cka(&x, &x.scale(c)).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((hsic_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfectly_correlated_pair() {
        let x = Matrix::from_rows(&[&[1.0], &[-1.0]]);
        let y = Matrix::from_rows(&[&[2.0], &[-2.0]]);
        assert!((hsic_cka(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((linear_cka(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = Matrix::from_fn(5, 3, |_, c| c as f64);
        let y = random(5, 3, 2);
        assert!(matches!(
            linear_cka(&x, &y),
            Err(Error::DegenerateRepresentation(_))
        ));
        assert!(matches!(
            hsic_cka(&x, &y),
            Err(Error::DegenerateRepresentation(_))
        ));
        assert!(matches!(
            svcca(&x, &y, 0.99),
            Err(Error::DegenerateRepresentation(_))
        ));
    }

    #[test]
    fn sample_count_must_match() {
        let x = random(5, 3, 2);
        let y = random(6, 3, 3);
        assert!(matches!(linear_cka(&x, &y), Err(Error::SampleMismatch(_))));
    }

    #[test]
    fn cosine_examples() {
        let x = random(8, 5, 4);
        assert!((avg_cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((avg_cosine(&x, &x.scale(-1.0)).unwrap() + 1.0).abs() < 1e-12);
        let a = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let b = Matrix::from_rows(&[&[0.0, 3.0], &[-1.0, 0.0]]);
        assert!(avg_cosine(&a, &b).unwrap().abs() < 1e-12);
        let z = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(
            avg_cosine(&a, &z),
            Err(Error::ZeroVector { index: 1 })
        ));
    }

    #[test]
    fn svcca_self_is_one() {
        let x = random(20, 5, 8);
        assert!((svcca(&x, &x, 0.99).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(
            svcca(&x, &x, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }
}
