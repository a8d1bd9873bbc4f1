// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear probes and the discriminant-ratio localization map.
//!
//! A probe separates two classes, called `s` and `c`, with the closed-form
//! Fisher direction
//!
//! ```text
//! w ∝ (Σ_s + Σ_c + ρI)⁻¹ (μ_s − μ_c),     ρ = 1e-6 · tr(Σ_s + Σ_c) / D
//! ```
//!
//! normalized to unit length, and a threshold halfway between the projected
//! class means. The linear discriminant ratio of a cell is computed on the
//! projections `w·h`, grouped by the class the probe predicts:
//!
//! ```text
//! LDR = (μ_s − μ_c)² / (σ_s² + σ_c²)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CaptureSet;
use crate::numerics::{solve_spd_shifted, Matrix};
use crate::synthgen::Rng;

const RIDGE_SCALE: f64 = 1e-6;
const RIDGE_FLOOR: f64 = 1e-12;
const DEGENERATE: f64 = 1e-12;

/// Predicted side of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    S,
    C,
}

/// A fitted linear probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    /// Unit-norm direction.
    pub w: Vec<f64>,
    pub threshold: f64,
    /// Capture index the probe was fitted on.
    pub layer: usize,
    /// Token index, or `None` for token-averaged probes.
    pub token: Option<usize>,
    pub train_accuracy: f64,
}

impl Probe {
    pub fn project(&self, h: &[f64]) -> f64 {
        self.w.iter().zip(h).map(|(a, b)| a * b).sum()
    }
}

/// `S` when `w·h` exceeds the threshold, `C` otherwise (ties included).
pub fn predict(probe: &Probe, h: &[f64]) -> Side {
    if probe.project(h) > probe.threshold {
        Side::S
    } else {
        Side::C
    }
}

fn mean_and_cov(x: &Matrix) -> (Vec<f64>, Matrix) {
    let mu = x.column_means();
    let (n, d) = x.shape();
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mu[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mu[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mu, cov)
}

/// Fits the Fisher probe for class `s` rows `h_s` against class `c` rows
/// `h_c`. `ridge_scale` multiplies `tr(Σ)/D` to form the ridge.
pub fn fit_fisher_probe(h_s: &Matrix, h_c: &Matrix, ridge_scale: f64) -> Result<Probe> {
    if h_s.cols() != h_c.cols() {
        return Err(Error::shape("probe classes differ in width"));
    }
    if h_s.rows() < 2 || h_c.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "each class needs at least 2 samples, got {} and {}",
            h_s.rows(),
            h_c.rows()
        )));
    }
    let d = h_s.cols();
    let (mu_s, cov_s) = mean_and_cov(h_s);
    let (mu_c, cov_c) = mean_and_cov(h_c);
    let gap: Vec<f64> = mu_s.iter().zip(&mu_c).map(|(a, b)| a - b).collect();
    if gap.iter().map(|g| g * g).sum::<f64>().sqrt() < DEGENERATE {
        return Err(Error::DegenerateClasses);
    }
    let pooled = cov_s.add(&cov_c)?;
    let trace: f64 = (0..d).map(|i| pooled[(i, i)]).sum();
    let ridge = (ridge_scale * trace / d as f64).max(RIDGE_FLOOR);
    let rhs = Matrix::new(d, 1, gap)?;
    let w = solve_spd_shifted(&pooled, &rhs, ridge)?.into_vec();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE || !norm.is_finite() {
        return Err(Error::DegenerateClasses);
    }
    let w: Vec<f64> = w.iter().map(|v| v / norm).collect();
    let dot = |m: &[f64]| m.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let threshold = 0.5 * (dot(&mu_s) + dot(&mu_c));
    let mut probe = Probe {
        w,
        threshold,
        layer: 0,
        token: None,
        train_accuracy: 0.0,
    };
    probe.train_accuracy = accuracy(&probe, h_s, h_c);
    Ok(probe)
}

/// Fraction of rows classified on their own side.
pub fn accuracy(probe: &Probe, h_s: &Matrix, h_c: &Matrix) -> f64 {
    let hits = (0..h_s.rows())
        .filter(|&r| predict(probe, h_s.row(r)) == Side::S)
        .count()
        + (0..h_c.rows())
            .filter(|&r| predict(probe, h_c.row(r)) == Side::C)
            .count();
    hits as f64 / (h_s.rows() + h_c.rows()) as f64
}

/// Projected statistics of the two predicted groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub mu_s: f64,
    pub mu_c: f64,
    pub var_s: f64,
    pub var_c: f64,
    pub n_s: usize,
    pub n_c: usize,
}

/// Groups projections by side; population variances.
pub fn class_stats(projected: &[f64], sides: &[Side]) -> ClassStats {
    let moments = |side: Side| {
        let vals: Vec<f64> = projected
            .iter()
            .zip(sides)
            .filter(|(_, s)| **s == side)
            .map(|(v, _)| *v)
            .collect();
        if vals.is_empty() {
            return (0.0, 0.0, 0);
        }
        let n = vals.len() as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        (mu, var, vals.len())
    };
    let (mu_s, var_s, n_s) = moments(Side::S);
    let (mu_c, var_c, n_c) = moments(Side::C);
    ClassStats {
        mu_s,
        mu_c,
        var_s,
        var_c,
        n_s,
        n_c,
    }
}

/// A discriminant ratio, with `flagged` set when it was forced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ldr {
    pub value: f64,
    pub flagged: bool,
}

/// `(μ_s − μ_c)² / (σ_s² + σ_c²)`; zero and flagged when a group is empty
/// or the pooled variance vanishes.
pub fn ldr(stats: &ClassStats) -> Ldr {
    let pooled = stats.var_s + stats.var_c;
    if stats.n_s == 0 || stats.n_c == 0 || pooled < DEGENERATE {
        return Ldr {
            value: 0.0,
            flagged: true,
        };
    }
    Ldr {
        value: (stats.mu_s - stats.mu_c).powi(2) / pooled,
        flagged: false,
    }
}

/// Which labels form the two classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub label_s: u32,
    pub label_c: u32,
    pub ridge_scale: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            label_s: 1,
            label_c: 0,
            ridge_scale: RIDGE_SCALE,
        }
    }
}

/// Localization map over encoder layers × tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrMap {
    /// Min-max scaled over the whole map.
    pub values: Matrix,
    pub raw: Matrix,
    /// Row-major `L × N` flags of cells forced to zero.
    pub flagged: Vec<bool>,
    /// Row-major `L × N` probes; `None` where classes coincided.
    pub probes: Vec<Option<Probe>>,
}

/// Global min-max scaling; constant input maps to zeros.
pub fn min_max_scale(raw: &Matrix) -> Matrix {
    let lo = raw.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return Matrix::zeros(raw.rows(), raw.cols());
    }
    Matrix::from_fn(raw.rows(), raw.cols(), |i, j| (raw[(i, j)] - lo) / span)
}

fn split_by_label(m: &Matrix, labels: &[u32], opts: &ProbeOptions) -> Result<(Matrix, Matrix)> {
    let pick = |label: u32| -> Result<Matrix> {
        let rows: Vec<usize> = (0..m.rows()).filter(|&r| labels[r] == label).collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass(label.to_string()));
        }
        Ok(Matrix::from_fn(rows.len(), m.cols(), |r, c| m[(rows[r], c)]))
    };
    Ok((pick(opts.label_s)?, pick(opts.label_c)?))
}

fn check_labels(captures: &CaptureSet) -> Result<()> {
    if captures.labels.len() != captures.n_samples() {
        return Err(Error::InvalidArgument(
            "captures carry no labels for probing".into(),
        ));
    }
    Ok(())
}

/// Fits one probe per (encoder layer, token) cell and builds the scaled
/// LDR map.
pub fn ldr_map(captures: &CaptureSet, opts: &ProbeOptions) -> Result<LdrMap> {
    check_labels(captures)?;
    let layers = captures.encoder_layers();
    let tokens = captures.n_tokens();
    let cells: Vec<Result<(Ldr, Option<Probe>)>> = (0..layers * tokens)
        .into_par_iter()
        .map(|idx| {
            let (layer, token) = (idx / tokens + 1, idx % tokens);
            let rep = captures.token(layer, token);
            let (h_s, h_c) = split_by_label(&rep, &captures.labels, opts)?;
            let mut probe = match fit_fisher_probe(&h_s, &h_c, opts.ridge_scale) {
                Ok(p) => p,
                Err(Error::DegenerateClasses) => {
                    return Ok((
                        Ldr {
                            value: 0.0,
                            flagged: true,
                        },
                        None,
                    ))
                }
                Err(e) => return Err(e),
            };
            probe.layer = layer;
            probe.token = Some(token);
            let keep: Vec<usize> = (0..rep.rows())
                .filter(|&r| [opts.label_s, opts.label_c].contains(&captures.labels[r]))
                .collect();
            let projected: Vec<f64> = keep.iter().map(|&r| probe.project(rep.row(r))).collect();
            let sides: Vec<Side> = keep.iter().map(|&r| predict(&probe, rep.row(r))).collect();
            Ok((ldr(&class_stats(&projected, &sides)), Some(probe)))
        })
        .collect();
    let mut raw = Vec::with_capacity(cells.len());
    let mut flagged = Vec::with_capacity(cells.len());
    let mut probes = Vec::with_capacity(cells.len());
    for cell in cells {
        let (l, p) = cell?;
        raw.push(l.value);
        flagged.push(l.flagged);
        probes.push(p);
    }
    let raw = Matrix::new(layers, tokens, raw)?;
    Ok(LdrMap {
        values: min_max_scale(&raw),
        raw,
        flagged,
        probes,
    })
}

/// Token-averaged probes per capture index with held-out accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProbes {
    /// One per capture index `0..=L`.
    pub probes: Vec<Probe>,
    pub heldout_accuracy: Vec<f64>,
}

/// Samples with `index % 5 == 4` are held out.
pub fn is_heldout(index: usize) -> bool {
    index % 5 == 4
}

fn layer_probe(
    rep: &Matrix,
    labels: &[u32],
    layer: usize,
    opts: &ProbeOptions,
) -> Result<(Probe, f64)> {
    let rows = |held: bool| -> Vec<usize> {
        (0..rep.rows()).filter(|&r| is_heldout(r) == held).collect()
    };
    let sub = |idx: &[usize]| -> (Matrix, Vec<u32>) {
        (
            Matrix::from_fn(idx.len(), rep.cols(), |r, c| rep[(idx[r], c)]),
            idx.iter().map(|&r| labels[r]).collect(),
        )
    };
    let (train, train_labels) = sub(&rows(false));
    let (test, test_labels) = sub(&rows(true));
    let (s, c) = split_by_label(&train, &train_labels, opts)?;
    let mut probe = fit_fisher_probe(&s, &c, opts.ridge_scale)?;
    probe.layer = layer;
    let (ts, tc) = split_by_label(&test, &test_labels, opts)?;
    let acc = accuracy(&probe, &ts, &tc);
    Ok((probe, acc))
}

/// One probe per capture index on token-mean representations, trained on
/// four fifths of the samples and scored on the rest.
pub fn probe_token_averaged(captures: &CaptureSet, opts: &ProbeOptions) -> Result<LayerProbes> {
    check_labels(captures)?;
    let results: Vec<Result<(Probe, f64)>> = (0..captures.n_layers())
        .into_par_iter()
        .map(|l| layer_probe(&captures.token_mean(l), &captures.labels, l, opts))
        .collect();
    let mut probes = Vec::new();
    let mut heldout_accuracy = Vec::new();
    for r in results {
        let (p, a) = r?;
        probes.push(p);
        heldout_accuracy.push(a);
    }
    Ok(LayerProbes {
        probes,
        heldout_accuracy,
    })
}

/// Mean held-out accuracy per capture index over `shuffles` random label
/// permutations.
pub fn permutation_null(
    captures: &CaptureSet,
    opts: &ProbeOptions,
    shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_labels(captures)?;
    let reps: Vec<Matrix> = (0..captures.n_layers())
        .map(|l| captures.token_mean(l))
        .collect();
    let mut rng = Rng::new(seed);
    let perms: Vec<Vec<u32>> = (0..shuffles)
        .map(|_| {
            let mut labels = captures.labels.clone();
            rng.shuffle(&mut labels);
            labels
        })
        .collect();
    let mut out = Vec::with_capacity(reps.len());
    for (l, rep) in reps.iter().enumerate() {
        let accs: Vec<Result<f64>> = perms
            .par_iter()
            .map(|labels| layer_probe(rep, labels, l, opts).map(|(_, a)| a))
            .collect();
        let mut total = 0.0;
        for a in accs {
            total += a?;
        }
        out.push(total / shuffles.max(1) as f64);
    }
    Ok(out)
}

/// Stacks probes into `cells × (D + 1)` rows of `w` followed by the
/// threshold; missing probes become zero rows.
pub fn stack_probes(probes: &[Option<Probe>], dim: usize) -> Matrix {
    Matrix::from_fn(probes.len(), dim + 1, |r, c| match &probes[r] {
        Some(p) if c < dim => p.w[c],
        Some(p) => p.threshold,
        None => 0.0,
    })
}
