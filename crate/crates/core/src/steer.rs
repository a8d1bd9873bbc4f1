// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation steering.
//!
//! A steering matrix holds one `N × D` slice per encoder layer,
//! `S_i = stat(target_i) − stat(source_i)` with the statistic taken
//! element-wise over samples. During a forward pass the stream after layer
//! `i` becomes `h_i + λ·S_i`, on every token or on a single token.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactKind, MetaSidecar};
use crate::model::CaptureSet;
use crate::numerics::{pca, Matrix, Pca};

/// Element-wise statistic over samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    #[default]
    Median,
    Mean,
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stat::Median => "median",
            Stat::Mean => "mean",
        })
    }
}

/// Per-layer steering slices for layers `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix {
    layers: usize,
    tokens: usize,
    dim: usize,
    values: Vec<f32>,
    pub stat: Stat,
    pub source: String,
    pub target: String,
    pub model_hash: u64,
    pub dataset_checksum: u64,
}

impl SteeringMatrix {
    /// `values` is `L × N × D`, layer 1 first.
    pub fn from_parts(
        dims: [usize; 3],
        values: Vec<f32>,
        stat: Stat,
        source: impl Into<String>,
        target: impl Into<String>,
        model_hash: u64,
        dataset_checksum: u64,
    ) -> Result<Self> {
        let [layers, tokens, dim] = dims;
        if values.len() != layers * tokens * dim {
            return Err(Error::shape(format!(
                "steering dims {dims:?} need {} values, got {}",
                layers * tokens * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("steering matrix"));
        }
        Ok(Self {
            layers,
            tokens,
            dim,
            values,
            stat,
            source: source.into(),
            target: target.into(),
            model_hash,
            dataset_checksum,
        })
    }

    /// `[L, N, D]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.layers, self.tokens, self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    /// `N × D` slice for 1-based `layer`.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let block = self.tokens * self.dim;
        &self.values[(layer - 1) * block..layer * block]
    }

    pub(crate) fn check_dims(&self, layers: usize, tokens: usize, dim: usize) -> Result<()> {
        if self.dims() != [layers, tokens, dim] {
            return Err(Error::shape(format!(
                "steering matrix is {:?}, model needs {:?}",
                self.dims(),
                [layers, tokens, dim]
            )));
        }
        Ok(())
    }

    /// Writes the tensor and its sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dims: Vec<u64> = self.dims().iter().map(|&d| d as u64).collect();
        io::write_tensor(path, &dims, &self.values)?;
        let mut meta = MetaSidecar::new(ArtifactKind::Steering, dims);
        meta.model_hash = Some(io::hex(self.model_hash));
        meta.dataset_checksum = Some(io::hex(self.dataset_checksum));
        meta.extra.insert("stat".into(), serde_json::to_value(self.stat).expect("stat"));
        meta.extra.insert("source".into(), self.source.clone().into());
        meta.extra.insert("target".into(), self.target.clone().into());
        io::write_json(io::sidecar_path(path), &meta)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (dims, values) = io::read_tensor(path)?;
        let meta: MetaSidecar = io::read_json(io::sidecar_path(path))?;
        if dims.len() != 3 {
            return Err(Error::shape(format!("steering tensor has {} dims", dims.len())));
        }
        let text = |key: &str| {
            meta.extra
                .get(key)
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string()
        };
        let stat = meta
            .extra
            .get("stat")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        Self::from_parts(
            [dims[0] as usize, dims[1] as usize, dims[2] as usize],
            values,
            stat,
            text("source"),
            text("target"),
            meta.model_hash().unwrap_or(0),
            meta.dataset_checksum().unwrap_or(0),
        )
    }
}

fn median(values: &mut [f32]) -> f64 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        f64::from(values[n / 2])
    } else {
        0.5 * (f64::from(values[n / 2 - 1]) + f64::from(values[n / 2]))
    }
}

/// Element-wise statistic over samples of capture index `layer`.
fn layer_stat(c: &CaptureSet, layer: usize, stat: Stat) -> Vec<f64> {
    let block = c.n_tokens() * c.dim();
    let n = c.n_samples();
    let slice = c.layer(layer);
    let mut column = vec![0.0f32; n];
    (0..block)
        .map(|cell| {
            for (s, v) in column.iter_mut().enumerate() {
                *v = slice[s * block + cell];
            }
            match stat {
                Stat::Median => median(&mut column),
                Stat::Mean => column.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

/// `S_i = stat(target) − stat(source)` for every encoder layer.
pub fn derive_steering(
    target: &CaptureSet,
    source: &CaptureSet,
    stat: Stat,
    target_name: &str,
    source_name: &str,
) -> Result<SteeringMatrix> {
    if target.model_hash != source.model_hash {
        return Err(Error::ModelMismatch {
            expected: target.model_hash,
            found: source.model_hash,
        });
    }
    let (td, sd) = (target.dims(), source.dims());
    if (td[0], td[2], td[3]) != (sd[0], sd[2], sd[3]) {
        return Err(Error::shape(format!(
            "capture dims {td:?} and {sd:?} differ"
        )));
    }
    if target.n_samples() == 0 {
        return Err(Error::EmptyClass(target_name.to_string()));
    }
    if source.n_samples() == 0 {
        return Err(Error::EmptyClass(source_name.to_string()));
    }
    let layers = target.encoder_layers();
    let per_layer: Vec<Vec<f32>> = {
        use rayon::prelude::*;
        (1..=layers)
            .into_par_iter()
            .map(|l| {
                let t = layer_stat(target, l, stat);
                let s = layer_stat(source, l, stat);
                t.iter().zip(&s).map(|(a, b)| (a - b) as f32).collect()
            })
            .collect()
    };
    SteeringMatrix::from_parts(
        [layers, target.n_tokens(), target.dim()],
        per_layer.concat(),
        stat,
        source_name,
        target_name,
        target.model_hash,
        target.dataset_checksum,
    )
}

/// Which tokens receive the steering update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenMode {
    #[default]
    AllTokens,
    /// One token; `None` means the last token.
    SingleToken(Option<usize>),
}

/// Which layers receive the steering update.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSelection {
    #[default]
    All,
    /// 1-based layer indices.
    Only(Vec<usize>),
}

/// Lambda range outside which a warning is emitted.
pub const RECOMMENDED_LAMBDA: (f64, f64) = (0.1, 2.0);

/// Steering strength and placement.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerConfig {
    pub lambda: f64,
    pub mode: TokenMode,
    pub layers: LayerSelection,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mode: TokenMode::AllTokens,
            layers: LayerSelection::All,
        }
    }
}

impl SteerConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    /// Checks lambda, token and layer indices against a model shape.
    pub fn validate(&self, layers: usize, tokens: usize) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda {} is not finite",
                self.lambda
            )));
        }
        if let TokenMode::SingleToken(Some(j)) = self.mode {
            if j >= tokens {
                return Err(Error::TokenOutOfRange { token: j, tokens });
            }
        }
        if let LayerSelection::Only(sel) = &self.layers {
            if let Some(&l) = sel.iter().find(|&&l| l == 0 || l > layers) {
                return Err(Error::InvalidArgument(format!(
                    "steering layer {l} outside 1..={layers}"
                )));
            }
        }
        Ok(())
    }

    /// A message when lambda lies outside the recommended range.
    pub fn lambda_warning(&self) -> Option<String> {
        let (lo, hi) = RECOMMENDED_LAMBDA;
        let mag = self.lambda.abs();
        (mag != 0.0 && !(lo..=hi).contains(&mag)).then(|| {
            format!(
                "lambda {} is outside the recommended magnitude range [{lo}, {hi}]",
                self.lambda
            )
        })
    }

    /// Whether 1-based `layer` is steered.
    pub fn applies_to(&self, layer: usize) -> bool {
        match &self.layers {
            LayerSelection::All => true,
            LayerSelection::Only(sel) => sel.contains(&layer),
        }
    }
}

/// Adds `λ·s` to `h` (both `N × D`) in place. Zero lambda leaves `h`
/// untouched.
pub(crate) fn apply_in_place(h: &mut [f32], s: &[f32], cfg: &SteerConfig, tokens: usize, dim: usize) {
    if cfg.lambda == 0.0 {
        return;
    }
    let lambda = cfg.lambda as f32;
    let range = match cfg.mode {
        TokenMode::AllTokens => 0..tokens * dim,
        TokenMode::SingleToken(j) => {
            let j = j.unwrap_or(tokens - 1);
            j * dim..(j + 1) * dim
        }
    };
    for (x, v) in h[range.clone()].iter_mut().zip(&s[range]) {
        *x += lambda * v;
    }
}

/// `h + λ·s` on all tokens or on one, as a new buffer.
pub fn steer_activations(
    h: &[f32],
    s: &[f32],
    cfg: &SteerConfig,
    tokens: usize,
    dim: usize,
) -> Result<Vec<f32>> {
    if h.len() != tokens * dim || s.len() != tokens * dim {
        return Err(Error::shape(format!(
            "steering needs {tokens}x{dim} inputs, got {} and {}",
            h.len(),
            s.len()
        )));
    }
    if let TokenMode::SingleToken(Some(j)) = cfg.mode {
        if j >= tokens {
            return Err(Error::TokenOutOfRange { token: j, tokens });
        }
    }
    let mut out = h.to_vec();
    apply_in_place(&mut out, s, cfg, tokens, dim);
    Ok(out)
}

/// `(1 − β)·a + β·b`. The endpoints return copies of the inputs.
pub fn compose(a: &SteeringMatrix, b: &SteeringMatrix, beta: f64) -> Result<SteeringMatrix> {
    if a.model_hash != b.model_hash {
        return Err(Error::ModelMismatch {
            expected: a.model_hash,
            found: b.model_hash,
        });
    }
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "cannot compose {:?} with {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    if beta == 0.0 {
        return Ok(a.clone());
    }
    if beta == 1.0 {
        return Ok(b.clone());
    }
    let (wa, wb) = ((1.0 - beta) as f32, beta as f32);
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| wa * x + wb * y)
        .collect();
    SteeringMatrix::from_parts(
        a.dims(),
        values,
        a.stat,
        a.source.clone(),
        format!("{}+{}", a.target, b.target),
        a.model_hash,
        a.dataset_checksum,
    )
}

/// Reverses the direction: values negated, source and target swapped.
pub fn negate(s: &SteeringMatrix) -> SteeringMatrix {
    SteeringMatrix {
        values: s.values.iter().map(|v| -v).collect(),
        source: s.target.clone(),
        target: s.source.clone(),
        ..s.clone()
    }
}

/// One steered sample in the displacement report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementRow {
    pub sample: usize,
    pub pre_x: f64,
    pub pre_y: f64,
    pub post_x: f64,
    pub post_y: f64,
    /// Distance to the reference centroid in PCA coordinates.
    pub pca_before: f64,
    pub pca_after: f64,
    /// Distance to the reference centroid in token-mean activation space.
    pub raw_before: f64,
    pub raw_after: f64,
}

/// PCA view of how steering moved a set of samples.
#[derive(Debug, Clone)]
pub struct DisplacementReport {
    pub layer: usize,
    pub rows: Vec<DisplacementRow>,
    /// Reference centroid in PCA coordinates.
    pub centroid: Vec<f64>,
    pub pca: Pca,
}

impl DisplacementReport {
    /// Fraction of rows closer to the centroid after steering, in PCA space
    /// and in activation space.
    pub fn closer_fractions(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let pca = self.rows.iter().filter(|r| r.pca_after < r.pca_before).count() as f64 / n;
        let raw = self.rows.iter().filter(|r| r.raw_after < r.raw_before).count() as f64 / n;
        (pca, raw)
    }

    /// Header plus one line per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sample,pre_x,pre_y,post_x,post_y,pca_dist_before,pca_dist_after,raw_dist_before,raw_dist_after\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}\n",
                r.sample,
                r.pre_x,
                r.pre_y,
                r.post_x,
                r.post_y,
                r.pca_before,
                r.pca_after,
                r.raw_before,
                r.raw_after
            ));
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Projects `before` and `after` (same samples, unsteered and steered) at
/// capture index `layer` into two principal components fitted on the union
/// of `before` and the `reference` class, and measures each sample's
/// distance to the reference centroid.
pub fn steering_displacement_report(
    before: &CaptureSet,
    after: &CaptureSet,
    reference: &CaptureSet,
    layer: usize,
) -> Result<DisplacementReport> {
    if before.dims() != after.dims() {
        return Err(Error::shape(format!(
            "before {:?} and after {:?} differ",
            before.dims(),
            after.dims()
        )));
    }
    if reference.dim() != before.dim() || layer >= before.n_layers() || layer >= reference.n_layers() {
        return Err(Error::shape("reference captures do not match"));
    }
    let pre = before.token_mean(layer);
    let post = after.token_mean(layer);
    let refs = reference.token_mean(layer);
    let mut union = pre.as_slice().to_vec();
    union.extend_from_slice(refs.as_slice());
    let union = Matrix::new(pre.rows() + refs.rows(), pre.cols(), union)?;
    let fit = pca(&union, 2)?;
    let raw_centroid = refs.column_means();
    let centroid = fit.transform(&refs)?.column_means();
    let pre_p = fit.transform(&pre)?;
    let post_p = fit.transform(&post)?;
    let rows = (0..pre.rows())
        .map(|s| DisplacementRow {
            sample: s,
            pre_x: pre_p[(s, 0)],
            pre_y: pre_p[(s, 1)],
            post_x: post_p[(s, 0)],
            post_y: post_p[(s, 1)],
            pca_before: dist(pre_p.row(s), &centroid),
            pca_after: dist(post_p.row(s), &centroid),
            raw_before: dist(pre.row(s), &raw_centroid),
            raw_after: dist(post.row(s), &raw_centroid),
        })
        .collect();
    Ok(DisplacementReport {
        layer,
        rows,
        centroid,
        pca: fit,
    })
}
