// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic univariate series: constant/trend lines and sinusoids,
//! `y(t) = a·sin(2πt/f) + m·t + b`, with every parameter drawn uniformly
//! from a per-class range.
//!
//! Generation is bit-reproducible across platforms: the only source of
//! randomness is a SplitMix64 stream, and each dataset row gets its own
//! child stream derived from `seed ^ row`, so rows can be rendered in any
//! order (or in parallel) without changing the output.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ArtifactKind, MetaSidecar};
use crate::numerics::Matrix;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to an arbitrary 64-bit word.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Child stream for dataset row `index`: state = SplitMix64(seed ⊕ index).
    pub fn for_row(seed: u64, index: u64) -> Self {
        Self::new(splitmix64(seed ^ index))
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `min + (max − min)·u`; a zero-width range returns `min` exactly.
    pub fn uniform(&mut self, min: f64, max: f64) -> f64 {
        let u = self.next_f64();
        min + (max - min) * u
    }

    /// Standard normal via Box–Muller (cosine branch only, two uniforms per
    /// draw) so the stream position never depends on cached state.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}

/// Concrete parameters of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternParams {
    /// amplitude
    pub a: f64,
    /// period in time steps; unused when `a == 0`
    pub f: f64,
    /// slope per step
    pub m: f64,
    /// intercept
    pub b: f64,
}

/// The six generator families.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PatternClass {
    Constant,
    IncreasingSlope,
    DecreasingSlope,
    SineConstant,
    SineIncreasing,
    SineDecreasing,
}

impl PatternClass {
    pub const ALL: [PatternClass; 6] = [
        PatternClass::Constant,
        PatternClass::IncreasingSlope,
        PatternClass::DecreasingSlope,
        PatternClass::SineConstant,
        PatternClass::SineIncreasing,
        PatternClass::SineDecreasing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternClass::Constant => "constant",
            PatternClass::IncreasingSlope => "increasing_slope",
            PatternClass::DecreasingSlope => "decreasing_slope",
            PatternClass::SineConstant => "sine_constant",
            PatternClass::SineIncreasing => "sine_increasing",
            PatternClass::SineDecreasing => "sine_decreasing",
        }
    }

    pub fn is_periodic(self) -> bool {
        matches!(
            self,
            PatternClass::SineConstant | PatternClass::SineIncreasing | PatternClass::SineDecreasing
        )
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = PatternClass::ALL.iter().map(|c| c.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown class '{s}', expected one of: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Closed interval sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }
}

/// Generator family plus its parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub class: PatternClass,
    pub amplitude: ParamRange,
    pub period: ParamRange,
    pub slope: ParamRange,
    pub intercept: ParamRange,
}

/// Period used by the desk-scale sine classes: four cycles in a 128-step window.
pub const DESK_PERIOD: f64 = 32.0;
/// Sine period for 512-step windows, also four cycles.
pub const LONG_WINDOW_PERIOD: f64 = 128.0;
/// Window length used throughout the desk-scale defaults.
pub const DESK_LENGTH: usize = 128;

impl GenSpec {
    /// Ranges with the given sine period.
    pub fn with_period(class: PatternClass, period: f64) -> Self {
        let intercept = ParamRange::new(-30.0, 30.0);
        let slope = match class {
            PatternClass::Constant | PatternClass::SineConstant => ParamRange::fixed(0.0),
            PatternClass::IncreasingSlope | PatternClass::SineIncreasing => {
                ParamRange::new(0.5, 1.0)
            }
            PatternClass::DecreasingSlope | PatternClass::SineDecreasing => {
                ParamRange::new(-1.0, -0.5)
            }
        };
        let (amplitude, period) = if class.is_periodic() {
            (ParamRange::fixed(50.0), ParamRange::fixed(period))
        } else {
            (ParamRange::fixed(0.0), ParamRange::fixed(0.0))
        };
        Self {
            class,
            amplitude,
            period,
            slope,
            intercept,
        }
    }

    /// Desk-scale ranges (sine period 32 for 128-step windows).
    pub fn desk(class: PatternClass) -> Self {
        Self::with_period(class, DESK_PERIOD)
    }

    /// Ranges for 512-step windows (sine period 128).
    pub fn long_window(class: PatternClass) -> Self {
        Self::with_period(class, LONG_WINDOW_PERIOD)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("amplitude", self.amplitude),
            ("period", self.period),
            ("slope", self.slope),
            ("intercept", self.intercept),
        ] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(Error::InvalidArgument(format!(
                    "{} {name} range [{}, {}] is invalid",
                    self.class, r.min, r.max
                )));
            }
        }
        Ok(())
    }
}

/// Draws one parameter set in the fixed order (a, f, m, b).
pub fn sample_params(spec: &GenSpec, rng: &mut Rng) -> PatternParams {
    let a = rng.uniform(spec.amplitude.min, spec.amplitude.max);
    let f = rng.uniform(spec.period.min, spec.period.max);
    let m = rng.uniform(spec.slope.min, spec.slope.max);
    let b = rng.uniform(spec.intercept.min, spec.intercept.max);
    PatternParams { a, f, m, b }
}

/// Evaluates the pattern at `t = 0..length`.
pub fn render(p: &PatternParams, length: usize) -> Result<Vec<f64>> {
    if p.a != 0.0 && (p.f.is_nan() || p.f <= 0.0) {
        return Err(Error::InvalidPeriod {
            amplitude: p.a,
            period: p.f,
        });
    }
    Ok((0..length)
        .map(|t| {
            let t = t as f64;
            let seasonal = if p.a == 0.0 {
                0.0
            } else {
                p.a * (2.0 * PI * t / p.f).sin()
            };
            seasonal + p.m * t + p.b
        })
        .collect())
}

/// Population z-score. Rows with standard deviation below `1e-12` map to
/// zeros and are reported as degenerate.
pub fn znormalize(series: &[f64]) -> (Vec<f64>, bool) {
    let n = series.len() as f64;
    if series.is_empty() {
        return (Vec::new(), true);
    }
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return (vec![0.0; series.len()], true);
    }
    (series.iter().map(|v| (v - mean) / sd).collect(), false)
}

/// A labelled batch of generated series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    /// `n×T`, one series per row.
    pub series: Matrix,
    /// Index into `classes` for each row.
    pub labels: Vec<u32>,
    pub params: Vec<PatternParams>,
    /// Class name for each label value.
    pub classes: Vec<PatternClass>,
    pub seed: u64,
    pub normalized: bool,
}

impl SeriesSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn length(&self) -> usize {
        self.series.cols()
    }

    /// FNV-1a over the on-disk representation (f32 LE series, then u32 LE
    /// labels), so a dataset and its reloaded copy share one checksum.
    pub fn checksum(&self) -> u64 {
        dataset_checksum(self.series.as_slice(), &self.labels)
    }

    /// Label value for a class name, if present.
    pub fn label_of(&self, class: PatternClass) -> Option<u32> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .map(|i| i as u32)
    }

    /// Rows whose label matches.
    pub fn rows_with_label(&self, label: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Keeps the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> SeriesSet {
        let t = self.length();
        let series = Matrix::from_fn(rows.len(), t, |r, c| self.series[(rows[r], c)]);
        SeriesSet {
            series,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            params: rows.iter().map(|&r| self.params[r]).collect(),
            classes: self.classes.clone(),
            seed: self.seed,
            normalized: self.normalized,
        }
    }
}

/// Checksum shared by [`SeriesSet`] and files loaded from disk.
pub fn dataset_checksum(series: &[f64], labels: &[u32]) -> u64 {
    let mut h = crate::io::Fnv1a::new();
    for v in series {
        h.update(&(*v as f32).to_le_bytes());
    }
    for l in labels {
        h.update(&l.to_le_bytes());
    }
    h.finish()
}

/// Generates `n_per_class` rows per spec, class-major (all rows of
/// `specs[0]` first). Row `r` uses [`Rng::for_row`]`(seed, r)`.
pub fn make_dataset(
    specs: &[GenSpec],
    n_per_class: usize,
    length: usize,
    seed: u64,
    normalize: bool,
) -> Result<SeriesSet> {
    if n_per_class == 0 || specs.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset needs at least one class and one row per class".into(),
        ));
    }
    if length == 0 {
        return Err(Error::InvalidArgument("series length must be >= 1".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let n = n_per_class * specs.len();
    let mut data = Vec::with_capacity(n * length);
    let mut labels = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for (class_idx, spec) in specs.iter().enumerate() {
        for i in 0..n_per_class {
            let row = (class_idx * n_per_class + i) as u64;
            let mut rng = Rng::for_row(seed, row);
            let p = sample_params(spec, &mut rng);
            let mut values = render(&p, length)?;
            if normalize {
                values = znormalize(&values).0;
            }
            data.extend_from_slice(&values);
            labels.push(class_idx as u32);
            params.push(p);
        }
    }
    Ok(SeriesSet {
        series: Matrix::new(n, length, data)?,
        labels,
        params,
        classes: specs.iter().map(|s| s.class).collect(),
        seed,
        normalized: normalize,
    })
}

/// Seed of the default corpus.
pub const DEFAULT_SEED: u64 = 7;

/// The default two-class corpus: 512 constant and 512 sine-constant rows of
/// length 128, seed 7, raw (not z-normalized).
pub fn default_corpus() -> Result<SeriesSet> {
    make_dataset(
        &[
            GenSpec::desk(PatternClass::Constant),
            GenSpec::desk(PatternClass::SineConstant),
        ],
        512,
        DESK_LENGTH,
        DEFAULT_SEED,
        false,
    )
}

impl SeriesSet {
    /// Writes the `n × T` tensor; labels, classes, seed and parameters go to
    /// the sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dims = vec![self.len() as u64, self.length() as u64];
        let values: Vec<f32> = self.series.as_slice().iter().map(|&v| v as f32).collect();
        io::write_tensor(path, &dims, &values)?;
        let mut meta = MetaSidecar::new(ArtifactKind::Dataset, dims);
        meta.dataset_checksum = Some(io::hex(self.checksum()));
        meta.labels = Some(self.labels.clone());
        let json = |v: serde_json::Result<serde_json::Value>| v.expect("plain data serializes");
        meta.extra.insert("classes".into(), json(serde_json::to_value(&self.classes)));
        meta.extra.insert("seed".into(), self.seed.into());
        meta.extra.insert("normalized".into(), self.normalized.into());
        meta.extra.insert("params".into(), json(serde_json::to_value(&self.params)));
        io::write_json(io::sidecar_path(path), &meta)
    }

    /// Reads a dataset and verifies its checksum.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: MetaSidecar = io::read_json(io::sidecar_path(path))?;
        let (dims, values) = io::read_tensor(path)?;
        if meta.kind != ArtifactKind::Dataset || dims.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "{} is not a dataset file",
                path.display()
            )));
        }
        let (n, t) = (dims[0] as usize, dims[1] as usize);
        let field = |key: &str| meta.extra.get(key).cloned().unwrap_or_default();
        fn parse<T: serde::de::DeserializeOwned>(
            path: &Path,
            value: serde_json::Value,
        ) -> Result<T> {
            serde_json::from_value(value).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })
        }
        let set = SeriesSet {
            series: Matrix::new(n, t, values.iter().map(|&v| f64::from(v)).collect())?,
            labels: meta.labels.clone().unwrap_or_default(),
            params: parse(path, field("params"))?,
            classes: parse(path, field("classes"))?,
            seed: field("seed").as_u64().unwrap_or(0),
            normalized: field("normalized").as_bool().unwrap_or(false),
        };
        if set.labels.len() != n || set.params.len() != n {
            return Err(Error::shape("dataset sidecar does not match the tensor"));
        }
        if let Some(expected) = meta.dataset_checksum() {
            if expected != set.checksum() {
                return Err(Error::InvalidArgument(format!(
                    "{}: checksum {:016x} does not match recorded {expected:016x}",
                    path.display(),
                    set.checksum()
                )));
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of SplitMix64 seeded with 0 (reference C implementation).
        let mut r = Rng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = Rng::new(42);
        for _ in 0..1000 {
            let u = r.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
        assert_eq!(r.uniform(3.5, 3.5), 3.5);
    }

    #[test]
    fn sample_params_fixed_cases() {
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            let p = sample_params(&GenSpec::long_window(PatternClass::Constant), &mut rng);
            assert_eq!((p.a, p.f, p.m), (0.0, 0.0, 0.0));
            assert!((-30.0..=30.0).contains(&p.b));
            let p = sample_params(&GenSpec::long_window(PatternClass::SineConstant), &mut rng);
            assert_eq!((p.a, p.f, p.m), (50.0, 128.0, 0.0));
            assert!((-30.0..=30.0).contains(&p.b));
            let p = sample_params(&GenSpec::long_window(PatternClass::DecreasingSlope), &mut rng);
            assert!((-1.0..=-0.5).contains(&p.m));
        }
    }

    #[test]
    fn sample_order_is_a_f_m_b() {
        let spec = GenSpec {
            class: PatternClass::SineIncreasing,
            amplitude: ParamRange::new(0.0, 1.0),
            period: ParamRange::new(10.0, 11.0),
            slope: ParamRange::new(0.0, 1.0),
            intercept: ParamRange::new(0.0, 1.0),
        };
        let mut a = Rng::new(9);
        let mut b = Rng::new(9);
        let p = sample_params(&spec, &mut a);
        assert_eq!(p.a, b.next_f64());
        assert_eq!(p.f, 10.0 + b.next_f64());
        assert_eq!(p.m, b.next_f64());
        assert_eq!(p.b, b.next_f64());
    }

    #[test]
    fn render_examples() {
        let c = PatternParams {
            a: 0.0,
            f: 0.0,
            m: 0.0,
            b: 5.0,
        };
        assert_eq!(render(&c, 4).unwrap(), vec![5.0; 4]);

        let s = PatternParams {
            a: 1.0,
            f: 4.0,
            m: 0.0,
            b: 0.0,
        };
        let v = render(&s, 4).unwrap();
        for (got, want) in v.iter().zip([0.0, 1.0, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-15);
        }

        let p = PatternParams {
            a: 50.0,
            f: 128.0,
            m: 0.75,
            b: 10.0,
        };
        let v = render(&p, 128).unwrap();
        // 50·sin(π/2) + 0.75·32 + 10
        assert!((v[32] - 84.0).abs() < 1e-12);
    }

    #[test]
    fn render_rejects_bad_period() {
        let p = PatternParams {
            a: 2.0,
            f: 0.0,
            m: 0.0,
            b: 0.0,
        };
        assert!(matches!(render(&p, 8), Err(Error::InvalidPeriod { .. })));
    }

    #[test]
    fn znormalize_examples() {
        let (z, deg) = znormalize(&[1.0, 2.0, 3.0]);
        assert!(!deg);
        let k = (1.5f64).sqrt();
        assert!((z[0] + k).abs() < 1e-12 && z[1].abs() < 1e-15 && (z[2] - k).abs() < 1e-12);

        let (z, deg) = znormalize(&[5.0; 4]);
        assert!(deg);
        assert_eq!(z, vec![0.0; 4]);

        let sine = render(
            &PatternParams {
                a: 50.0,
                f: 128.0,
                m: 0.0,
                b: 3.0,
            },
            128,
        )
        .unwrap();
        let (z, _) = znormalize(&sine);
        let mean = z.iter().sum::<f64>() / 128.0;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 128.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let specs = [
            GenSpec::desk(PatternClass::Constant),
            GenSpec::desk(PatternClass::SineConstant),
        ];
        let a = make_dataset(&specs, 512, 128, 7, false).unwrap();
        assert_eq!(a.len(), 1024);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 512);
        let b = make_dataset(&specs, 512, 128, 7, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = make_dataset(&specs, 512, 128, 8, false).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn normalized_rows_are_standardized() {
        let specs = [
            GenSpec::desk(PatternClass::Constant),
            GenSpec::desk(PatternClass::SineIncreasing),
        ];
        let d = make_dataset(&specs, 8, 64, 3, true).unwrap();
        for r in 8..16 {
            let row = d.series.row(r);
            let mean = row.iter().sum::<f64>() / 64.0;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
            assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6);
        }
        assert!(d.series.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_names_round_trip() {
        for c in PatternClass::ALL {
            assert_eq!(c.name().parse::<PatternClass>().unwrap(), c);
        }
        let err = "square".parse::<PatternClass>().unwrap_err().to_string();
        assert!(err.contains("sine_constant"));
    }
}
