// SPDX-License-Identifier: MIT OR Apache-2.0

//! Properties of the seeded default model on the default corpus, including
//! committed golden values.

mod common;

use std::path::Path;
use std::sync::OnceLock;

use ts_lens::blocks::{self, Selection};
use ts_lens::io;
use ts_lens::model::{self, CaptureSet, ModelConfig, SkipMask, Steer, Weights};
use ts_lens::numerics::Matrix;
use ts_lens::probe::{self, ProbeOptions};
use ts_lens::similarity::{self, LayerMatrixOptions};
use ts_lens::steer::{self, LayerSelection, SteerConfig, Stat};
use ts_lens::synthgen::{self, SeriesSet};

const GOLDEN_DATASET: &str = "e4d31926d8e1f47d";
const GOLDEN_MODEL: &str = "d5a23f4ae8aecb45";
const GOLDEN_STEERING: &str = "a0b1190de4ede8cb";
/// Reference readout MSE is 2.757e-4.
const READOUT_MSE_CEILING: f64 = 3e-4;

struct Run {
    weights: Weights,
    corpus: SeriesSet,
    captures: CaptureSet,
}

fn run() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    CELL.get_or_init(|| {
        let weights = model::init_model(&ModelConfig::default()).unwrap();
        let corpus = synthgen::default_corpus().unwrap();
        let captures = model::capture(&weights, &corpus, &SkipMask::none(8), None).unwrap();
        Run {
            weights,
            corpus,
            captures,
        }
    })
}

fn token_mean(m: &Matrix) -> Vec<f64> {
    m.column_means()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn golden_hashes() {
    let r = run();
    assert_eq!(io::hex(r.corpus.checksum()), GOLDEN_DATASET);
    assert_eq!(io::hex(r.weights.model_hash()), GOLDEN_MODEL);
    let other = model::init_model(&ModelConfig {
        init_seed: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    assert_ne!(other.model_hash(), r.weights.model_hash());
}

#[test]
fn captures_are_finite_with_expected_shape() {
    let c = &run().captures;
    assert_eq!(c.dims(), [9, 1024, 16, 64]);
    assert!(c.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn zeroed_layer_matches_skipped_layer() {
    let r = run();
    let rows: Vec<usize> = (0..r.corpus.len()).step_by(32).collect();
    let batch = r.corpus.subset(&rows).series;
    let plan = blocks::PruningPlan {
        total_layers: 8,
        skipped: vec![3],
        retained_edges: Vec::new(),
    };
    let skip = model::forward(&r.weights, &batch, &SkipMask::from_layers(8, &[3]).unwrap(), None, None)
        .unwrap();
    let zeroed = model::zero_block_weights(&r.weights, &plan).unwrap();
    let zero = model::forward(&zeroed, &batch, &SkipMask::none(8), None, None).unwrap();
    let diff = skip
        .captures
        .final_layer()
        .iter()
        .zip(zero.captures.final_layer())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-5, "{diff}");
}

#[test]
fn readout_fits_below_golden_mse() {
    let r = run();
    let head = model::fit_readout(r.captures.final_layer(), 64, &r.corpus.series, 1.0).unwrap();
    assert!(head.train_mse < READOUT_MSE_CEILING, "{}", head.train_mse);
}

#[test]
fn median_sine_activations_decode_to_sine_frequency() {
    let r = run();
    let head = model::fit_readout(r.captures.final_layer(), 64, &r.corpus.series, 1.0).unwrap();
    let sines = r.captures.with_label(1);
    let s = steer::derive_steering(&sines, &sines, Stat::Median, "a", "b").unwrap();
    assert!(s.as_slice().iter().all(|&v| v == 0.0));
    // element-wise median of the final layer, computed here
    let (n, cell) = (sines.n_samples(), 16 * 64);
    let fin = sines.final_layer();
    let median: Vec<f32> = (0..cell)
        .map(|k| {
            let mut col: Vec<f32> = (0..n).map(|i| fin[i * cell + k]).collect();
            col.sort_by(f32::total_cmp);
            ((f64::from(col[n / 2 - 1]) + f64::from(col[n / 2])) / 2.0) as f32
        })
        .collect();
    let out = model::decode(&head, &median, 1).unwrap();
    assert_eq!(common::fft_dominant_bin(out.row(0)), 4);
}

#[test]
fn adjacent_layers_more_similar_than_first_and_last() {
    let r = run();
    let sim = similarity::layer_matrix(&r.captures, &r.captures, LayerMatrixOptions::default()).unwrap();
    let l = sim.values.rows();
    let adjacent = (0..l - 1).map(|i| sim.values[(i, i + 1)]).sum::<f64>() / (l - 1) as f64;
    assert!(adjacent > sim.values[(0, l - 1)]);
}

#[test]
fn pruned_readout_stays_within_twice_unpruned_mse() {
    let r = run();
    let sim = similarity::layer_matrix(&r.captures, &r.captures, LayerMatrixOptions::default()).unwrap();
    let found = blocks::identify_blocks(&sim, blocks::DEFAULT_TAU, blocks::DEFAULT_MIN_SIZE).unwrap();
    let plan = blocks::plan_prune(&found, 8, Selection::All).unwrap();
    assert!(!plan.skipped.is_empty());
    let mask = SkipMask::from_plan(&plan).unwrap();
    let pruned = model::capture(&r.weights, &r.corpus, &mask, None).unwrap();
    let full = model::fit_readout(r.captures.final_layer(), 64, &r.corpus.series, 1.0).unwrap();
    let cut = model::fit_readout(pruned.final_layer(), 64, &r.corpus.series, 1.0).unwrap();
    assert!(cut.train_mse.is_finite());
    assert!(cut.train_mse <= 2.0 * full.train_mse, "{} vs {}", cut.train_mse, full.train_mse);
}

#[test]
fn ldr_map_matches_golden() {
    let r = run();
    let map = probe::ldr_map(&r.captures, &ProbeOptions::default()).unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ldr_map.csv");
    let golden = io::read_matrix_csv(path).unwrap();
    assert_eq!(golden.shape(), map.values.shape());
    assert!(map.values.sub(&golden).unwrap().max_abs() < 1e-6);
    assert_eq!(map.values.max_abs(), 1.0);
}

#[test]
fn steering_matrix_matches_golden() {
    let r = run();
    let s = steer::derive_steering(
        &r.captures.with_label(1),
        &r.captures.with_label(0),
        Stat::Median,
        "sine_constant",
        "constant",
    )
    .unwrap();
    let bytes: Vec<u8> = s.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(io::hex(io::fnv1a(&bytes)), GOLDEN_STEERING);
}

fn steered(r: &Run, batch: &Matrix, m: &steer::SteeringMatrix, cfg: &SteerConfig) -> CaptureSet {
    model::forward(
        &r.weights,
        batch,
        &SkipMask::none(8),
        Some(Steer {
            matrix: m,
            config: cfg,
        }),
        None,
    )
    .unwrap()
    .captures
}

fn sine_matrix(r: &Run) -> steer::SteeringMatrix {
    steer::derive_steering(
        &r.captures.with_label(1),
        &r.captures.with_label(0),
        Stat::Median,
        "sine_constant",
        "constant",
    )
    .unwrap()
}

#[test]
fn injection_adds_exactly_lambda_times_layer_slice() {
    let r = run();
    let s = sine_matrix(r);
    let rows = r.corpus.rows_with_label(0)[..8].to_vec();
    let batch = r.corpus.subset(&rows).series;
    let plain = model::forward(&r.weights, &batch, &SkipMask::none(8), None, None)
        .unwrap()
        .captures;
    let cfg = SteerConfig {
        lambda: 0.7,
        layers: LayerSelection::Only(vec![8]),
        ..SteerConfig::default()
    };
    let out = steered(r, &batch, &s, &cfg);
    for i in 0..rows.len() {
        let want = steer::steer_activations(plain.sample(8, i), s.layer(8), &cfg, 16, 64).unwrap();
        assert_eq!(out.sample(8, i), &want[..]);
        assert_eq!(out.sample(7, i), plain.sample(7, i));
    }
    let first = steered(r, &batch, &s, &SteerConfig::with_lambda(0.7));
    for i in 0..rows.len() {
        let want = steer::steer_activations(
            plain.sample(1, i),
            s.layer(1),
            &SteerConfig::with_lambda(0.7),
            16,
            64,
        )
        .unwrap();
        assert_eq!(first.sample(1, i), &want[..]);
    }
}

#[test]
fn negated_matrix_moves_targets_toward_source_centroid() {
    let r = run();
    let s = sine_matrix(r);
    let back = steer::negate(&s);
    assert_eq!((back.source.as_str(), back.target.as_str()), ("sine_constant", "constant"));
    let source_centroid = token_mean(&r.captures.with_label(0).token_mean(8));
    let rows: Vec<usize> = r.corpus.rows_with_label(1).into_iter().step_by(8).collect();
    let batch = r.corpus.subset(&rows).series;
    let before = model::forward(&r.weights, &batch, &SkipMask::none(8), None, None)
        .unwrap()
        .captures;
    let after = steered(r, &batch, &back, &SteerConfig::with_lambda(1.0));
    let (pre, post) = (before.token_mean(8), after.token_mean(8));
    let d_before = dist(&token_mean(&pre), &source_centroid);
    let d_after = dist(&token_mean(&post), &source_centroid);
    assert!(d_after < d_before, "{d_after} >= {d_before}");
}
