// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use proptest::prelude::*;
use ts_lens::blocks::{self, Block, BlockSet, Selection};
use ts_lens::io;
use ts_lens::numerics::{self, Matrix};
use ts_lens::probe::{self, Probe, Side};
use ts_lens::similarity::{self, Metric, Reduction, SimilarityMatrix};
use ts_lens::synthgen::{self, GenSpec, PatternClass, Rng};

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=16, 1usize..=16, any::<u64>()).prop_map(|(r, c, seed)| common::random(r, c, seed))
}

/// Tall enough that centering leaves a non-degenerate representation.
fn representation() -> impl Strategy<Value = Matrix> {
    (6usize..=40, 1usize..=12, any::<u64>()).prop_map(|(r, c, seed)| common::random(r, c, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn svd_reconstructs_with_orthonormal_u(m in matrix()) {
        let s = numerics::svd(&m).unwrap();
        let rel = s.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
        prop_assert!(rel < 1e-8);
        let utu = s.u.t_matmul(&s.u).unwrap();
        let k = utu.rows();
        // columns for exactly-zero singular values are left at zero
        let live = s.s.iter().filter(|v| **v > 0.0).count();
        for i in 0..live.min(k) {
            for j in 0..live.min(k) {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((utu[(i, j)] - want).abs() < 1e-8);
            }
        }
        prop_assert!(s.s.windows(2).all(|w| w[0] >= w[1]) && s.s.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn pca_variance_survives_rotation(seed in any::<u64>(), rows in 5usize..40, cols in 2usize..8) {
        let m = common::random(rows, cols, seed);
        let q = common::random_orthogonal(cols, seed ^ 0x5555);
        let k = 2.min(cols);
        let a = numerics::pca(&m, k).unwrap();
        let b = numerics::pca(&m.matmul(&q).unwrap(), k).unwrap();
        for (x, y) in a.explained_variance.iter().zip(&b.explained_variance) {
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + x));
        }
    }

    #[test]
    fn ridge_norm_shrinks_with_alpha(seed in any::<u64>(), a1 in 0.0f64..5.0, step in 1e-3f64..5.0) {
        let a = common::random(12, 4, seed);
        let b = common::random(12, 2, seed.wrapping_add(1));
        let x1 = numerics::solve_ridge(&a, &b, a1).unwrap();
        let x2 = numerics::solve_ridge(&a, &b, a1 + step).unwrap();
        prop_assert!(x2.frobenius() <= x1.frobenius() * (1.0 + 1e-12));
    }

    #[test]
    fn cka_invariances(x in representation(), seed in any::<u64>()) {
        let q = common::random_orthogonal(x.cols(), seed);
        let y = common::random(x.rows(), 3, seed ^ 0xABCD);
        let cka = |a: &Matrix, b: &Matrix| similarity::linear_cka(a, b).unwrap();
        prop_assert!((cka(&x, &x.matmul(&q).unwrap()) - 1.0).abs() < 1e-9);
        for c in [0.5, 3.0, -2.0] {
            prop_assert!((cka(&x, &x.scale(c)) - 1.0).abs() < 1e-12);
        }
        prop_assert!((cka(&x, &y) - cka(&y, &x)).abs() < 1e-12);
        let v = cka(&x, &y);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn svcca_is_symmetric_and_self_one(x in representation(), seed in any::<u64>()) {
        let y = common::random(x.rows(), 4, seed);
        let a = similarity::svcca(&x, &y, 0.99).unwrap();
        let b = similarity::svcca(&y, &x, 0.99).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((similarity::svcca(&x, &x, 0.99).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ldr_ignores_common_affine_maps(
        seed in any::<u64>(),
        scale in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        shift in -50.0f64..50.0,
    ) {
        let mut rng = Rng::new(seed);
        let sides: Vec<Side> = (0..30).map(|i| if i % 2 == 0 { Side::S } else { Side::C }).collect();
        let z: Vec<f64> = sides
            .iter()
            .map(|s| rng.next_gaussian() + if *s == Side::S { 2.0 } else { 0.0 })
            .collect();
        let moved: Vec<f64> = z.iter().map(|v| scale * v + shift).collect();
        let a = probe::ldr(&probe::class_stats(&z, &sides));
        let b = probe::ldr(&probe::class_stats(&moved, &sides));
        prop_assert!((a.value - b.value).abs() < 1e-9 * (1.0 + a.value));
    }

    #[test]
    fn predict_ignores_positive_rescaling(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = Rng::new(seed);
        let w: Vec<f64> = (0..5).map(|_| rng.next_gaussian()).collect();
        let h: Vec<f64> = (0..5).map(|_| rng.next_gaussian()).collect();
        let t = rng.next_gaussian();
        let p = Probe { w: w.clone(), threshold: t, layer: 1, token: None, train_accuracy: 1.0 };
        let q = Probe { w: w.iter().map(|v| v * c).collect(), threshold: t * c, ..p.clone() };
        // skip draws that sit on the boundary to rounding precision
        prop_assume!((p.project(&h) - t).abs() > 1e-9);
        prop_assert_eq!(probe::predict(&p, &h), probe::predict(&q, &h));
    }

    #[test]
    fn min_max_scaling_spans_unit_interval(m in matrix()) {
        let s = probe::min_max_scale(&m);
        prop_assert!(s.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        if m.max_abs() > 0.0 && m.as_slice().iter().any(|v| *v != m.as_slice()[0]) {
            let lo = s.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn tensors_round_trip_bitwise(dims in prop::collection::vec(0u64..5, 1..4), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let len: u64 = dims.iter().product();
        let values: Vec<f32> = (0..len)
            .map(|_| f32::from_bits((rng.next_u64() >> 32) as u32))
            .filter(|v| v.is_finite())
            .chain(std::iter::repeat(0.25))
            .take(len as usize)
            .collect();
        let bytes = io::encode_tensor(&dims, &values).unwrap();
        let (d, v) = io::decode_tensor(std::path::Path::new("mem"), &bytes).unwrap();
        prop_assert_eq!(d, dims);
        prop_assert!(v.iter().map(|x| x.to_bits()).eq(values.iter().map(|x| x.to_bits())));
    }

    #[test]
    fn blocks_match_exhaustive_oracle(
        n in 2usize..=12,
        seed in any::<u64>(),
        tau in prop::sample::select(vec![0.7, 0.85, 0.95]),
        k in 2usize..=3,
    ) {
        let values = common::planted_similarity(n, seed);
        let sim = SimilarityMatrix {
            values: values.clone(),
            metric: Metric::Cka,
            reduction: Reduction::Mean,
            model_hash_a: 0,
            model_hash_b: 0,
            dataset_checksum: 0,
            first_layer: 1,
        };
        let got: Vec<(usize, usize)> = blocks::identify_blocks(&sim, tau, k)
            .unwrap()
            .blocks
            .iter()
            .map(|b| (b.start, b.end))
            .collect();
        prop_assert_eq!(got, common::blocks_oracle(&values, tau, k));
    }

    #[test]
    fn sparsity_is_bounded_and_keeps_edges(layers in 2usize..40, cuts in prop::collection::vec(any::<u16>(), 0..6)) {
        let mut bounds: Vec<usize> = cuts.iter().map(|c| 1 + *c as usize % layers).collect();
        bounds.sort_unstable();
        bounds.dedup();
        let found: Vec<Block> = bounds
            .chunks_exact(2)
            .map(|w| Block::new(w[0], w[1]))
            .collect();
        let plan = blocks::plan_prune(&BlockSet::manual(found.clone(), layers), layers, Selection::All).unwrap();
        let s = blocks::encoder_sparsity(&plan);
        prop_assert!((0.0..1.0).contains(&s));
        for b in &found {
            prop_assert!(!plan.skipped.contains(&b.start) && !plan.skipped.contains(&b.end));
        }
    }

    #[test]
    fn normalized_rows_have_unit_moments(seed in any::<u64>()) {
        let specs = [
            GenSpec::desk(PatternClass::SineIncreasing),
            GenSpec::desk(PatternClass::DecreasingSlope),
            GenSpec::desk(PatternClass::Constant),
        ];
        let set = synthgen::make_dataset(&specs, 3, 64, seed, true).unwrap();
        for i in 0..set.len() {
            let row = set.series.row(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(sd == 0.0 || (sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn datasets_are_deterministic(seed in any::<u64>()) {
        let specs = [GenSpec::desk(PatternClass::SineDecreasing)];
        let a = synthgen::make_dataset(&specs, 4, 32, seed, false).unwrap();
        let b = synthgen::make_dataset(&specs, 4, 32, seed, false).unwrap();
        prop_assert!(a.series.as_slice().iter().map(|v| v.to_bits()).eq(b.series.as_slice().iter().map(|v| v.to_bits())));
    }
}
