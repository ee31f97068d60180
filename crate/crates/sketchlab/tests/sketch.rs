use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchlab::dgauss::EllipsoidalSampler;
use sketchlab::lattice::IntMatrix;
use sketchlab::sketch::*;

fn spec(family: FamilyKind, n: usize, r: usize, seed: u64) -> SketchSpec {
    SketchSpec { family, n, r, seed, params: SketchParams::new(1000.0, 8.0) }
}

/// Row-by-row product, independent of the crate's column-major layout.
fn naive_apply(m: &IntMatrix, x: &[i64]) -> Vec<i64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

#[test]
fn identity_sketch_returns_input() {
    let mut id = IntMatrix::zeros(5, 5);
    (0..5).for_each(|i| id.set(i, i, 1));
    let s = IntegerSketch::new(id, 1).unwrap();
    assert_eq!(apply(&s, &[3, -1, 4, 1, -5]).unwrap(), vec![3, -1, 4, 1, -5]);
}

#[test]
fn zero_vector_maps_to_zero_and_answers_zero() {
    for family in [FamilyKind::Sign, FamilyKind::RoundedGaussian, FamilyKind::Countsketch, FamilyKind::ProjectionThreshold] {
        let oracle = build_sketch(&spec(family, 64, 8, 3)).unwrap();
        assert!(apply(oracle.sketch(), &[0; 64]).unwrap().iter().all(|&v| v == 0));
        assert!(!oracle.answer_vector(&[0; 64]).unwrap(), "{family:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stream_ingestion_is_order_and_grouping_free(seed in any::<u64>(), split in 1usize..5) {
        let oracle = build_sketch(&spec(FamilyKind::Sign, 64, 8, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i64> = (0..64).map(|_| rng.random_range(-100..=100)).collect();
        let mut updates = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            let part = v / split as i64;
            for _ in 0..split - 1 {
                updates.push(Update { index: i, delta: part });
            }
            updates.push(Update { index: i, delta: v - part * (split as i64 - 1) });
        }
        updates.shuffle(&mut rng);
        let mut state = StreamState::new(oracle.sketch());
        state.ingest_all(&updates).unwrap();
        let expect = naive_apply(oracle.sketch().matrix(), &x);
        prop_assert_eq!(state.values(), expect.as_slice());
        prop_assert_eq!(apply(oracle.sketch(), &x).unwrap(), naive_apply(oracle.sketch().matrix(), &x));
    }

    #[test]
    fn sketch_is_linear(seed in any::<u64>()) {
        let oracle = build_sketch(&spec(FamilyKind::RoundedGaussian, 32, 4, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i64> = (0..32).map(|_| rng.random_range(-50..=50)).collect();
        let y: Vec<i64> = (0..32).map(|_| rng.random_range(-50..=50)).collect();
        let sum: Vec<i64> = x.iter().zip(&y).map(|(a, b)| 3 * a - b).collect();
        let (ax, ay) = (apply(oracle.sketch(), &x).unwrap(), apply(oracle.sketch(), &y).unwrap());
        let expect: Vec<i64> = ax.iter().zip(&ay).map(|(a, b)| 3 * a - b).collect();
        prop_assert_eq!(apply(oracle.sketch(), &sum).unwrap(), expect);
    }

    #[test]
    fn equal_sketches_give_equal_bits(seed in any::<u64>()) {
        let oracle = build_sketch(&spec(FamilyKind::ProjectionThreshold, 32, 4, seed)).unwrap();
        let kernel = sketchlab::lattice::integer_kernel_basis(oracle.sketch().matrix()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<i64> = (0..32).map(|_| rng.random_range(-400..=400)).collect();
        let y: Vec<i64> = x.iter().zip(&kernel.vectors[0]).map(|(a, k)| a + 7 * k).collect();
        prop_assert_eq!(apply(oracle.sketch(), &x).unwrap(), apply(oracle.sketch(), &y).unwrap());
        prop_assert_eq!(oracle.answer_vector(&x).unwrap(), oracle.answer_vector(&y).unwrap());
    }
}

#[test]
fn sign_estimator_is_unbiased() {
    let oracle = build_sketch(&spec(FamilyKind::Sign, 256, 16, 7)).unwrap();
    let est = oracle.estimator();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trials = 10_000;
    let mut ratio = 0.0;
    for _ in 0..trials {
        let x: Vec<i64> = (0..256).map(|_| rng.random_range(-100..=100)).collect();
        let norm: f64 = x.iter().map(|&v| (v * v) as f64).sum();
        ratio += est.l2_estimate(&apply(oracle.sketch(), &x).unwrap()) / norm;
    }
    let mean = ratio / trials as f64;
    assert!((0.9..=1.1).contains(&mean), "mean ratio {mean}");
}

#[test]
fn countsketch_columns_hit_one_bucket_per_hash_row() {
    let mut s = spec(FamilyKind::Countsketch, 128, 12, 5);
    s.params.hash_rows = Some(3);
    let oracle = build_sketch(&s).unwrap();
    let m = oracle.sketch().matrix();
    for h in 0..3 {
        for j in 0..128 {
            let nz = (h * 4..h * 4 + 4).filter(|&i| m.get(i, j) != 0).count();
            assert_eq!(nz, 1);
        }
    }
}

#[test]
fn kernel_vector_with_large_norm_answers_zero() {
    let params = SketchParams::new(1000.0, 8.0);
    let oracle = build_sketch(&spec(FamilyKind::ProjectionThreshold, 32, 4, 9)).unwrap();
    let k = sketchlab::lattice::integer_kernel_basis(oracle.sketch().matrix()).unwrap();
    let v = &k.vectors[0];
    let norm: f64 = v.iter().map(|&c| (c * c) as f64).sum();
    let scale = ((2.0 * params.alpha * params.b / norm).sqrt().ceil() as i64).max(1);
    let x: Vec<i64> = v.iter().map(|c| c * scale).collect();
    assert!(x.iter().map(|&c| (c * c) as f64).sum::<f64>() >= 2.0 * params.alpha * params.b);
    assert!(!oracle.answer_vector(&x).unwrap());
}

#[test]
fn single_spike_detection_rate_is_reported() {
    let (n, alpha, b) = (64usize, 1000.0, 8.0);
    let oracle = build_sketch(&spec(FamilyKind::ProjectionThreshold, n, 8, 4)).unwrap();
    let height = (2.0 * alpha * b * n as f64).sqrt().round() as i64;
    let hits = (0..n)
        .filter(|&i| {
            let mut x = vec![0i64; n];
            x[i] = height;
            oracle.answer_vector(&x).unwrap()
        })
        .count();
    println!("single-spike detection at ‖x‖²/n = 2αB: {hits}/{n}");
}

#[test]
fn projection_answer_depends_only_on_projected_norm() {
    let oracle = build_sketch(&spec(FamilyKind::ProjectionThreshold, 48, 4, 12)).unwrap();
    let (q, _) = oracle.sketch().orthonormal_form().unwrap().clone();
    let t = oracle.calibration().threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut seen = [0usize; 2];
    for variance in [1000.0, 2000.0, 4000.0, 8000.0] {
        let base = EllipsoidalSampler::isotropic(48, variance).unwrap();
        for _ in 0..100 {
            let x = base.sample(&mut rng);
            let qx = q.mul_vec(&x.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let norm: f64 = qx.iter().map(|v| v * v).sum();
            if (norm - t).abs() > 1e-6 * t {
                let bit = oracle.answer_vector(&x).unwrap();
                assert_eq!(bit, norm >= t);
                seen[bit as usize] += 1;
            }
        }
    }
    assert!(seen[0] > 20 && seen[1] > 20, "{seen:?}");
}

#[test]
fn spec_round_trips_through_json_and_rebuilds_identically() {
    let s = spec(FamilyKind::ProjectionThreshold, 32, 4, 21);
    let json = serde_json::to_string(&s).unwrap();
    let back: SketchSpec = serde_json::from_str(&json).unwrap();
    let (a, b) = (build_sketch(&s).unwrap(), build_sketch(&back).unwrap());
    assert_eq!(a.sketch().matrix(), b.sketch().matrix());
    assert_eq!(a.calibration(), b.calibration());
    assert!(serde_json::from_str::<SketchSpec>(&json.replace("\"seed\"", "\"sead\"")).is_err());
}

#[test]
fn calibration_false_rates_are_reported() {
    let oracle = build_sketch(&spec(FamilyKind::ProjectionThreshold, 128, 8, 1)).unwrap();
    let c = oracle.calibration();
    println!("r=8 n=128 B=8: threshold {:.1}, scale {:.3}, false rates {:.3}/{:.3}", c.threshold, c.scale, c.low_false_rate, c.high_false_rate);
    assert!(c.low_false_rate < 0.5 && c.high_false_rate < 0.5);
}
