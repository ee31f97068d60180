use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sketchlab::dgauss::{pmf_dgauss_1d, pmf_rounded_gaussian};
use sketchlab::lattice::IntMatrix;
use sketchlab::stats::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

fn normal_samples(n: usize, dim: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()).collect()
}

#[test]
fn shifted_normals_match_closed_form_tvd() {
    let exact = 2.0 * Normal::standard().cdf(0.5) - 1.0;
    assert!((exact - 0.3829).abs() < 1e-4);
    let est = empirical_tvd(&normal_samples(100_000, 1, 0.0, 1), &normal_samples(100_000, 1, 1.0, 2), TvdMode::Histogram, 3).unwrap();
    assert!((0.36..=0.40).contains(&est.value), "{est:?}");
    assert!(est.ci_halfwidth > 0.0 && est.value + est.ci_halfwidth <= 1.05);
}

#[test]
fn identical_sets_have_zero_tvd_and_null_is_small() {
    let a = normal_samples(5000, 2, 0.0, 4);
    assert_eq!(empirical_tvd(&a, &a, TvdMode::Histogram, 1).unwrap().value, 0.0);
    let null = empirical_tvd(&normal_samples(100_000, 1, 0.0, 5), &normal_samples(100_000, 1, 0.0, 6), TvdMode::Histogram, 7).unwrap();
    assert!(null.value <= 0.03, "{null:?}");
}

#[test]
fn null_calibration_over_one_hundred_runs() {
    for dim in [1usize, 2] {
        let worst = (0..100u64)
            .map(|s| {
                let a = normal_samples(100_000, dim, 0.0, 1000 + 2 * s);
                let b = normal_samples(100_000, dim, 0.0, 1001 + 2 * s);
                empirical_tvd_with(&a, &b, TvdMode::Histogram, 0, s).unwrap().value
            })
            .fold(0.0f64, f64::max);
        println!("null calibration dim {dim}: worst of 100 runs {worst:.4}");
        assert!(worst < 0.03);
    }
}

#[test]
fn projection_mode_reduces_to_one_dimension() {
    let a = normal_samples(20_000, 5, 0.0, 8);
    let mut b = normal_samples(20_000, 5, 0.0, 9);
    b.iter_mut().for_each(|x| x[4] += 1.0);
    let along = empirical_tvd(&a, &b, TvdMode::Projection { direction: vec![0.0, 0.0, 0.0, 0.0, 1.0] }, 1).unwrap();
    let across = empirical_tvd(&a, &b, TvdMode::Projection { direction: vec![1.0, 0.0, 0.0, 0.0, 0.0] }, 1).unwrap();
    assert!((along.value - 0.3829).abs() < 0.04, "{along:?}");
    assert!(across.value < 0.05);
}

#[test]
fn tvd_guards() {
    let small = normal_samples(10, 1, 0.0, 1);
    assert!(matches!(empirical_tvd(&small, &small, TvdMode::Histogram, 1), Err(StatsError::TooFewSamples { .. })));
    let wide = normal_samples(2000, 4, 0.0, 1);
    assert!(matches!(empirical_tvd(&wide, &wide, TvdMode::Histogram, 1), Err(StatsError::DimensionTooLarge { .. })));
}

#[test]
fn energy_test_separates_shift_and_accepts_null() {
    let a = normal_samples(5000, 4, 0.0, 11);
    let null = energy_distance_test(&a, &normal_samples(5000, 4, 0.0, 12), 1).unwrap();
    let shifted = energy_distance_test(&a, &normal_samples(5000, 4, 0.5, 13), 1).unwrap();
    assert!(null.p_value >= ENERGY_P_THRESHOLD, "{null:?}");
    assert!(shifted.p_value < ENERGY_P_THRESHOLD, "{shifted:?}");
}

#[test]
fn cell_check_on_all_ones_row() {
    let a = IntMatrix::from_rows(&[vec![1; 8]]).unwrap();
    let report = cell_lemma_check(&a, 1, 1e8, 100_000, CellVariant::Smoothed, 3).unwrap();
    println!("all-ones: {report:?}");
    assert!(report.pass);
    assert!(report.tvd.unwrap().value <= 0.05);
}

#[test]
fn cell_check_random_sketch_both_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<i64>> = (0..2).map(|_| (0..8).map(|_| rng.random_range(-50..=50)).collect()).collect();
    let a = IntMatrix::from_rows(&rows).unwrap();
    for variant in [CellVariant::Smoothed, CellVariant::Rounded] {
        let report = cell_lemma_check(&a, 50, 1e8, 100_000, variant, 4).unwrap();
        println!("{variant:?}: tvd {:?}", report.tvd.as_ref().map(|t| t.value));
        assert!(report.pass && report.tvd.unwrap().value <= 0.05);
    }
}

#[test]
fn cell_check_rejects_small_variance() {
    let a = IntMatrix::from_rows(&[vec![1; 8]]).unwrap();
    assert!(matches!(cell_lemma_check(&a, 1, 1.0, 2000, CellVariant::Smoothed, 1), Err(StatsError::PreconditionUnmet(_))));
}

#[test]
fn cell_check_uses_energy_test_in_four_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<Vec<i64>> = (0..4).map(|_| (0..16).map(|_| rng.random_range(-5..=5)).collect()).collect();
    let report = cell_lemma_check(&IntMatrix::from_rows(&rows).unwrap(), 5, 1e8, 20_000, CellVariant::Smoothed, 5).unwrap();
    assert!(report.energy.is_some() && report.tvd.is_none());
    assert!(report.pass, "{report:?}");
}

#[test]
fn pmf_ratio_meets_bound_deterministically() {
    let a = pmf_ratio_check(1e4, 10, 2.0, None).unwrap();
    assert!(a.max_deviation <= 0.01 && a.pass);
    assert_eq!(a, pmf_ratio_check(1e4, 10, 2.0, None).unwrap());
    assert_eq!(a.z_range, 300);
    assert!(matches!(pmf_ratio_check(500.0, 10, 2.0, None), Err(StatsError::PreconditionUnmet(_))));
}

#[test]
fn pmf_ratio_at_zero_is_normalizer_mismatch() {
    let s2: f64 = 1e4;
    let z: f64 = (-2000i64..=2000).map(|k| (-(k * k) as f64 / (2.0 * s2)).exp()).sum();
    let mass_at_zero = erf(0.5 / (2.0 * s2).sqrt());
    let expect = (1.0 / z) / mass_at_zero - 1.0;
    let got = pmf_dgauss_1d(0, s2).unwrap() / pmf_rounded_gaussian(0, s2).unwrap() - 1.0;
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
}

/// `∫ p²/q − 1` for `p = ½N(a,1) + ½N(−a,1)` and `q = N(0,1)` by the trapezoid rule.
fn quadrature_chi_square(a: f64) -> f64 {
    let phi = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let h = 1e-4;
    let mut total = 0.0;
    let mut x = -20.0;
    while x <= 20.0 {
        let p = 0.5 * (phi(x - a) + phi(x + a));
        total += p * p / phi(x) * h;
        x += h;
    }
    total - 1.0
}

#[test]
fn chi_square_symmetric_pair_against_quadrature() {
    let a = 0.5f64;
    let exact = (a * a).cosh() - 1.0;
    assert!((quadrature_chi_square(a) - exact).abs() < 1e-6);
    let r = chi_square_mixture_check(1.0, 1, Mixture::SymmetricPair { a }, 1_000_000, 2).unwrap();
    assert!(r.pass);
    assert!((r.rhs - exact).abs() <= 3.0 * r.rhs_se + 1e-12, "{r:?}");
    assert!((r.lhs - exact).abs() <= 3.0 * r.lhs_se, "{r:?}");
}

#[test]
fn chi_square_degenerate_and_gaussian_mixtures() {
    let r = chi_square_mixture_check(1.0, 2, Mixture::Origin, 1000, 1).unwrap();
    assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    let r = chi_square_mixture_check(1.0, 2, Mixture::Gaussian { tau: 0.4 }, 1_000_000, 3).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(matches!(
        chi_square_mixture_check(1.0, 3, Mixture::Origin, 1000, 1),
        Err(StatsError::DimensionTooLarge { dim: 3, max: 2 })
    ));
}

#[test]
fn mgf_bound_holds() {
    for a in [0.0, 0.5] {
        let r = mgf_check(a, 1e4, 1_000_000, 6).unwrap();
        assert!(r.pass, "{r:?}");
    }
    assert_eq!(mgf_check(0.0, 1e4, 1000, 1).unwrap().estimate, 1.0);
    assert!(matches!(mgf_check(1.0, 1e4, 1000, 1), Err(StatsError::PreconditionUnmet(_))));
}

#[test]
fn singular_values_concentrate() {
    let r = singular_value_check(400, 100, 1e4, 10, 7).unwrap();
    assert_eq!(r.within, 10, "{r:?}");
    assert!(r.largest <= r.upper && r.largest > 1e4 * 20.0);
}
