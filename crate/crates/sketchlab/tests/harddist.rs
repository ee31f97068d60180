use sketchlab::dgauss::pmf_dgauss_1d;
use sketchlab::harddist::*;
use sketchlab::lattice::IntMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn matrix(p: &Payload) -> &IntMatrix {
    match p {
        Payload::Matrix(m) => m,
        Payload::Vector(_) => panic!("matrix expected"),
    }
}

fn vector(p: &Payload) -> &[i64] {
    match p {
        Payload::Vector(v) => v,
        Payload::Matrix(_) => panic!("vector expected"),
    }
}

fn flat(p: &Payload) -> Vec<i64> {
    match p {
        Payload::Vector(v) => v.clone(),
        Payload::Matrix(m) => m.to_rows().concat(),
    }
}

fn difference(a: &Payload, b: &Payload) -> Vec<i64> {
    flat(a).iter().zip(flat(b)).map(|(p, q)| p - q).collect()
}

#[test]
fn desk_families_validate_and_round_trip_as_json() {
    for name in FAMILY_NAMES {
        let f = HardFamily::desk(name).unwrap();
        f.validate().unwrap();
        assert_eq!(f.name(), name);
        let back: HardFamily = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }
    let psd = serde_json::to_string(&HardFamily::desk("psd").unwrap()).unwrap();
    assert!(psd.contains("\"p\":\"inf\""), "{psd}");
    assert!(HardFamily::desk("lp-huge").is_err());
}

#[test]
fn out_of_regime_parameters_are_rejected() {
    let bad = [
        HardFamily::LpSmall { n: 64, eps: 0.1, p: 3.0, noise: 1e6 },
        HardFamily::LpLarge { n: 64, eps: 0.1, p: 2.0, delta: 0.1, noise: 1e4 },
        HardFamily::OpnormEps { d: 16, eps: 0.5, noise: 1e4 },
        HardFamily::Psd { d: 16, eps: 0.1, p: SchattenIndex::Finite(0.5), noise: 1e4 },
        HardFamily::Kyfan { n: 16, s: 20, noise: 1e4 },
        HardFamily::Eigen { d: 16, eps: 0.1, noise: 2.0 },
    ];
    for f in bad {
        assert!(matches!(f.validate(), Err(HardError::BadParams(_))), "{f:?}");
    }
}

#[test]
fn cs_regime_condition_is_reported() {
    let w = HardFamily::desk("cs").unwrap().regime_warnings();
    assert_eq!(w.len(), 1);
    assert!(HardFamily::Cs { n: 256, k: 8, eps: 0.5, root: 256 }.regime_warnings().is_empty());
}

#[test]
fn planting_is_exactly_additive() {
    for name in ["lp-large", "opnorm-alpha", "kyfan", "eigen", "psd", "cs"] {
        let cal = calibrate(&HardFamily::desk(name).unwrap(), 5).unwrap();
        for seed in 0..3 {
            let d1 = gen_hard_instance(&cal, Side::D1, seed).unwrap();
            let d2 = gen_hard_instance(&cal, Side::D2, seed).unwrap();
            let planted = d2.witness.planted.as_ref().unwrap();
            assert_eq!(difference(&d2.payload, planted), flat(&d1.payload), "{name}");
        }
    }
}

#[test]
fn planted_noise_fits_null_entry_distribution() {
    let cal_free = CalibratedFamily {
        family: HardFamily::OpnormAlpha { n: 16, alpha: 2.0, noise: 30.0 },
        constants: Constants { noise_constant: 1.0, spike_constant: 1.0, calibration_seed: 0, supports: None },
    };
    assert_eq!(cal_free.spike_model().unwrap().scales, vec![0.5]);
    let variance = 900.0;
    let mut counts = std::collections::BTreeMap::<i64, f64>::new();
    let total = 10_000usize;
    for seed in 0..total as u64 {
        let inst = gen_hard_instance(&cal_free, Side::D2, 1_000_000 + seed).unwrap();
        let noise = difference(&inst.payload, inst.witness.planted.as_ref().unwrap());
        *counts.entry((noise[(seed % 256) as usize] / 15).clamp(-5, 5)).or_default() += 1.0;
    }
    let mut stat = 0.0;
    for (bin, observed) in &counts {
        let expected: f64 = (-400i64..=400)
            .filter(|&k| (k / 15).clamp(-5, 5) == *bin)
            .map(|k| pmf_dgauss_1d(k, variance).unwrap())
            .sum::<f64>()
            * total as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let crit = ChiSquared::new(counts.len() as f64 - 1.0).unwrap().inverse_cdf(1.0 - 1e-4);
    assert!(stat < crit, "chi-square {stat} over {} bins", counts.len());
}

#[test]
fn opnorm_alpha_witness_reconstruction() {
    let cal = calibrate(&HardFamily::desk("opnorm-alpha").unwrap(), 8).unwrap();
    let inst = gen_hard_instance(&cal, Side::D2, 3).unwrap();
    let w = &inst.witness;
    assert_eq!(w.spikes.len(), 1);
    let model = cal.spike_model().unwrap();
    assert_eq!(Payload::Matrix(model.planted(&w.spikes, &w.scales)), *w.planted.as_ref().unwrap());
    let residual = difference(&inst.payload, w.planted.as_ref().unwrap());
    let m = nalgebra::DMatrix::from_row_slice(64, 64, &residual.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let top = singular_values(&m)[0];
    assert!(top <= 3.0 * cal.constants.noise_constant * 1e4 * 8.0, "{top}");
}

#[test]
fn psd_null_side_is_psd_when_noise_norm_is_below_shift() {
    let cal = calibrate(&HardFamily::desk("psd").unwrap(), 9).unwrap();
    let shift = cal.constants.noise_constant * 1e4 * 8.0;
    for seed in 0..20 {
        let inst = gen_hard_instance(&cal, Side::D1, seed).unwrap();
        let m = matrix(&inst.payload);
        let dm = nalgebra::DMatrix::from_fn(64, 64, |i, j| m.get(i, j) as f64);
        let op = singular_values(&dm)[0];
        let ev = symmetric_embedding_eigenvalues(m, shift);
        if op <= shift {
            assert!(ev[0] >= -1e-6);
        }
        let e = verify_gap_event(&cal, &inst).unwrap();
        assert!((e.statistic - (shift - op)).abs() < 1e-6 * shift);
    }
}

#[test]
fn lp_small_null_norm_concentrates() {
    let cal = calibrate(&HardFamily::desk("lp-small").unwrap(), 1).unwrap();
    let ratios: Vec<f64> = (0..100)
        .map(|s| {
            let x = vector(&gen_hard_instance(&cal, Side::D1, s).unwrap().payload).to_vec();
            x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / (1e12 * 1024.0)
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / 100.0;
    let se = (2.0f64 / 1024.0).sqrt() / 10.0;
    assert!((mean - 1.0).abs() <= 5.0 * se, "mean {mean}");
    let inside = ratios.iter().filter(|r| (0.9..=1.1).contains(*r)).count();
    assert!(inside >= 95, "{inside}");
}

#[test]
fn expected_two_norm_matches_chi_mean() {
    let n = 100usize;
    let exact = 2f64.sqrt() * libm::exp(libm::lgamma((n as f64 + 1.0) / 2.0) - libm::lgamma(n as f64 / 2.0));
    assert!((expected_p_norm(n, 2.0) - exact).abs() / exact < 0.005);
    assert_eq!(expected_p_norm(n, 2.0), expected_p_norm(n, 2.0));
}

#[test]
fn cs_support_family_audit() {
    let cal = calibrate(&HardFamily::desk("cs").unwrap(), 2).unwrap();
    let fam = cal.constants.supports.as_ref().unwrap();
    let audit = audit_supports(fam, 256);
    assert_eq!(audit.size, 1024);
    assert!(audit.min_symmetric_difference >= 8);
    assert!(audit.min_frequency >= 0.5 * 8.0 / 256.0 && audit.max_frequency <= 2.0 * 8.0 / 256.0, "{audit:?}");
    let inst = gen_hard_instance(&cal, Side::D2, 4).unwrap();
    let e = verify_gap_event(&cal, &inst).unwrap();
    let mut truth = inst.witness.coordinates.clone();
    truth.sort_unstable();
    assert_eq!(e.decoded.unwrap(), truth);
}

#[test]
fn light_families_separate_on_small_batteries() {
    for name in ["lp-small", "lp-large", "opnorm-alpha", "kyfan", "eigen", "psd", "cs"] {
        let cal = calibrate(&HardFamily::desk(name).unwrap(), 31).unwrap();
        let b = gap_battery(&cal, 20, 32).unwrap();
        assert!(b.both_hold >= 18, "{name}: {b:?}");
    }
}

#[test]
fn calibration_is_deterministic_and_instances_export() {
    let f = HardFamily::desk("eigen").unwrap();
    let (a, b) = (calibrate(&f, 3).unwrap(), calibrate(&f, 3).unwrap());
    assert_eq!(a, b);
    assert_ne!(a.constants.noise_constant, calibrate(&f, 4).unwrap().constants.noise_constant);
    let inst = gen_hard_instance(&a, Side::D2, 6).unwrap();
    let json = serde_json::to_string(&inst).unwrap();
    let back: HardInstance = serde_json::from_str(&json).unwrap();
    assert_eq!(back, inst);
    let cal_back: CalibratedFamily = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(cal_back, a);
}

#[test]
fn sketched_indistinguishability_controls() {
    let null = SpikeModel { rows: 16, cols: 16, noise: 1e4, scales: vec![0.0] };
    assert!(sketched_indistinguishability(&null, 1, 100_000, 1).unwrap().value <= 0.03);
    let huge = SpikeModel { rows: 4, cols: 4, noise: 1e4, scales: vec![10.0 / 2.0] };
    assert!(sketched_indistinguishability(&huge, 1, 100_000, 2).unwrap().value >= 0.5);
    let tiny = SpikeModel { rows: 16, cols: 16, noise: 1e4, scales: vec![0.1 / 4.0] };
    assert!(sketched_indistinguishability(&tiny, 2, 20_000, 3).unwrap().value <= 0.15);
    assert!(matches!(sketched_indistinguishability(&null, 4, 1000, 1), Err(HardError::DimensionTooLarge { dim: 4, max: 3 })));
}
