//! The acceptance battery: fourteen desk-scale checks with pinned tolerances.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    conditional_gap_estimate, probe_grid_point, run_attack, verify_certificate, AttackConfig, AttackError, GridSpec,
    PlantedDirectionOracle,
};
use crate::dgauss::{directional_second_moment, normalizer, DgaussError, QueryMode, SubspaceGaussianSpec, SubspaceQuerySampler};
use crate::harddist::{calibrate, gap_battery, sketched_indistinguishability, HardError, HardFamily, SpikeModel, FAMILY_NAMES};
use crate::lattice::{linf, preprocess_sketch, short_kernel_vector, siegel_bound, IntMatrix, LatticeError};
use crate::numerics::{dot, norm, NumericsError, OrthonormalBasis};
use crate::seed::{label, SeedTree};
use crate::sketch::{build_sketch, ExactNormOracle, FamilyKind, GapNormParams, SketchError, SketchParams, SketchSpec};
use crate::stats::{cell_lemma_check, mgf_check, pmf_ratio_check, singular_value_check, CellVariant, StatsError};

pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=14;

/// Attack parameters shared by criteria 1, 2, 9.
pub const ATTACK_N: usize = 128;
pub const ATTACK_R: usize = 8;
pub const ATTACK_ALPHA: f64 = 1000.0;
pub const ATTACK_B: f64 = 8.0;
pub const ATTACK_M: usize = 2000;
pub const ATTACK_GRID_POINTS: usize = 16;
pub const ATTACK_RUNS: usize = 10;
pub const ATTACK_MIN_SUCCESSES: usize = 8;
pub const ATTACK_MAX_SECONDS: f64 = 300.0;
pub const NEGATIVE_CONTROL_RUNS: usize = 100;
pub const SIEGEL_INSTANCES: usize = 1000;
pub const SIEGEL_MAX_SECONDS: f64 = 60.0;
pub const PREPROCESS_INSTANCES: usize = 100;
pub const PREPROCESS_MIN_PASSES: usize = 95;
pub const PMF_BOUND: f64 = 0.01;
pub const NORMALIZER_VARIANCES: [f64; 5] = [0.5, 1.0, 4.0, 100.0, 1e6];
/// Relative slack for comparing the normalizer with `√(2πσ²)`, which it equals to machine precision once `σ² ≳ 4`.
pub const NORMALIZER_REL_TOL: f64 = 1e-12;
pub const CELL_TVD_BOUND: f64 = 0.05;
pub const CELL_SAMPLES: usize = 100_000;
pub const COVARIANCE_SAMPLES: usize = 100_000;
pub const COVARIANCE_TOLERANCE: f64 = 0.05;
pub const GAP_SAMPLES: usize = 100_000;
pub const GAP_STANDARD_ERRORS: f64 = 3.0;
pub const PLANTED_SAMPLES: usize = 5000;
pub const PLANTED_OVERLAP: f64 = 0.9;
pub const PLANTED_MIN_SUCCESSES: usize = 9;
pub const GAP_PAIRS: usize = 100;
pub const GAP_MIN_PAIRS: usize = 95;
pub const GAP_MAX_SECONDS: f64 = 600.0;
pub const SINGULAR_TRIALS: usize = 100;
pub const SINGULAR_MIN_WITHIN: usize = 95;
pub const MGF_SAMPLES: usize = 1_000_000;
pub const TVD_TRIALS: usize = 100_000;
pub const SMALL_SPIKE_TVD_BOUND: f64 = 0.15;
pub const LARGE_SPIKE_TVD_FLOOR: f64 = 0.5;
/// Large-spike control dimension; the spike `10/√n` dominates the sketched noise only for small `n`.
pub const LARGE_SPIKE_N: usize = 4;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("unknown criterion {0}")]
    Unknown(u8),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Dgauss(#[from] DgaussError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Hard(#[from] HardError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "attack end-to-end",
        2 => "exact-oracle negative control",
        3 => "short kernel vector bound",
        4 => "preprocessing length bound",
        5 => "pmf ratio",
        6 => "normalization constant",
        7 => "cell rounding closeness",
        8 => "subspace Gaussian covariance",
        9 => "conditional gap diagnostic",
        10 => "planted direction recovery",
        11 => "hard-distribution gap events",
        12 => "singular value concentration",
        13 => "MGF bound",
        14 => "sketched indistinguishability",
        _ => "unknown",
    }
}

fn attack_params() -> GapNormParams {
    GapNormParams::new(ATTACK_ALPHA, ATTACK_B).expect("valid constants")
}

fn attack_config() -> AttackConfig {
    AttackConfig::new(attack_params(), ATTACK_M, GridSpec::Geometric { points: ATTACK_GRID_POINTS })
}

fn projection_spec(seed: u64) -> SketchSpec {
    SketchSpec {
        family: FamilyKind::ProjectionThreshold,
        n: ATTACK_N,
        r: ATTACK_R,
        seed,
        params: SketchParams::new(ATTACK_ALPHA, ATTACK_B),
    }
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, bound: i64, rng: &mut R) -> IntMatrix {
    IntMatrix::from_row_major(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect())
        .expect("shape")
}

type Verdict = (bool, String);

fn attack_end_to_end(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let config = attack_config();
    let (mut ok, mut slowest, mut rounds) = (0, 0.0f64, Vec::new());
    for run in 0..ATTACK_RUNS as u64 {
        let t = Instant::now();
        let s = seeds.child(run);
        let oracle = build_sketch(&projection_spec(s.child(label::SKETCH).value()))?;
        let result = run_attack(&oracle, ATTACK_R, &config, s.child(label::ATTACK).value())?;
        rounds.push(result.state.round);
        if let Some(cert) = &result.certificate {
            match verify_certificate(&oracle, cert, attack_params(), config.verification_trials, s.child(label::VERIFY).value()) {
                Ok(v) if !v.exploits.is_empty() => ok += 1,
                Ok(_) | Err(AttackError::NoExploitFound { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    let pass = ok >= ATTACK_MIN_SUCCESSES && slowest <= ATTACK_MAX_SECONDS;
    Ok((pass, format!("{ok}/{ATTACK_RUNS} runs certified with exploits (need {ATTACK_MIN_SUCCESSES}); rounds {rounds:?}; slowest run {slowest:.1}s")))
}

fn negative_control(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let config = attack_config();
    let oracle = ExactNormOracle::for_params(ATTACK_N, attack_params());
    let (mut certs, mut verified) = (0, 0);
    for run in 0..NEGATIVE_CONTROL_RUNS as u64 {
        let s = seeds.child(run);
        if let Some(cert) = run_attack(&oracle, ATTACK_R, &config, s.child(label::ATTACK).value())?.certificate {
            certs += 1;
            match verify_certificate(&oracle, &cert, attack_params(), config.verification_trials, s.child(label::VERIFY).value()) {
                Ok(v) if !v.exploits.is_empty() => verified += 1,
                Ok(_) | Err(AttackError::NoExploitFound { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok((verified == 0, format!("{verified} verified certificates over {NEGATIVE_CONTROL_RUNS} runs ({certs} certificates emitted)")))
}

fn siegel(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let t = Instant::now();
    let mut rng = seeds.rng();
    let mut violations = 0;
    let mut worst = 0.0f64;
    for _ in 0..SIEGEL_INSTANCES {
        let n = rng.random_range(4..=24usize);
        let r = rng.random_range(1..=n / 2);
        let m = rng.random_range(1..=100i64);
        let a = random_matrix(r, n, m, &mut rng);
        match short_kernel_vector(&a, m) {
            Ok(v) => worst = worst.max(linf(&v) as f64 / siegel_bound(r, n, m)),
            Err(LatticeError::BoundViolated { .. }) => violations += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        violations == 0 && secs <= SIEGEL_MAX_SECONDS,
        format!("{violations} violations in {SIEGEL_INSTANCES} instances; worst ratio to bound {worst:.3}; {secs:.1}s"),
    ))
}

fn preprocessing(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let mut rng = seeds.rng();
    let bound = 32f64.sqrt() * 50.0;
    let mut lengths = Vec::new();
    for _ in 0..PREPROCESS_INSTANCES {
        let a = random_matrix(3, 32, 50, &mut rng);
        lengths.push(preprocess_sketch(&a, 50)?.achieved_length);
    }
    let within = lengths.iter().filter(|&&l| l <= bound * (1.0 + 1e-12)).count();
    let worst = lengths.iter().cloned().fold(0.0, f64::max);
    let failures: Vec<String> = lengths.iter().filter(|&&l| l > bound).map(|l| format!("{l:.1}")).collect();
    Ok((
        within >= PREPROCESS_MIN_PASSES,
        format!("{within}/{PREPROCESS_INSTANCES} within {bound:.1}; longest {worst:.1}; failures {failures:?}"),
    ))
}

fn pmf_ratio() -> Result<Verdict, SuiteError> {
    let a = pmf_ratio_check(1e4, 10, 2.0, None)?;
    let b = pmf_ratio_check(1e4, 10, 2.0, None)?;
    Ok((
        a.max_deviation <= PMF_BOUND && a == b,
        format!("max |ratio - 1| = {:.3e} at z = {} over |z| <= {}; bound {PMF_BOUND}", a.max_deviation, a.argmax, a.z_range),
    ))
}

fn normalization() -> Result<Verdict, SuiteError> {
    let mut parts = Vec::new();
    let mut pass = true;
    for s2 in NORMALIZER_VARIANCES {
        let z = normalizer(s2)?;
        let g = (2.0 * std::f64::consts::PI * s2).sqrt();
        let (lo, hi) = (g.max(1.0), g + 1.0);
        let ok = z >= lo * (1.0 - NORMALIZER_REL_TOL) && z <= hi * (1.0 + NORMALIZER_REL_TOL);
        pass &= ok;
        parts.push(format!("Z({s2}) = {z:.6} in [{:.6}, {:.6}]", g.max(1.0), g + 1.0));
    }
    Ok((pass, parts.join("; ")))
}

fn cell(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let a = random_matrix(2, 8, 50, &mut seeds.rng());
    let smooth = cell_lemma_check(&a, 50, 1e8, CELL_SAMPLES, CellVariant::Smoothed, seeds.child(1).value())?;
    let round = cell_lemma_check(&a, 50, 1e8, CELL_SAMPLES, CellVariant::Rounded, seeds.child(2).value())?;
    let tvd = |r: &crate::stats::CellReport| r.tvd.as_ref().map(|t| t.value).unwrap_or(f64::NAN);
    let (ts, tr) = (tvd(&smooth), tvd(&round));
    Ok((
        ts <= CELL_TVD_BOUND && tr <= CELL_TVD_BOUND,
        format!("smoothed TVD {ts:.4}, rounded TVD {tr:.4}; bound {CELL_TVD_BOUND}; certified length {:.2}", smooth.certified_length),
    ))
}

fn random_unit<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let l = norm(&g);
    g.iter().map(|v| v / l).collect()
}

fn covariance(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let (n, s2) = (16, 1e4);
    let mut rng = seeds.rng();
    let basis = OrthonormalBasis::new(n, vec![random_unit(n, &mut rng)])?;
    let mut basis = basis;
    basis.extend_with(&random_unit(n, &mut rng))?;
    let sampler = SubspaceQuerySampler::new(SubspaceGaussianSpec::new(basis.clone(), s2)?, QueryMode::Discrete)?;
    let samples: Vec<Vec<i64>> = (0..COVARIANCE_SAMPLES).map(|_| sampler.sample_discrete(&mut rng)).collect();
    let inside = basis.vectors()[0].iter().zip(&basis.vectors()[1]).map(|(a, b)| a + b).collect::<Vec<_>>();
    let inside: Vec<f64> = inside.iter().map(|v| v / norm(&inside)).collect();
    let mut outside = random_unit(n, &mut rng);
    basis.project_out(&mut outside);
    let l = norm(&outside);
    outside.iter_mut().for_each(|v| *v /= l);
    let (m_in, m_out) = (directional_second_moment(&samples, &inside), directional_second_moment(&samples, &outside));
    let (r_in, r_out) = (m_in / (s2 / 4.0), m_out / s2);
    let pass = (r_in - 1.0).abs() <= COVARIANCE_TOLERANCE && (r_out - 1.0).abs() <= COVARIANCE_TOLERANCE;
    Ok((pass, format!("E<w,x>^2 ratio {r_in:.4} inside V, {r_out:.4} outside; tolerance {COVARIANCE_TOLERANCE}")))
}

fn conditional_gap(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let oracle = build_sketch(&projection_spec(seeds.child(label::SKETCH).value()))?;
    let empty = OrthonormalBasis::empty(ATTACK_N);
    let grid = attack_config().grid_points(ATTACK_N)?;
    let mut best: Option<(f64, f64)> = None;
    for (i, &s2) in grid.iter().enumerate() {
        let probe = probe_grid_point(&oracle, &empty, s2, ATTACK_M, seeds.path(&[1, i as u64]).value())?;
        if (0.1..=0.9).contains(&probe.rate) && best.is_none_or(|(_, r)| (probe.rate - 0.5).abs() < (r - 0.5).abs()) {
            best = Some((s2, probe.rate));
        }
    }
    let Some((s2, _)) = best else {
        return Ok((false, "no grid point with positive rate in [0.1, 0.9]".into()));
    };
    let (q, _) = oracle.sketch().orthonormal_form().ok_or(SketchError::BadParams("rank deficient".into()))?;
    let row = q.row(0).to_vec();
    let mut rng = seeds.child(2).rng();
    let mut other = random_unit(ATTACK_N, &mut rng);
    OrthonormalBasis::from_rows(q)?.project_out(&mut other);
    let l = norm(&other);
    other.iter_mut().for_each(|v| *v /= l);
    let spec = SubspaceGaussianSpec::new(empty, s2)?;
    let seed = seeds.child(3).value();
    let g_row = conditional_gap_estimate(&oracle, &spec, &row, GAP_SAMPLES, seed)?;
    let g_other = conditional_gap_estimate(&oracle, &spec, &other, GAP_SAMPLES, seed)?;
    let se = (g_row.standard_error.powi(2) + g_other.standard_error.powi(2)).sqrt();
    let z = (g_row.delta - g_other.delta) / se;
    Ok((
        z >= GAP_STANDARD_ERRORS,
        format!(
            "sigma2 {s2:.0}, rate {:.3}: gap(row) {:.1}, gap(random) {:.1}, difference {z:.1} combined SE (need {GAP_STANDARD_ERRORS})",
            g_row.positive_rate, g_row.delta, g_other.delta
        ),
    ))
}

fn planted_recovery(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let n = 64;
    let sigma2 = attack_config().grid_points(n)?[ATTACK_GRID_POINTS / 2];
    let mut ok = 0;
    let mut overlaps = Vec::new();
    for run in 0..10u64 {
        let u = random_unit(n, &mut seeds.path(&[run, 0]).rng());
        let oracle = PlantedDirectionOracle { direction: u.clone(), threshold: 3.0 * sigma2 };
        let probe = probe_grid_point(&oracle, &OrthonormalBasis::empty(n), sigma2, PLANTED_SAMPLES, seeds.path(&[run, 1]).value())?;
        let overlap = probe.direction.as_ref().map_or(0.0, |v| dot(v, &u).abs());
        if overlap >= PLANTED_OVERLAP && probe.positives as f64 >= 0.05 * PLANTED_SAMPLES as f64 {
            ok += 1;
        }
        overlaps.push(format!("{overlap:.3}"));
    }
    Ok((ok >= PLANTED_MIN_SUCCESSES, format!("{ok}/10 runs with overlap >= {PLANTED_OVERLAP} at sigma2 {sigma2:.0}; overlaps {overlaps:?}")))
}

fn hard_gaps(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, name) in FAMILY_NAMES.iter().enumerate() {
        let cal = calibrate(&HardFamily::desk(name)?, seeds.path(&[i as u64, 0]).value())?;
        let b = gap_battery(&cal, GAP_PAIRS, seeds.path(&[i as u64, 1]).value())?;
        pass &= b.both_hold >= GAP_MIN_PAIRS;
        parts.push(format!("{name} {}/{GAP_PAIRS}", b.both_hold));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs <= GAP_MAX_SECONDS;
    Ok((pass, format!("{}; {secs:.1}s", parts.join(", "))))
}

fn singular(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let r = singular_value_check(400, 100, 1e4, SINGULAR_TRIALS, seeds.value())?;
    Ok((
        r.within >= SINGULAR_MIN_WITHIN,
        format!(
            "{}/{} trials inside [{:.0}, {:.0}]; observed range [{:.0}, {:.0}]",
            r.within, r.trials, r.lower, r.upper, r.smallest, r.largest
        ),
    ))
}

fn mgf(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, a) in [0.0, 0.5].into_iter().enumerate() {
        let r = mgf_check(a, 1e4, MGF_SAMPLES, seeds.child(i as u64).value())?;
        pass &= r.pass;
        parts.push(format!("a={a}: {:.4} (SE {:.4}) vs bound {:.4}", r.estimate, r.standard_error, r.bound));
    }
    Ok((pass, parts.join("; ")))
}

fn indistinguishability(seeds: SeedTree) -> Result<Verdict, SuiteError> {
    let n = 64;
    let small = SpikeModel { rows: n, cols: n, noise: 1e4, scales: vec![0.1 / (n as f64).sqrt()] };
    let large = SpikeModel {
        rows: LARGE_SPIKE_N,
        cols: LARGE_SPIKE_N,
        noise: 1e4,
        scales: vec![10.0 / (LARGE_SPIKE_N as f64).sqrt()],
    };
    let ts = sketched_indistinguishability(&small, 1, TVD_TRIALS, seeds.child(1).value())?;
    let tl = sketched_indistinguishability(&large, 1, TVD_TRIALS, seeds.child(2).value())?;
    Ok((
        ts.value <= SMALL_SPIKE_TVD_BOUND && tl.value >= LARGE_SPIKE_TVD_FLOOR,
        format!(
            "small spike (n={n}) TVD {:.4} +- {:.4} (bound {SMALL_SPIKE_TVD_BOUND}); large spike (n={LARGE_SPIKE_N}) TVD {:.4} +- {:.4} (floor {LARGE_SPIKE_TVD_FLOOR})",
            ts.value, ts.ci_halfwidth, tl.value, tl.ci_halfwidth
        ),
    ))
}

/// Runs criterion `id` with randomness derived from `seed`.
pub fn run_criterion(id: u8, seed: u64) -> Result<CriterionOutcome, SuiteError> {
    let seeds = SeedTree::new(seed).child(label::RUN).child(id as u64);
    let t = Instant::now();
    let (pass, detail) = match id {
        1 => attack_end_to_end(seeds)?,
        2 => negative_control(seeds)?,
        3 => siegel(seeds)?,
        4 => preprocessing(seeds)?,
        5 => pmf_ratio()?,
        6 => normalization()?,
        7 => cell(seeds)?,
        8 => covariance(seeds)?,
        9 => conditional_gap(seeds)?,
        10 => planted_recovery(seeds)?,
        11 => hard_gaps(seeds)?,
        12 => singular(seeds)?,
        13 => mgf(seeds)?,
        14 => indistinguishability(seeds)?,
        other => return Err(SuiteError::Unknown(other)),
    };
    Ok(CriterionOutcome { id, title: title(id).to_string(), pass, detail, seconds: t.elapsed().as_secs_f64() })
}

impl CriterionOutcome {
    /// One-line summary.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} [{}] {} ({:.1}s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}
