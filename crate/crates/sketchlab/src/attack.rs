//! Adaptive attack on norm-gap oracles, failure certificates and diagnostics.
//!
//! The attack engine sees the oracle only through [`GapOracle::answer`].
//! [`invariant_diagnostic`] is the single white-box entry point and takes the
//! true sketch explicitly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgauss::{smoothing_variance, DgaussError, QueryMode, SubspaceGaussianSpec, SubspaceQuerySampler};
use crate::numerics::{dot, gram_schmidt_residual, top_right_singular_vector, NumericsError, OrthonormalBasis, RealMatrix};
use crate::seed::{label, mix, SeedTree};
use crate::sketch::{turnstile_updates, GapNormParams, GapOracle, IntegerSketch, SketchError, Update};

/// Queries per independently seeded chunk; fixes the stream layout regardless of threads.
pub const QUERY_CHUNK: usize = 250;

/// Upper limit on grid points for the exact `ζZ` grid.
pub const MAX_GRID_POINTS: usize = 100_000;

/// Tolerance for orthogonality of accepted directions to the learned basis.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("oracle failure: {0}")]
    Oracle(#[from] SketchError),
    #[error(transparent)]
    Dgauss(#[from] DgaussError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("bad attack config: {0}")]
    BadConfig(String),
    #[error("no exploit found in {trials} trials")]
    NoExploitFound { trials: usize },
    #[error("oracle never answered 1 in {samples} samples")]
    NoPositives { samples: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Variance grid over `[α, αB]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    /// `points` values spaced geometrically from `α` to `αB`.
    Geometric { points: usize },
    /// `[α, αB] ∩ ζZ` with `ζ = 1/(20(Bn)² log(Bn))`.
    Exact,
}

/// Form of the slack in the acceptance test `z ≥ σ² + σ²/4 + slack`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackMode {
    /// `σ²/(14Br)`.
    Relative,
    /// `1/(14Br)`.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub params: GapNormParams,
    /// Queries per grid point `m`.
    pub samples_per_point: usize,
    pub grid: GridSpec,
    /// Minimum positives to attempt a direction; default `m/(100B²n)`.
    #[serde(default)]
    pub positive_floor: Option<f64>,
    #[serde(default = "default_slack")]
    pub slack: SlackMode,
    /// Default `r + 1`.
    #[serde(default)]
    pub round_cap: Option<usize>,
    #[serde(default = "default_verification_trials")]
    pub verification_trials: usize,
    /// Termination threshold; default `max(ζ, 5/√m)`.
    #[serde(default)]
    pub zeta: Option<f64>,
}

fn default_slack() -> SlackMode {
    SlackMode::Relative
}

fn default_verification_trials() -> usize {
    10_000
}

impl AttackConfig {
    pub fn new(params: GapNormParams, samples_per_point: usize, grid: GridSpec) -> Self {
        AttackConfig {
            params,
            samples_per_point,
            grid,
            positive_floor: None,
            slack: SlackMode::Relative,
            round_cap: None,
            verification_trials: default_verification_trials(),
            zeta: None,
        }
    }

    /// Checks the config against dimension `n`.
    pub fn validate(&self, n: usize) -> Result<(), AttackError> {
        if self.samples_per_point < 100 {
            return Err(AttackError::BadConfig("samples_per_point must be at least 100".into()));
        }
        let floor = 8.0 * smoothing_variance(n);
        if self.params.alpha < floor {
            return Err(DgaussError::VarianceTooSmall { min_eigenvalue: self.params.alpha / 4.0, required: floor / 4.0 }.into());
        }
        if let GridSpec::Geometric { points } = self.grid {
            if points < 2 {
                return Err(AttackError::BadConfig("geometric grid needs at least 2 points".into()));
            }
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0 && z < 0.5) {
                return Err(AttackError::BadConfig("zeta must lie in (0, 0.5)".into()));
            }
        }
        Ok(())
    }

    /// `ζ = 1/(20(Bn)² log(Bn))`.
    pub fn paper_zeta(&self, n: usize) -> f64 {
        let bn = self.params.b * n as f64;
        1.0 / (20.0 * bn * bn * bn.ln())
    }

    pub fn termination_zeta(&self, n: usize) -> f64 {
        self.zeta
            .unwrap_or_else(|| self.paper_zeta(n).max(5.0 / (self.samples_per_point as f64).sqrt()))
    }

    pub fn floor(&self, n: usize) -> f64 {
        self.positive_floor
            .unwrap_or(self.samples_per_point as f64 / (100.0 * self.params.b * self.params.b * n as f64))
    }

    pub fn slack_at(&self, sigma2: f64, r: usize) -> f64 {
        let base = 1.0 / (14.0 * self.params.b * r as f64);
        match self.slack {
            SlackMode::Relative => sigma2 * base,
            SlackMode::Absolute => base,
        }
    }

    /// Ascending variance grid.
    pub fn grid_points(&self, n: usize) -> Result<Vec<f64>, AttackError> {
        let (lo, hi) = (self.params.alpha, self.params.alpha * self.params.b);
        match self.grid {
            GridSpec::Geometric { points } => {
                let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
                let mut g: Vec<f64> = (0..points).map(|i| lo * ratio.powi(i as i32)).collect();
                g[points - 1] = hi;
                Ok(g)
            }
            GridSpec::Exact => {
                let zeta = self.paper_zeta(n);
                let first = (lo / zeta).ceil() as u64;
                let last = (hi / zeta).floor() as u64;
                let count = last.saturating_sub(first) as usize + 1;
                if count > MAX_GRID_POINTS {
                    return Err(AttackError::BadConfig(format!(
                        "exact grid has {count} points, limit {MAX_GRID_POINTS}"
                    )));
                }
                Ok((first..=last).map(|k| k as f64 * zeta).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateSide {
    /// `σ² ≥ αB/2` and rate `≤ 1 − ζ`.
    High,
    /// `σ² ≤ 2α` and rate `≥ ζ`.
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureCertificate {
    pub basis: OrthonormalBasis,
    pub sigma2: f64,
    pub side: CertificateSide,
    pub rate: f64,
    pub samples: usize,
    pub zeta: f64,
}

impl FailureCertificate {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

/// One record per `(round, σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub round: usize,
    pub sigma2: f64,
    pub rate: f64,
    pub m_prime: usize,
    pub score: Option<f64>,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedDirection {
    pub round: usize,
    pub sigma2: f64,
    pub score: f64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackState {
    /// Next round to execute, starting at 1.
    pub round: usize,
    pub basis: OrthonormalBasis,
    pub records: Vec<GridRecord>,
    pub accepted: Vec<AcceptedDirection>,
}

impl AttackState {
    pub fn new(n: usize) -> Self {
        AttackState { round: 1, basis: OrthonormalBasis::empty(n), records: Vec::new(), accepted: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RoundOutcome {
    Certificate(FailureCertificate),
    Direction(Vec<f64>),
    NoProgress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub certificate: Option<FailureCertificate>,
    pub state: AttackState,
}

/// Answers for `count` queries from `sampler`, drawn in fixed seeded chunks.
fn query_batch(
    oracle: &dyn GapOracle,
    sampler: &SubspaceQuerySampler,
    count: usize,
    seeds: SeedTree,
) -> Result<Vec<(Vec<i64>, bool)>, AttackError> {
    let chunks: Vec<usize> = (0..count.div_ceil(QUERY_CHUNK)).collect();
    let run_chunk = |&c: &usize| -> Result<Vec<(Vec<i64>, bool)>, AttackError> {
        let mut rng = seeds.child(c as u64).rng();
        let len = QUERY_CHUNK.min(count - c * QUERY_CHUNK);
        (0..len)
            .map(|_| {
                let x = sampler.sample_discrete(&mut rng);
                let bit = oracle.answer(&turnstile_updates(&x))?;
                Ok((x, bit))
            })
            .collect()
    };
    let parts: Vec<_> = if oracle.parallel_safe() {
        chunks.par_iter().map(run_chunk).collect::<Result<_, _>>()?
    } else {
        chunks.iter().map(run_chunk).collect::<Result<_, _>>()?
    };
    Ok(parts.into_iter().flatten().collect())
}

/// Top right singular vector of the positives and its score `z(v) = mean ⟨v, x⟩²`.
pub fn top_positive_direction(positives: &[Vec<i64>]) -> Result<(Vec<f64>, f64), AttackError> {
    let n = positives.first().ok_or(NumericsError::Empty)?.len();
    let data = positives.iter().flat_map(|x| x.iter().map(|&v| v as f64)).collect();
    let m = RealMatrix::from_row_major(positives.len(), n, data)?;
    let top = top_right_singular_vector(&m)?;
    let score = top.value * top.value / positives.len() as f64;
    Ok((top.vector, score))
}

/// One round: every grid point is sampled and tested; the first direction
/// passing the score test is residualized against `V` and returned.
pub fn round_step(
    state: &mut AttackState,
    oracle: &dyn GapOracle,
    config: &AttackConfig,
    r_budget: usize,
    seeds: SeedTree,
) -> Result<RoundOutcome, AttackError> {
    let n = oracle.dimension();
    if state.basis.ambient_dim() != n {
        return Err(AttackError::DimensionMismatch { expected: n, got: state.basis.ambient_dim() });
    }
    config.validate(n)?;
    let zeta = config.termination_zeta(n);
    let floor = config.floor(n);
    let (lo_side, hi_side) = config.params.promise_variances();
    let m = config.samples_per_point;
    let round = state.round;
    let mut chosen: Option<Vec<f64>> = None;
    for (g, &sigma2) in config.grid_points(n)?.iter().enumerate() {
        let spec = SubspaceGaussianSpec::new(state.basis.clone(), sigma2)?;
        let sampler = SubspaceQuerySampler::new(spec, QueryMode::Discrete)?;
        let batch = query_batch(oracle, &sampler, m, seeds.path(&[round as u64, g as u64]))?;
        let positives: Vec<Vec<i64>> = batch.into_iter().filter(|(_, a)| *a).map(|(x, _)| x).collect();
        let rate = positives.len() as f64 / m as f64;
        let mut record = GridRecord { round, sigma2, rate, m_prime: positives.len(), score: None, accepted: false };
        let side = if sigma2 >= hi_side && rate <= 1.0 - zeta {
            Some(CertificateSide::High)
        } else if sigma2 <= lo_side && rate >= zeta {
            Some(CertificateSide::Low)
        } else {
            None
        };
        if let Some(side) = side {
            state.records.push(record);
            return Ok(RoundOutcome::Certificate(FailureCertificate {
                basis: state.basis.clone(),
                sigma2,
                side,
                rate,
                samples: m,
                zeta,
            }));
        }
        if chosen.is_none() && !positives.is_empty() && positives.len() as f64 >= floor {
            let (v, score) = top_positive_direction(&positives)?;
            record.score = Some(score);
            if score >= 1.25 * sigma2 + config.slack_at(sigma2, r_budget) {
                if let Ok(residual) = gram_schmidt_residual(&v, &state.basis) {
                    record.accepted = true;
                    state.accepted.push(AcceptedDirection { round, sigma2, score, vector: residual.clone() });
                    chosen = Some(residual);
                }
            }
        }
        state.records.push(record);
    }
    state.round += 1;
    match chosen {
        Some(v) => {
            state.basis.extend_with(&v)?;
            Ok(RoundOutcome::Direction(v))
        }
        None => Ok(RoundOutcome::NoProgress),
    }
}

/// Runs rounds until a certificate appears or the round cap is reached.
/// Positives and top direction at a single variance, without termination tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionProbe {
    pub sigma2: f64,
    pub rate: f64,
    pub positives: usize,
    /// `None` when there are no positives.
    pub direction: Option<Vec<f64>>,
    pub score: Option<f64>,
}

/// Samples `m` queries from `D(V^⊥, σ²)` and extracts the top positive direction.
pub fn probe_grid_point(
    oracle: &dyn GapOracle,
    basis: &OrthonormalBasis,
    sigma2: f64,
    m: usize,
    seed: u64,
) -> Result<DirectionProbe, AttackError> {
    let spec = SubspaceGaussianSpec::new(basis.clone(), sigma2)?;
    let sampler = SubspaceQuerySampler::new(spec, QueryMode::Discrete)?;
    let batch = query_batch(oracle, &sampler, m, SeedTree::new(seed).child(label::ATTACK))?;
    let positives: Vec<Vec<i64>> = batch.into_iter().filter(|(_, a)| *a).map(|(x, _)| x).collect();
    let rate = positives.len() as f64 / m.max(1) as f64;
    let (direction, score) = if positives.is_empty() {
        (None, None)
    } else {
        let (v, z) = top_positive_direction(&positives)?;
        (Some(v), Some(z))
    };
    Ok(DirectionProbe { sigma2, rate, positives: positives.len(), direction, score })
}

pub fn run_attack(
    oracle: &dyn GapOracle,
    r_budget: usize,
    config: &AttackConfig,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    let n = oracle.dimension();
    config.validate(n)?;
    let seeds = SeedTree::new(seed).child(label::ATTACK);
    let cap = config.round_cap.unwrap_or(r_budget + 1);
    let mut state = AttackState::new(n);
    while state.round <= cap {
        if let RoundOutcome::Certificate(c) = round_step(&mut state, oracle, config, r_budget, seeds)? {
            return Ok(AttackResult { certificate: Some(c), state });
        }
    }
    Ok(AttackResult { certificate: None, state })
}

/// A query the oracle answers wrongly by the certificate's norm thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exploit {
    pub x: Vec<i64>,
    pub norm_sq: f64,
    pub answer: bool,
    pub wrong: bool,
}

impl Exploit {
    /// Wrong iff `answer = 0 ∧ ‖x‖² > αB(n−d)/3` or `answer = 1 ∧ ‖x‖² < 3α(n−d)`.
    pub fn classify(x: Vec<i64>, answer: bool, params: GapNormParams, d: usize) -> Self {
        let norm_sq = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        let free = (x.len() - d) as f64;
        let wrong = if answer {
            norm_sq < 3.0 * params.alpha * free
        } else {
            norm_sq > params.alpha * params.b * free / 3.0
        };
        Exploit { x, norm_sq, answer, wrong }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Fraction of trials answered on the wrong side for the certificate.
    pub failure_rate: f64,
    pub trials: usize,
    pub exploits: Vec<Exploit>,
}

/// Samples fresh queries at the certificate and keeps the wrongly answered ones.
pub fn verify_certificate(
    oracle: &dyn GapOracle,
    cert: &FailureCertificate,
    params: GapNormParams,
    trials: usize,
    seed: u64,
) -> Result<Verification, AttackError> {
    let n = oracle.dimension();
    if cert.basis.ambient_dim() != n {
        return Err(AttackError::DimensionMismatch { expected: n, got: cert.basis.ambient_dim() });
    }
    let spec = SubspaceGaussianSpec::new(cert.basis.clone(), cert.sigma2)?;
    let sampler = SubspaceQuerySampler::new(spec, QueryMode::Discrete)?;
    let batch = query_batch(oracle, &sampler, trials, SeedTree::new(seed).child(label::VERIFY))?;
    let target = cert.side == CertificateSide::Low;
    let mislabeled = batch.iter().filter(|(_, a)| *a == target).count();
    let exploits: Vec<Exploit> = batch
        .into_iter()
        .filter(|(_, a)| *a == target)
        .map(|(x, a)| Exploit::classify(x, a, params, cert.dim()))
        .filter(|e| e.wrong)
        .collect();
    if exploits.is_empty() {
        return Err(AttackError::NoExploitFound { trials });
    }
    Ok(Verification { failure_rate: mislabeled as f64 / trials as f64, trials, exploits })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Mean of `⟨u,x⟩²` over positives minus the mean over all samples.
    pub delta: f64,
    pub standard_error: f64,
    pub positive_rate: f64,
    pub positives: usize,
}

/// Estimates `E[⟨u,x⟩² | f(x)=1] − E[⟨u,x⟩²]` for `x ~ D(V⊥, σ²)`.
pub fn conditional_gap_estimate(
    oracle: &dyn GapOracle,
    spec: &SubspaceGaussianSpec,
    u: &[f64],
    m: usize,
    seed: u64,
) -> Result<GapEstimate, AttackError> {
    if m < 1000 {
        return Err(AttackError::BadConfig("conditional gap needs m ≥ 1000".into()));
    }
    if u.len() != oracle.dimension() {
        return Err(AttackError::DimensionMismatch { expected: oracle.dimension(), got: u.len() });
    }
    let sampler = SubspaceQuerySampler::new(spec.clone(), QueryMode::Discrete)?;
    let batch = query_batch(oracle, &sampler, m, SeedTree::new(seed).child(label::STATS))?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (x, a) in &batch {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let w = dot(&xf, u).powi(2);
        if *a {
            pos.push(w)
        } else {
            neg.push(w)
        }
    }
    let k = pos.len();
    if k == 0 {
        return Err(AttackError::NoPositives { samples: m });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let var = |v: &[f64]| {
        if v.len() < 2 {
            return 0.0;
        }
        let mu = mean(v);
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let total = (pos.iter().sum::<f64>() + neg.iter().sum::<f64>()) / m as f64;
    let delta = mean(&pos) - total;
    // Δ̂ = Σ_pos w (1/k − 1/m) − Σ_neg w / m, conditional on k.
    let (mf, kf) = (m as f64, k as f64);
    let variance = kf * (1.0 / kf - 1.0 / mf).powi(2) * var(&pos) + neg.len() as f64 * var(&neg) / (mf * mf);
    Ok(GapEstimate { delta, standard_error: variance.sqrt(), positive_rate: kf / mf, positives: k })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub round: usize,
    pub dim: usize,
    /// `‖P_V − P_W‖₂` with `W` the closest `dim(V)`-subspace of the row span.
    pub distance: f64,
}

/// White-box: distance from the learned basis to the closest subspace of `rowspan(A)`.
pub fn invariant_diagnostic(state: &AttackState, sketch: &IntegerSketch) -> Result<InvariantReport, AttackError> {
    let k = state.basis.len();
    let report = |distance| InvariantReport { round: state.round, dim: k, distance };
    if k == 0 {
        return Ok(report(0.0));
    }
    let n = sketch.n();
    let row_basis = OrthonormalBasis::from_rows(&sketch.matrix().to_real())?;
    let v = DMatrix::from_fn(k, n, |i, j| state.basis.vectors()[i][j]);
    let q = DMatrix::from_fn(row_basis.len(), n, |i, j| row_basis.vectors()[i][j]);
    if k > row_basis.len() {
        return Ok(report(1.0));
    }
    // Principal vectors in the row span: right singular vectors of V·Qᵀ mapped through Q.
    let svd = (&v * q.transpose()).svd(false, true);
    let vt = svd.v_t.expect("requested");
    let w = vt.rows(0, k).into_owned() * &q;
    let diff = v.transpose() * &v - w.transpose() * &w;
    let distance = diff.symmetric_eigenvalues().iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    Ok(report(distance.min(1.0)))
}

/// Answers 1 iff `⟨u, x⟩² ≥ threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDirectionOracle {
    pub direction: Vec<f64>,
    pub threshold: f64,
}

impl GapOracle for PlantedDirectionOracle {
    fn dimension(&self) -> usize {
        self.direction.len()
    }

    fn answer(&self, updates: &[Update]) -> Result<bool, SketchError> {
        let mut p = 0.0;
        for u in updates {
            let c = self
                .direction
                .get(u.index)
                .ok_or(SketchError::IndexOutOfRange { index: u.index, n: self.direction.len() })?;
            p += c * u.delta as f64;
        }
        Ok(p * p >= self.threshold)
    }
}

/// Answers the same bit for every query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstantOracle {
    pub n: usize,
    pub bit: bool,
}

impl GapOracle for ConstantOracle {
    fn dimension(&self) -> usize {
        self.n
    }

    fn answer(&self, _: &[Update]) -> Result<bool, SketchError> {
        Ok(self.bit)
    }
}

/// Ignores the norm: a pseudo-random bit keyed by the query and a seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoinOracle {
    pub n: usize,
    pub seed: u64,
    pub probability: f64,
}

impl GapOracle for CoinOracle {
    fn dimension(&self) -> usize {
        self.n
    }

    fn answer(&self, updates: &[Update]) -> Result<bool, SketchError> {
        let mut h = mix(self.seed);
        for u in updates {
            h = mix(h ^ mix(u.index as u64) ^ (u.delta as u64).rotate_left(17));
        }
        Ok(ChaCha8Rng::seed_from_u64(h).random::<f64>() < self.probability)
    }
}
