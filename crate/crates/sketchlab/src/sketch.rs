//! Integer linear sketches, turnstile streams and norm-gap oracles.
//!
//! An oracle built from a sketch sees a query only through `A·x`: the
//! [`Estimator`] receives the sketched vector and nothing else.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgauss::{DgaussError, DiscreteGaussian1d};
use crate::lattice::{IntMatrix, LatticeError};
use crate::numerics::{orthonormalize_rows, NumericsError, RealMatrix};
use crate::seed::{label, SeedTree};

/// Default number of calibration draws per promise side.
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SketchError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("update index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("sketched value overflowed 64 bits")]
    Overflow,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dgauss(#[from] DgaussError),
}

/// One turnstile update `x[index] += delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    pub index: usize,
    pub delta: i64,
}

/// The update sequence that builds `x` from zero, one update per nonzero coordinate.
pub fn turnstile_updates(x: &[i64]) -> Vec<Update> {
    x.iter()
        .enumerate()
        .filter(|(_, &d)| d != 0)
        .map(|(index, &delta)| Update { index, delta })
        .collect()
}

/// Norm-gap promise: answer 1 when `‖x‖² ≥ αB`, 0 when `‖x‖² ≤ α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapNormParams {
    pub alpha: f64,
    pub b: f64,
}

impl GapNormParams {
    pub fn new(alpha: f64, b: f64) -> Result<Self, SketchError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(SketchError::BadParams(format!("alpha must be positive, got {alpha}")));
        }
        if !(b.is_finite() && b >= 8.0) {
            return Err(SketchError::BadParams(format!("B must be at least 8, got {b}")));
        }
        Ok(GapNormParams { alpha, b })
    }

    /// Query variances at which isotropic queries sit on each promise side: `(2α, αB/2)`.
    pub fn promise_variances(&self) -> (f64, f64) {
        (2.0 * self.alpha, self.alpha * self.b / 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Sign,
    RoundedGaussian,
    Countsketch,
    ProjectionThreshold,
}

/// Family-specific knobs; unused fields are ignored by other families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchParams {
    pub alpha: f64,
    pub b: f64,
    /// Standard deviation of entries before rounding (rounded-gaussian, projection-threshold).
    #[serde(default = "default_entry_scale")]
    pub entry_scale: f64,
    /// Number of row groups for the sign family median.
    #[serde(default)]
    pub groups: Option<usize>,
    /// Independent hash rows for countsketch.
    #[serde(default)]
    pub hash_rows: Option<usize>,
    /// Entry cap `M`; defaults to `n²`.
    #[serde(default)]
    pub entry_cap: Option<i64>,
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
}

fn default_entry_scale() -> f64 {
    10.0
}

fn default_calibration_samples() -> usize {
    DEFAULT_CALIBRATION_SAMPLES
}

impl SketchParams {
    pub fn new(alpha: f64, b: f64) -> Self {
        SketchParams {
            alpha,
            b,
            entry_scale: default_entry_scale(),
            groups: None,
            hash_rows: None,
            entry_cap: None,
            calibration_samples: DEFAULT_CALIBRATION_SAMPLES,
        }
    }
}

/// Serializable description from which a sketch oracle is rebuilt deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSpec {
    pub family: FamilyKind,
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub params: SketchParams,
}

/// An integer sketch matrix with its orthonormal working form.
#[derive(Clone, Debug)]
pub struct IntegerSketch {
    matrix: IntMatrix,
    columns: Vec<i64>,
    entry_cap: i64,
    /// `Q = R·A` with orthonormal rows, when `A` has full row rank.
    orthonormal: Option<(RealMatrix, RealMatrix)>,
}

impl IntegerSketch {
    pub fn new(matrix: IntMatrix, entry_cap: i64) -> Result<Self, SketchError> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(SketchError::BadParams("sketch must be non-empty".into()));
        }
        if matrix.max_abs() > entry_cap {
            return Err(SketchError::BadParams(format!(
                "entry {} exceeds cap {entry_cap}",
                matrix.max_abs()
            )));
        }
        let (r, n) = (matrix.rows(), matrix.cols());
        let mut columns = vec![0i64; r * n];
        for i in 0..r {
            for j in 0..n {
                columns[j * r + i] = matrix.get(i, j);
            }
        }
        let orthonormal = orthonormalize_rows(&matrix.to_real()).ok();
        Ok(IntegerSketch { matrix, columns, entry_cap, orthonormal })
    }

    pub fn matrix(&self) -> &IntMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn r(&self) -> usize {
        self.matrix.rows()
    }

    pub fn entry_cap(&self) -> i64 {
        self.entry_cap
    }

    /// `(Q, R)` with orthonormal rows `Q = R·A`, if `A` has full row rank.
    pub fn orthonormal_form(&self) -> Option<&(RealMatrix, RealMatrix)> {
        self.orthonormal.as_ref()
    }

    fn column(&self, j: usize) -> &[i64] {
        let r = self.r();
        &self.columns[j * r..(j + 1) * r]
    }
}

/// `A·x` computed exactly.
pub fn apply(sketch: &IntegerSketch, x: &[i64]) -> Result<Vec<i64>, SketchError> {
    if x.len() != sketch.n() {
        return Err(SketchError::DimensionMismatch { expected: sketch.n(), got: x.len() });
    }
    sketch.matrix.mul_vec(x).map_err(|_| SketchError::Overflow)
}

/// Running sketch `A·x` of a turnstile stream.
#[derive(Clone, Debug)]
pub struct StreamState<'a> {
    sketch: &'a IntegerSketch,
    values: Vec<i64>,
}

impl<'a> StreamState<'a> {
    pub fn new(sketch: &'a IntegerSketch) -> Self {
        StreamState { sketch, values: vec![0; sketch.r()] }
    }

    pub fn ingest(&mut self, u: Update) -> Result<(), SketchError> {
        let n = self.sketch.n();
        if u.index >= n {
            return Err(SketchError::IndexOutOfRange { index: u.index, n });
        }
        for (v, &a) in self.values.iter_mut().zip(self.sketch.column(u.index)) {
            let add = a.checked_mul(u.delta).ok_or(SketchError::Overflow)?;
            *v = v.checked_add(add).ok_or(SketchError::Overflow)?;
        }
        Ok(())
    }

    pub fn ingest_all(&mut self, updates: &[Update]) -> Result<(), SketchError> {
        updates.iter().try_for_each(|&u| self.ingest(u))
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }
}

/// Norm estimator working only from the sketched vector.
#[derive(Clone, Debug)]
pub enum Estimator {
    /// Median over row groups of `‖A_g x‖² / |g|`.
    SignMedian { groups: Vec<std::ops::Range<usize>> },
    /// `(n/r)·‖R·(A x)‖²`.
    Projection { change: RealMatrix, n: usize },
    /// Median over hash rows of the bucket sum of squares.
    CountSketchMedian { hash_rows: usize, buckets: usize },
}

impl Estimator {
    /// Estimate of `‖x‖²` from `A·x`.
    pub fn l2_estimate(&self, sketched: &[i64]) -> f64 {
        match self {
            Estimator::SignMedian { groups } => median(
                groups
                    .iter()
                    .map(|g| sketched[g.clone()].iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / g.len() as f64)
                    .collect(),
            ),
            Estimator::Projection { change, n } => {
                (*n as f64 / change.rows() as f64) * projected_sq_norm(change, sketched)
            }
            Estimator::CountSketchMedian { hash_rows, buckets } => median(
                (0..*hash_rows)
                    .map(|h| {
                        sketched[h * buckets..(h + 1) * buckets].iter().map(|&v| (v as f64).powi(2)).sum::<f64>()
                    })
                    .collect(),
            ),
        }
    }
}

fn projected_sq_norm(change: &RealMatrix, sketched: &[i64]) -> f64 {
    let s: Vec<f64> = sketched.iter().map(|&v| v as f64).collect();
    change.mul_vec(&s).iter().map(|v| v * v).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Statistic the oracle thresholds: `‖Qx‖²` for projection-threshold, the norm estimate otherwise.
#[derive(Clone, Debug)]
enum Decision {
    ProjectedNorm(RealMatrix),
    Estimate,
}

/// Outcome of fitting the decision threshold on isotropic queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// `threshold / (αB·r/n)`; the fitted constant for projection-threshold.
    pub scale: f64,
    /// Fraction of low-side draws (`σ² = 2α`) answered 1.
    pub low_false_rate: f64,
    /// Fraction of high-side draws (`σ² = αB/2`) answered 0.
    pub high_false_rate: f64,
    pub samples_per_side: usize,
}

/// Anything that answers norm-gap queries presented as turnstile streams.
pub trait GapOracle: Send + Sync {
    fn dimension(&self) -> usize;

    fn answer(&self, updates: &[Update]) -> Result<bool, SketchError>;

    /// Whether queries may be answered concurrently.
    fn parallel_safe(&self) -> bool {
        true
    }

    fn answer_vector(&self, x: &[i64]) -> Result<bool, SketchError> {
        if x.len() != self.dimension() {
            return Err(SketchError::DimensionMismatch { expected: self.dimension(), got: x.len() });
        }
        self.answer(&turnstile_updates(x))
    }
}

/// Sketch-backed oracle: the bit is a function of `A·x` alone.
#[derive(Clone, Debug)]
pub struct GapNormOracle {
    sketch: IntegerSketch,
    estimator: Estimator,
    decision: Decision,
    params: GapNormParams,
    calibration: Calibration,
}

impl GapNormOracle {
    pub fn sketch(&self) -> &IntegerSketch {
        &self.sketch
    }

    pub fn params(&self) -> GapNormParams {
        self.params
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    fn statistic(&self, sketched: &[i64]) -> f64 {
        match &self.decision {
            Decision::ProjectedNorm(change) => projected_sq_norm(change, sketched),
            Decision::Estimate => self.estimator.l2_estimate(sketched),
        }
    }

    /// The bit for an already-sketched vector.
    pub fn decide(&self, sketched: &[i64]) -> bool {
        self.statistic(sketched) >= self.calibration.threshold
    }

    pub fn l2_estimate(&self, x: &[i64]) -> Result<f64, SketchError> {
        Ok(self.estimator.l2_estimate(&apply(&self.sketch, x)?))
    }
}

impl GapOracle for GapNormOracle {
    fn dimension(&self) -> usize {
        self.sketch.n()
    }

    fn answer(&self, updates: &[Update]) -> Result<bool, SketchError> {
        let mut state = StreamState::new(&self.sketch);
        state.ingest_all(updates)?;
        Ok(self.decide(state.values()))
    }
}

/// Ground-truth oracle answering from the exact norm: 1 iff `‖x‖² ≥ threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactNormOracle {
    pub n: usize,
    pub threshold: f64,
}

impl ExactNormOracle {
    /// Threshold `n·α·√B`, the geometric midpoint of the isotropic promise sides.
    pub fn for_params(n: usize, params: GapNormParams) -> Self {
        ExactNormOracle { n, threshold: n as f64 * params.alpha * params.b.sqrt() }
    }
}

impl GapOracle for ExactNormOracle {
    fn dimension(&self) -> usize {
        self.n
    }

    fn answer(&self, updates: &[Update]) -> Result<bool, SketchError> {
        let mut x = vec![0i64; self.n];
        for u in updates {
            if u.index >= self.n {
                return Err(SketchError::IndexOutOfRange { index: u.index, n: self.n });
            }
            x[u.index] += u.delta;
        }
        Ok(x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() >= self.threshold)
    }
}

/// Builds the sketch matrix and estimator of `spec` and calibrates the bit.
pub fn build_sketch(spec: &SketchSpec) -> Result<GapNormOracle, SketchError> {
    let (n, r) = (spec.n, spec.r);
    if r == 0 || n == 0 || r > n {
        return Err(SketchError::BadParams(format!("need 1 ≤ r ≤ n, got r={r}, n={n}")));
    }
    let params = GapNormParams::new(spec.params.alpha, spec.params.b)?;
    let cap = spec.params.entry_cap.unwrap_or((n * n) as i64);
    if cap < 1 {
        return Err(SketchError::BadParams("entry cap must be positive".into()));
    }
    let seeds = SeedTree::new(spec.seed);
    let mut rng = seeds.child(label::SKETCH).rng();
    let p = &spec.params;
    let (matrix, estimator, decision) = match spec.family {
        FamilyKind::Sign => {
            let m = IntMatrix::from_row_major(r, n, (0..r * n).map(|_| if rng.random() { 1 } else { -1 }).collect())?;
            let g = p.groups.unwrap_or((r / 8).max(1));
            if g == 0 || g > r {
                return Err(SketchError::BadParams(format!("groups must be in 1..={r}")));
            }
            let groups = (0..g).map(|k| (k * r / g)..((k + 1) * r / g)).collect();
            (m, Estimator::SignMedian { groups }, Decision::Estimate)
        }
        FamilyKind::RoundedGaussian | FamilyKind::ProjectionThreshold => {
            if !(p.entry_scale.is_finite() && p.entry_scale > 0.0) {
                return Err(SketchError::BadParams("entry_scale must be positive".into()));
            }
            let data = (0..r * n)
                .map(|_| loop {
                    let v = (rng.sample::<f64, _>(StandardNormal) * p.entry_scale).round() as i64;
                    if v.abs() <= cap {
                        break v;
                    }
                })
                .collect();
            let m = IntMatrix::from_row_major(r, n, data)?;
            let (_, change) = orthonormalize_rows(&m.to_real())?;
            let est = Estimator::Projection { change: change.clone(), n };
            let dec = if spec.family == FamilyKind::ProjectionThreshold {
                Decision::ProjectedNorm(change)
            } else {
                Decision::Estimate
            };
            (m, est, dec)
        }
        FamilyKind::Countsketch => {
            let h = p.hash_rows.unwrap_or(1);
            if h == 0 || r % h != 0 {
                return Err(SketchError::BadParams(format!("hash_rows {h} must divide r={r}")));
            }
            let buckets = r / h;
            let mut m = IntMatrix::zeros(r, n);
            for row_block in 0..h {
                for j in 0..n {
                    let b = rng.random_range(0..buckets);
                    m.set(row_block * buckets + b, j, if rng.random() { 1 } else { -1 });
                }
            }
            (m, Estimator::CountSketchMedian { hash_rows: h, buckets }, Decision::Estimate)
        }
    };
    let sketch = IntegerSketch::new(matrix, cap)?;
    gapnorm_oracle(sketch, estimator, decision_is_projection(&decision), params, p.calibration_samples, seeds)
}

fn decision_is_projection(d: &Decision) -> bool {
    matches!(d, Decision::ProjectedNorm(_))
}

/// Wraps a sketch and estimator into an oracle, fitting the decision threshold.
///
/// Draws isotropic discrete Gaussian queries at `σ² = 2α` and `σ² = αB/2`
/// and picks the threshold minimizing the larger of the two false rates.
/// When `threshold_projected_norm` is set the statistic is `‖Qx‖²`
/// (requires full row rank); otherwise it is the estimator's output.
pub fn gapnorm_oracle(
    sketch: IntegerSketch,
    estimator: Estimator,
    threshold_projected_norm: bool,
    params: GapNormParams,
    calibration_samples: usize,
    seeds: SeedTree,
) -> Result<GapNormOracle, SketchError> {
    if calibration_samples < 10 {
        return Err(SketchError::BadParams("calibration_samples must be at least 10".into()));
    }
    let decision = if threshold_projected_norm {
        let (_, change) = sketch
            .orthonormal_form()
            .ok_or_else(|| SketchError::BadParams("projection threshold needs full row rank".into()))?;
        Decision::ProjectedNorm(change.clone())
    } else {
        Decision::Estimate
    };
    let mut oracle = GapNormOracle {
        sketch,
        estimator,
        decision,
        params,
        calibration: Calibration {
            threshold: 0.0,
            scale: 0.0,
            low_false_rate: 0.0,
            high_false_rate: 0.0,
            samples_per_side: calibration_samples,
        },
    };
    let mut rng = seeds.child(label::CALIBRATION).rng();
    let (lo_var, hi_var) = params.promise_variances();
    let n = oracle.sketch.n();
    let mut draw = |variance: f64| -> Result<Vec<f64>, SketchError> {
        let d = DiscreteGaussian1d::new(variance)?;
        (0..calibration_samples)
            .map(|_| {
                let x: Vec<i64> = (0..n).map(|_| d.sample(&mut rng)).collect();
                Ok(oracle.statistic(&apply(&oracle.sketch, &x)?))
            })
            .collect()
    };
    let low = draw(lo_var)?;
    let high = draw(hi_var)?;
    let threshold = equal_error_threshold(&low, &high);
    let rate = |v: &[f64], above: bool| v.iter().filter(|&&s| (s >= threshold) == above).count() as f64 / v.len() as f64;
    let r = oracle.sketch.r() as f64;
    oracle.calibration = Calibration {
        threshold,
        scale: threshold / (params.alpha * params.b * r / n as f64),
        low_false_rate: rate(&low, true),
        high_false_rate: rate(&high, false),
        samples_per_side: calibration_samples,
    };
    Ok(oracle)
}

/// Threshold `t` minimizing `max(P_low[s ≥ t], P_high[s < t])` over the pooled sample values.
fn equal_error_threshold(low: &[f64], high: &[f64]) -> f64 {
    let mut lo = low.to_vec();
    let mut hi = high.to_vec();
    lo.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    hi.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut candidates: Vec<f64> = lo.iter().chain(&hi).copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut best = (f64::INFINITY, candidates[0]);
    for &t in &candidates {
        let false_low = (lo.len() - lo.partition_point(|&s| s < t)) as f64 / lo.len() as f64;
        let false_high = hi.partition_point(|&s| s < t) as f64 / hi.len() as f64;
        let worst = false_low.max(false_high);
        if worst < best.0 {
            best = (worst, t);
        }
    }
    best.1
}

/// Summary of a built sketch for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchInfo {
    pub family: FamilyKind,
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub entry_cap: i64,
    pub max_entry: i64,
    pub full_row_rank: bool,
    pub calibration: Calibration,
}

pub fn sketch_info(spec: &SketchSpec, oracle: &GapNormOracle) -> SketchInfo {
    SketchInfo {
        family: spec.family,
        n: spec.n,
        r: spec.r,
        seed: spec.seed,
        entry_cap: oracle.sketch.entry_cap(),
        max_entry: oracle.sketch.matrix().max_abs(),
        full_row_rank: oracle.sketch.orthonormal_form().is_some(),
        calibration: oracle.calibration.clone(),
    }
}
