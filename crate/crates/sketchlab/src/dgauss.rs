//! Discrete Gaussian distributions over the integers.
//!
//! Variances are covariance parameters: the 1-D weight of `z` is
//! `exp(-z² / (2σ²))`, and an ellipsoidal distribution with covariance `Σ`
//! has weight `exp(-xᵀ Σ⁻¹ x / 2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, OrthonormalBasis, RealMatrix};

/// Below this variance the 1-D sampler inverts a table instead of rejecting.
pub const TABLE_VARIANCE_LIMIT: f64 = 4.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgaussError {
    #[error("variance must be positive and finite, got {variance}")]
    NonPositiveVariance { variance: f64 },
    #[error("smallest covariance eigenvalue {min_eigenvalue} is below the smoothing requirement {required}")]
    VarianceTooSmall { min_eigenvalue: f64, required: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn check_variance(variance: f64) -> Result<f64, DgaussError> {
    if variance.is_finite() && variance > 0.0 {
        Ok(variance)
    } else {
        Err(DgaussError::NonPositiveVariance { variance })
    }
}

/// A validated 1-D variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GaussianSpec(f64);

impl GaussianSpec {
    pub fn new(variance: f64) -> Result<Self, DgaussError> {
        check_variance(variance).map(GaussianSpec)
    }

    pub fn variance(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GaussianSpec {
    type Error = DgaussError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        GaussianSpec::new(v)
    }
}

impl From<GaussianSpec> for f64 {
    fn from(s: GaussianSpec) -> f64 {
        s.0
    }
}

/// Covariance `(3σ²/4)·P_{V⊥} + (σ²/4)·I`: variance `σ²` off `V` and `σ²/4` on `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceGaussianSpec {
    pub basis: OrthonormalBasis,
    pub variance: GaussianSpec,
}

impl SubspaceGaussianSpec {
    pub fn new(basis: OrthonormalBasis, variance: f64) -> Result<Self, DgaussError> {
        Ok(SubspaceGaussianSpec { basis, variance: GaussianSpec::new(variance)? })
    }

    pub fn dim(&self) -> usize {
        self.basis.ambient_dim()
    }

    /// Dense covariance matrix.
    pub fn covariance(&self) -> RealMatrix {
        let n = self.dim();
        let s2 = self.variance.variance();
        let mut c = RealMatrix::identity(n);
        for i in 0..n {
            c.set(i, i, s2);
        }
        for v in self.basis.vectors() {
            for i in 0..n {
                for j in 0..n {
                    c.set(i, j, c.get(i, j) - 0.75 * s2 * v[i] * v[j]);
                }
            }
        }
        c
    }
}

/// Unnormalized weight `exp(-z²/(2σ²))`.
fn rho(z: f64, variance: f64) -> f64 {
    (-z * z / (2.0 * variance)).exp()
}

/// Half-width of the support kept by truncated sums and tables: `⌈12σ⌉ + 1`.
pub fn tail_cut(variance: f64) -> i64 {
    (12.0 * variance.sqrt()).ceil() as i64 + 1
}

/// Normalizer `Z(σ²) = Σ_z exp(-z²/(2σ²))`.
///
/// Below unit variance sums directly over the truncated support. Otherwise
/// uses the theta-function identity
/// `Z = √(2πσ²)·(1 + 2 Σ_{k≥1} exp(-2π²σ²k²))`, which is exact and avoids
/// summation error for wide supports.
pub fn normalizer(variance: f64) -> Result<f64, DgaussError> {
    let variance = check_variance(variance)?;
    if variance < 1.0 {
        let t = tail_cut(variance);
        Ok(1.0 + 2.0 * (1..=t).map(|z| rho(z as f64, variance)).sum::<f64>())
    } else {
        let mut s = 1.0;
        for k in 1..=6 {
            let k = k as f64;
            s += 2.0 * (-2.0 * std::f64::consts::PI.powi(2) * variance * k * k).exp();
        }
        Ok((2.0 * std::f64::consts::PI * variance).sqrt() * s)
    }
}

/// Probability of `v` under the 1-D discrete Gaussian.
pub fn pmf_dgauss_1d(v: i64, variance: f64) -> Result<f64, DgaussError> {
    Ok(rho(v as f64, variance) / normalizer(variance)?)
}

/// Probability that a continuous `N(0, σ²)` sample rounds to `v` (nearest integer).
pub fn pmf_rounded_gaussian(v: i64, variance: f64) -> Result<f64, DgaussError> {
    let variance = check_variance(variance)?;
    Ok(rounded_mass(v as f64, 0.0, variance.sqrt()))
}

/// Mass of `N(center, σ²)` on `[v - ½, v + ½]`, computed in the tail that avoids cancellation.
fn rounded_mass(v: f64, center: f64, sigma: f64) -> f64 {
    let k = std::f64::consts::SQRT_2 * sigma;
    let d = (v - center).abs();
    if d < 0.5 {
        0.5 * (libm::erf((0.5 - d) / k) + libm::erf((0.5 + d) / k))
    } else {
        0.5 * (libm::erfc((d - 0.5) / k) - libm::erfc((d + 0.5) / k))
    }
}

/// Exact sampler for the 1-D discrete Gaussian centred at zero.
#[derive(Clone, Debug)]
pub struct DiscreteGaussian1d {
    variance: f64,
    sigma: f64,
    method: Method1d,
}

#[derive(Clone, Debug)]
enum Method1d {
    /// Cumulative probabilities for `-t..=t`.
    Table { cdf: Vec<f64>, t: i64 },
    /// Rounded continuous proposal accepted with probability `p / (c q)`.
    Rejection { envelope: f64, normalizer: f64 },
}

impl DiscreteGaussian1d {
    pub fn new(variance: f64) -> Result<Self, DgaussError> {
        let variance = check_variance(variance)?;
        let sigma = variance.sqrt();
        let method = if variance < TABLE_VARIANCE_LIMIT {
            let t = tail_cut(variance);
            let weights: Vec<f64> = (-t..=t).map(|z| rho(z as f64, variance)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            let cdf = weights
                .iter()
                .map(|w| {
                    acc += w / total;
                    acc
                })
                .collect();
            Method1d::Table { cdf, t }
        } else {
            let z = normalizer(variance)?;
            let envelope = (1.0 / (24.0 * variance)).exp() * (2.0 * std::f64::consts::PI).sqrt() * sigma / z;
            Method1d::Rejection { envelope, normalizer: z }
        };
        Ok(DiscreteGaussian1d { variance, sigma, method })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// The rejection envelope `max_z p(z)/q(z)` bound, or 1 for table inversion.
    pub fn envelope(&self) -> f64 {
        match self.method {
            Method1d::Table { .. } => 1.0,
            Method1d::Rejection { envelope, .. } => envelope,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match &self.method {
            Method1d::Table { cdf, t } => {
                let u: f64 = rng.random();
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                idx as i64 - t
            }
            Method1d::Rejection { envelope, normalizer } => loop {
                let x: f64 = rng.sample::<f64, _>(StandardNormal) * self.sigma;
                let z = x.round();
                let p = rho(z, self.variance) / normalizer;
                let q = rounded_mass(z, 0.0, self.sigma);
                let accept = p / (envelope * q);
                if rng.random::<f64>() < accept {
                    return z as i64;
                }
            },
        }
    }
}

/// One draw from the 1-D discrete Gaussian of the given variance.
pub fn sample_dgauss_1d<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Result<i64, DgaussError> {
    Ok(DiscreteGaussian1d::new(variance)?.sample(rng))
}

/// Variance `r₀² = 4·ln(2n·10⁶)/π` of the per-coordinate smoothing step in dimension `n`.
pub fn smoothing_variance(n: usize) -> f64 {
    4.0 * (2.0 * n as f64 * 1e6).ln() / std::f64::consts::PI
}

/// Exact sampler for `D_{Z, c, s²}` with arbitrary real centre `c` and fixed `s²`.
///
/// Draws `z₀` from the half-Gaussian on `{0, 1, ...}`, a sign bit `b`, sets
/// `z = b + (2b − 1) z₀`, and accepts with probability
/// `exp(−(z − r)²/(2s²) + z₀²/(2s²))` where `r` is the fractional part of `c`.
#[derive(Clone, Debug)]
pub struct ShiftedSampler {
    variance: f64,
    half_cdf: Vec<f64>,
}

impl ShiftedSampler {
    pub fn new(variance: f64) -> Result<Self, DgaussError> {
        let variance = check_variance(variance)?;
        let t = tail_cut(variance);
        let weights: Vec<f64> = (0..=t).map(|z| rho(z as f64, variance)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let half_cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(ShiftedSampler { variance, half_cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, center: f64, rng: &mut R) -> i64 {
        let base = center.floor();
        let r = center - base;
        loop {
            let u: f64 = rng.random();
            let z0 = self.half_cdf.partition_point(|&c| c <= u).min(self.half_cdf.len() - 1) as f64;
            let b = rng.random::<bool>();
            let z = if b { 1.0 + z0 } else { -z0 };
            let log_accept = -((z - r) * (z - r) - z0 * z0) / (2.0 * self.variance);
            if rng.random::<f64>() < log_accept.exp() {
                return base as i64 + z as i64;
            }
        }
    }
}

/// Sampler for a discrete Gaussian over `Z^n` with a given covariance.
///
/// Isotropic covariances use independent exact 1-D draws. Otherwise a
/// continuous `y ~ N(0, Σ − r₀² I)` is drawn and each coordinate is then
/// drawn from `D_{Z, y_i, r₀²}`, which requires `λ_min(Σ) ≥ 2 r₀²`.
#[derive(Clone, Debug)]
pub struct EllipsoidalSampler {
    dim: usize,
    kind: EllipsoidKind,
}

#[derive(Clone, Debug)]
enum EllipsoidKind {
    Isotropic(DiscreteGaussian1d),
    Subspace { basis: OrthonormalBasis, perp_scale: f64, iso_scale: f64, inner: ShiftedSampler },
    Dense { cholesky: RealMatrix, inner: ShiftedSampler },
}

impl EllipsoidalSampler {
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self, DgaussError> {
        Ok(EllipsoidalSampler { dim, kind: EllipsoidKind::Isotropic(DiscreteGaussian1d::new(variance)?) })
    }

    /// Sampler for `D(V⊥, σ²)`. Empty `V` and `V = R^n` are isotropic.
    pub fn subspace(spec: &SubspaceGaussianSpec) -> Result<Self, DgaussError> {
        let n = spec.dim();
        let s2 = spec.variance.variance();
        let k = spec.basis.len();
        if k == 0 {
            return Self::isotropic(n, s2);
        }
        if k == n {
            return Self::isotropic(n, s2 / 4.0);
        }
        let r0 = smoothing_variance(n);
        let min_eig = s2 / 4.0;
        if min_eig < 2.0 * r0 {
            return Err(DgaussError::VarianceTooSmall { min_eigenvalue: min_eig, required: 2.0 * r0 });
        }
        Ok(EllipsoidalSampler {
            dim: n,
            kind: EllipsoidKind::Subspace {
                basis: spec.basis.clone(),
                perp_scale: (0.75 * s2).sqrt(),
                iso_scale: (0.25 * s2 - r0).sqrt(),
                inner: ShiftedSampler::new(r0)?,
            },
        })
    }

    /// Sampler for an arbitrary symmetric positive definite covariance.
    pub fn dense(cov: &RealMatrix) -> Result<Self, DgaussError> {
        let n = cov.rows();
        if cov.cols() != n {
            return Err(DgaussError::DimensionMismatch { expected: n, got: cov.cols() });
        }
        let r0 = smoothing_variance(n);
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cov.get(i, j));
        let min_eig = m.symmetric_eigenvalues().min();
        if !(min_eig >= 2.0 * r0) {
            return Err(DgaussError::VarianceTooSmall { min_eigenvalue: min_eig, required: 2.0 * r0 });
        }
        let shifted = m - nalgebra::DMatrix::identity(n, n) * r0;
        let l = shifted
            .cholesky()
            .ok_or(DgaussError::VarianceTooSmall { min_eigenvalue: min_eig, required: 2.0 * r0 })?
            .l();
        let cholesky = RealMatrix::from_row_major(n, n, (0..n * n).map(|k| l[(k / n, k % n)]).collect())
            .expect("square");
        Ok(EllipsoidalSampler { dim: n, kind: EllipsoidKind::Dense { cholesky, inner: ShiftedSampler::new(r0)? } })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        match &self.kind {
            EllipsoidKind::Isotropic(d) => (0..self.dim).map(|_| d.sample(rng)).collect(),
            EllipsoidKind::Subspace { basis, perp_scale, iso_scale, inner } => {
                let mut g1: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                basis.project_out(&mut g1);
                g1.iter()
                    .map(|&g| {
                        let y = perp_scale * g + iso_scale * rng.sample::<f64, _>(StandardNormal);
                        inner.sample(y, rng)
                    })
                    .collect()
            }
            EllipsoidKind::Dense { cholesky, inner } => {
                let g: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                cholesky.mul_vec(&g).into_iter().map(|y| inner.sample(y, rng)).collect()
            }
        }
    }
}

/// One draw from the discrete Gaussian over `Z^n` with covariance `cov`.
pub fn sample_dgauss_ellipsoidal<R: Rng + ?Sized>(cov: &RealMatrix, rng: &mut R) -> Result<Vec<i64>, DgaussError> {
    Ok(EllipsoidalSampler::dense(cov)?.sample(rng))
}

/// Whether a query is drawn from the discrete or the continuous distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    Discrete,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Query {
    Discrete(Vec<i64>),
    Continuous(Vec<f64>),
}

/// Reusable sampler for queries shaped by a subspace `V` at variance `σ²`.
#[derive(Clone, Debug)]
pub struct SubspaceQuerySampler {
    spec: SubspaceGaussianSpec,
    discrete: Option<EllipsoidalSampler>,
}

impl SubspaceQuerySampler {
    pub fn new(spec: SubspaceGaussianSpec, mode: QueryMode) -> Result<Self, DgaussError> {
        let discrete = match mode {
            QueryMode::Discrete => Some(EllipsoidalSampler::subspace(&spec)?),
            QueryMode::Continuous => None,
        };
        Ok(SubspaceQuerySampler { spec, discrete })
    }

    pub fn spec(&self) -> &SubspaceGaussianSpec {
        &self.spec
    }

    /// Integer query; panics if built in continuous mode.
    pub fn sample_discrete<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        self.discrete.as_ref().expect("sampler built in discrete mode").sample(rng)
    }

    /// `g = P_{V⊥} g₁ + g₂` with `g₁ ~ N(0, 3σ²/4)`, `g₂ ~ N(0, σ²/4)`.
    pub fn sample_continuous<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.spec.dim();
        let s2 = self.spec.variance.variance();
        let (a, b) = ((0.75 * s2).sqrt(), (0.25 * s2).sqrt());
        let mut g1: Vec<f64> = (0..n).map(|_| a * rng.sample::<f64, _>(StandardNormal)).collect();
        self.spec.basis.project_out(&mut g1);
        g1.iter().map(|&x| x + b * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Query {
        match self.discrete {
            Some(ref d) => Query::Discrete(d.sample(rng)),
            None => Query::Continuous(self.sample_continuous(rng)),
        }
    }
}

/// One query from `D(V⊥, σ²)` (discrete) or `G(V⊥, σ²)` (continuous).
pub fn sample_subspace_query<R: Rng + ?Sized>(
    basis: &OrthonormalBasis,
    variance: f64,
    mode: QueryMode,
    rng: &mut R,
) -> Result<Query, DgaussError> {
    let spec = SubspaceGaussianSpec::new(basis.clone(), variance)?;
    Ok(SubspaceQuerySampler::new(spec, mode)?.sample(rng))
}

/// Empirical second moment `E⟨u, x⟩²` over integer samples.
pub fn directional_second_moment(samples: &[Vec<i64>], u: &[f64]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|x| {
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            dot(&xf, u).powi(2)
        })
        .sum();
    total / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_variance_values() {
        // Oracle: direct summation over |z| ≤ 40 in this test.
        let z: f64 = (-40..=40).map(|k: i64| (-(k * k) as f64 / 2.0).exp()).sum();
        assert_abs_diff_eq!(normalizer(1.0).unwrap(), z, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 2.506628, epsilon = 1e-5);
        assert_abs_diff_eq!(pmf_dgauss_1d(0, 1.0).unwrap(), 0.398942, epsilon = 1e-5);
    }

    #[test]
    fn theta_identity_matches_direct_sum() {
        for v in [1.0, 2.5, 1e4, 1e9] {
            let t = tail_cut(v);
            let direct = 1.0 + 2.0 * (1..=t).map(|z| rho(z as f64, v)).sum::<f64>();
            assert_abs_diff_eq!(normalizer(v).unwrap() / direct, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_variance_pmf_matches_rounded_gaussian() {
        let v = 1e6;
        for z in [0i64, 1, 500, 1000, 3000] {
            let p = pmf_dgauss_1d(z, v).unwrap();
            let q = pmf_rounded_gaussian(z, v).unwrap();
            assert!((p / q - 1.0).abs() <= 1e-3, "z={z}");
        }
    }

    #[test]
    fn rejects_bad_variance() {
        assert!(matches!(pmf_dgauss_1d(0, 0.0), Err(DgaussError::NonPositiveVariance { .. })));
        assert!(matches!(DiscreteGaussian1d::new(-1.0), Err(DgaussError::NonPositiveVariance { .. })));
        assert!(matches!(DiscreteGaussian1d::new(f64::NAN), Err(DgaussError::NonPositiveVariance { .. })));
    }

    #[test]
    fn envelope_is_tight() {
        for v in [4.25, 10.0, 100.0, 1e6] {
            let d = DiscreteGaussian1d::new(v).unwrap();
            assert!(d.envelope() <= 1.0 + 1e-2, "v={v}");
            let z = normalizer(v).unwrap();
            let worst = (0..=(3.0 * v.sqrt()) as i64)
                .map(|k| (rho(k as f64, v) / z) / pmf_rounded_gaussian(k, v).unwrap())
                .fold(0.0, f64::max);
            assert!(worst <= d.envelope() * (1.0 + 1e-9), "v={v}: {worst} > {}", d.envelope());
        }
    }

    #[test]
    fn shifted_sampler_matches_pmf() {
        let s2 = 25.0;
        let sampler = ShiftedSampler::new(s2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = 2.3;
        let n = 200_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(sampler.sample(center, &mut rng)).or_insert(0usize) += 1;
        }
        let z: f64 = (-100..=100).map(|k| rho(k as f64 - center, s2)).sum();
        for k in -5..=10i64 {
            let p = rho(k as f64 - center, s2) / z;
            let got = *counts.get(&k).unwrap_or(&0) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got - p).abs() <= 5.0 * se, "k={k}: {got} vs {p}");
        }
    }
}
