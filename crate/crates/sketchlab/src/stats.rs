//! Statistical harnesses: empirical TVD, cell-rounding closeness, pmf ratios,
//! chi-square mixture bound, moment generating bound and singular values.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgauss::{pmf_dgauss_1d, pmf_rounded_gaussian, DgaussError, DiscreteGaussian1d};
use crate::lattice::{fundamental_cell_uniform, preprocess_sketch, CellRounder, IntMatrix, LatticeError};
use crate::numerics::{orthonormalize_rows, NumericsError};
use crate::seed::{label, SeedTree};

/// Minimum samples per side for [`empirical_tvd`].
pub const MIN_TVD_SAMPLES: usize = 1000;
/// Largest dimension for histogram TVD.
pub const MAX_HISTOGRAM_DIM: usize = 3;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Desk-scale TVD threshold for closeness claims.
pub const TVD_THRESHOLD: f64 = 0.05;
/// Largest sketch dimension for the cell check.
pub const MAX_CELL_DIM: usize = 4;
/// Points per side used by the energy-distance test.
pub const ENERGY_SUBSAMPLE: usize = 1000;
pub const ENERGY_PERMUTATIONS: usize = 199;
/// Energy test passes when its permutation p-value is at least this.
pub const ENERGY_P_THRESHOLD: f64 = 0.01;
/// Constant `C` in the cell floor `σ ≥ 10·C·ln(n)·ℓ`.
pub const CELL_FLOOR_CONSTANT: f64 = 1.0;
/// Relative slack on the moment generating bound.
pub const MGF_SLACK: f64 = 1.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples per side, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dgauss(#[from] DgaussError),
}

/// How two sample sets are compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TvdMode {
    /// Product of per-axis equal-mass bins, for dimension at most 3.
    Histogram,
    /// 1-D histogram of projections onto `direction`.
    Projection { direction: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvdEstimate {
    pub value: f64,
    /// Half-width of the bootstrap 95% interval; 0 when no resamples were drawn.
    pub ci_halfwidth: f64,
    pub samples: (usize, usize),
    pub dim: usize,
    pub bins_per_axis: usize,
    pub mode: TvdMode,
}

/// Equal-mass bins per axis so the total cell count is about `N^{1/3}`.
pub fn bins_per_axis(samples: usize, dim: usize) -> usize {
    ((samples as f64).powf(1.0 / (3.0 * dim as f64)).ceil() as usize).max(2)
}

struct Binning {
    edges: Vec<Vec<f64>>,
    bins: usize,
}

impl Binning {
    fn new(a: &[Vec<f64>], b: &[Vec<f64>], dim: usize, bins: usize) -> Self {
        let edges = (0..dim)
            .map(|axis| {
                let mut pooled: Vec<f64> = a.iter().chain(b).map(|x| x[axis]).collect();
                pooled.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
                (1..bins).map(|k| pooled[k * pooled.len() / bins]).collect()
            })
            .collect();
        Binning { edges, bins }
    }

    fn cell(&self, x: &[f64]) -> usize {
        self.edges.iter().zip(x).fold(0, |acc, (e, &v)| acc * self.bins + e.partition_point(|&t| t <= v))
    }

    fn cells(&self) -> usize {
        self.bins.pow(self.edges.len() as u32)
    }
}

fn tvd_from_cells(ca: &[usize], cb: &[usize], cells: usize) -> f64 {
    let mut ha = vec![0f64; cells];
    let mut hb = vec![0f64; cells];
    ca.iter().for_each(|&c| ha[c] += 1.0);
    cb.iter().for_each(|&c| hb[c] += 1.0);
    let (na, nb) = (ca.len() as f64, cb.len() as f64);
    0.5 * ha.iter().zip(&hb).map(|(p, q)| (p / na - q / nb).abs()).sum::<f64>()
}

/// Histogram TVD with `resamples` bootstrap replicates for the interval.
pub fn empirical_tvd_with(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    mode: TvdMode,
    resamples: usize,
    seed: u64,
) -> Result<TvdEstimate, StatsError> {
    let need = MIN_TVD_SAMPLES;
    if a.len() < need || b.len() < need {
        return Err(StatsError::TooFewSamples { got: a.len().min(b.len()), need });
    }
    let dim = a[0].len();
    if let Some(x) = a.iter().chain(b).find(|x| x.len() != dim) {
        return Err(StatsError::DimensionMismatch { expected: dim, got: x.len() });
    }
    let (pa, pb, hist_dim) = match &mode {
        TvdMode::Histogram => {
            if dim > MAX_HISTOGRAM_DIM {
                return Err(StatsError::DimensionTooLarge { dim, max: MAX_HISTOGRAM_DIM });
            }
            (a.to_vec(), b.to_vec(), dim)
        }
        TvdMode::Projection { direction } => {
            if direction.len() != dim {
                return Err(StatsError::DimensionMismatch { expected: dim, got: direction.len() });
            }
            let proj = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
                s.iter().map(|x| vec![crate::numerics::dot(x, direction)]).collect()
            };
            (proj(a), proj(b), 1)
        }
    };
    let bins = bins_per_axis(a.len().min(b.len()), hist_dim);
    let binning = Binning::new(&pa, &pb, hist_dim, bins);
    let ca: Vec<usize> = pa.iter().map(|x| binning.cell(x)).collect();
    let cb: Vec<usize> = pb.iter().map(|x| binning.cell(x)).collect();
    let value = tvd_from_cells(&ca, &cb, binning.cells());
    let mut ci_halfwidth = 0.0;
    if resamples > 0 {
        let mut rng = SeedTree::new(seed).child(label::STATS).rng();
        let mut reps: Vec<f64> = (0..resamples)
            .map(|_| {
                let ra: Vec<usize> = (0..ca.len()).map(|_| ca[rng.random_range(0..ca.len())]).collect();
                let rb: Vec<usize> = (0..cb.len()).map(|_| cb[rng.random_range(0..cb.len())]).collect();
                tvd_from_cells(&ra, &rb, binning.cells())
            })
            .collect();
        reps.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        let q = |p: f64| reps[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
        ci_halfwidth = 0.5 * (q(0.975) - q(0.025));
    }
    Ok(TvdEstimate { value, ci_halfwidth, samples: (a.len(), b.len()), dim, bins_per_axis: bins, mode })
}

/// Histogram TVD with the default bootstrap.
pub fn empirical_tvd(a: &[Vec<f64>], b: &[Vec<f64>], mode: TvdMode, seed: u64) -> Result<TvdEstimate, StatsError> {
    empirical_tvd_with(a, b, mode, BOOTSTRAP_RESAMPLES, seed)
}

/// Two-sample energy distance with a permutation p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub subsample: usize,
    pub permutations: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Energy distance `2E|X−Y| − E|X−X'| − E|Y−Y'|` on subsamples of both sets.
pub fn energy_distance_test(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<EnergyTest, StatsError> {
    let k = ENERGY_SUBSAMPLE.min(a.len()).min(b.len());
    if k < 2 {
        return Err(StatsError::TooFewSamples { got: k, need: 2 });
    }
    let mut rng = SeedTree::new(seed).path(&[label::STATS, 1]).rng();
    let mut pooled: Vec<&Vec<f64>> = sample_indices(&mut rng, a.len(), k).iter().map(|i| &a[i]).collect();
    pooled.extend(sample_indices(&mut rng, b.len(), k).iter().map(|i| &b[i]));
    let total = 2 * k;
    let dist: Vec<f64> = (0..total * total).map(|ij| euclid(pooled[ij / total], pooled[ij % total])).collect();
    let stat = |labels: &[bool]| -> f64 {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for i in 0..total {
            for j in 0..total {
                let d = dist[i * total + j];
                match (labels[i], labels[j]) {
                    (true, true) => xx += d,
                    (false, false) => yy += d,
                    _ => xy += d,
                }
            }
        }
        let kk = (k * k) as f64;
        xy / kk - xx / kk - yy / kk
    };
    let mut labels: Vec<bool> = (0..total).map(|i| i < k).collect();
    let observed = stat(&labels);
    let mut exceed = 0;
    for _ in 0..ENERGY_PERMUTATIONS {
        for i in (1..total).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        if stat(&labels) >= observed {
            exceed += 1;
        }
    }
    Ok(EnergyTest {
        statistic: observed,
        p_value: (exceed + 1) as f64 / (ENERGY_PERMUTATIONS + 1) as f64,
        subsample: k,
        permutations: ENERGY_PERMUTATIONS,
    })
}

/// Which pair of image distributions the cell check compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellVariant {
    /// `Q x + η` for discrete `x`, `η` uniform on the cell, against `N(0, QΣQᵀ)`.
    Smoothed,
    /// Cell point of `Q g` for continuous `g` against `Q x` for discrete `x`.
    Rounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: CellVariant,
    pub r: usize,
    pub n: usize,
    pub sigma2: f64,
    pub certified_length: f64,
    pub floor_sigma: f64,
    pub tvd: Option<TvdEstimate>,
    pub energy: Option<EnergyTest>,
    pub threshold: f64,
    pub pass: bool,
}

/// Distributional check of the cell-rounding closeness for `Σ = σ²I`.
///
/// The sketch is preprocessed and mapped to its orthonormal form `Q = R·A′`.
/// Uses histogram TVD for `r ≤ 3` and the energy test for `r = 4`.
pub fn cell_lemma_check(
    a: &IntMatrix,
    entry_bound: i64,
    sigma2: f64,
    trials: usize,
    variant: CellVariant,
    seed: u64,
) -> Result<CellReport, StatsError> {
    let pre = preprocess_sketch(a, entry_bound)?;
    let aug = &pre.augmented;
    let (r, n) = (aug.rows(), aug.cols());
    if r > MAX_CELL_DIM {
        return Err(StatsError::DimensionTooLarge { dim: r, max: MAX_CELL_DIM });
    }
    let sigma = sigma2.sqrt();
    let floor_sigma = 10.0 * CELL_FLOOR_CONSTANT * (n as f64).ln() * pre.achieved_length;
    if !(sigma >= floor_sigma) {
        return Err(StatsError::PreconditionUnmet(format!(
            "σ = {sigma} is below the floor {floor_sigma} set by the certified length {}",
            pre.achieved_length
        )));
    }
    let (q, change) = orthonormalize_rows(&aug.to_real())?;
    let rounder = CellRounder::for_transformed_columns(aug, &change)?;
    let d = DiscreteGaussian1d::new(sigma2)?;
    let seeds = SeedTree::new(seed).child(label::STATS);
    let chunks = trials.div_ceil(1000);
    let draw = |side: u64, f: &(dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<f64> + Sync)| -> Vec<Vec<f64>> {
        (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut rng = seeds.path(&[side, c as u64]).rng();
                let len = 1000.min(trials - c * 1000);
                (0..len).map(|_| f(&mut rng)).collect::<Vec<_>>()
            })
            .collect()
    };
    let discrete_image = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let x: Vec<f64> = (0..n).map(|_| d.sample(rng) as f64).collect();
        q.mul_vec(&x)
    };
    let (left, right) = match variant {
        CellVariant::Smoothed => (
            draw(1, &|rng| {
                let mut y = discrete_image(rng);
                let eta = fundamental_cell_uniform(&rounder, rng);
                y.iter_mut().zip(&eta).for_each(|(a, b)| *a += b);
                y
            }),
            draw(2, &|rng| (0..r).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()),
        ),
        CellVariant::Rounded => (
            draw(1, &|rng| {
                let g: Vec<f64> = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                rounder.cell_point(&q.mul_vec(&g)).point
            }),
            draw(2, &discrete_image),
        ),
    };
    let (tvd, energy, pass) = if r <= MAX_HISTOGRAM_DIM {
        let t = empirical_tvd(&left, &right, TvdMode::Histogram, seed)?;
        let pass = t.value <= TVD_THRESHOLD;
        (Some(t), None, pass)
    } else {
        let e = energy_distance_test(&left, &right, seed)?;
        let pass = e.p_value >= ENERGY_P_THRESHOLD;
        (None, Some(e), pass)
    };
    let threshold = if tvd.is_some() { TVD_THRESHOLD } else { ENERGY_P_THRESHOLD };
    Ok(CellReport {
        variant,
        r,
        n,
        sigma2,
        certified_length: pre.achieved_length,
        floor_sigma,
        tvd,
        energy,
        threshold,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmfRatioReport {
    pub sigma2: f64,
    pub n: usize,
    pub c: f64,
    pub z_range: i64,
    /// `max |p(z)/q(z) − 1|` over the 1-D range.
    pub max_deviation: f64,
    pub argmax: i64,
    /// Worst deviation of the `n`-fold product ratio, `max |ρ^n − 1|` over extreme `ρ`.
    pub product_deviation: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Exact comparison of the discrete Gaussian pmf with the rounded continuous pmf.
///
/// `z_range` defaults to `⌈3σ⌉`.
pub fn pmf_ratio_check(sigma2: f64, n: usize, c: f64, z_range: Option<i64>) -> Result<PmfRatioReport, StatsError> {
    let floor = (n as f64).powf(c + 1.0);
    if !(sigma2 > floor) {
        return Err(StatsError::PreconditionUnmet(format!("σ² = {sigma2} must exceed n^(C+1) = {floor}")));
    }
    let range = z_range.unwrap_or((3.0 * sigma2.sqrt()).ceil() as i64);
    let (mut max_deviation, mut argmax) = (0.0f64, 0i64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for z in -range..=range {
        let ratio = pmf_dgauss_1d(z, sigma2)? / pmf_rounded_gaussian(z, sigma2)?;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        if (ratio - 1.0).abs() > max_deviation {
            max_deviation = (ratio - 1.0).abs();
            argmax = z;
        }
    }
    let nf = n as i32;
    let product_deviation = (hi.powi(nf) - 1.0).abs().max((lo.powi(nf) - 1.0).abs());
    let bound = (n as f64).powf(-c);
    Ok(PmfRatioReport {
        sigma2,
        n,
        c,
        z_range: range,
        max_deviation,
        argmax,
        product_deviation,
        bound,
        pass: product_deviation <= bound,
    })
}

/// Mixing distribution `μ` for the chi-square bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mixture {
    /// Point mass at the origin.
    Origin,
    /// `±a·e₁` with equal weights.
    SymmetricPair { a: f64 },
    /// `N(0, τ² I)`.
    Gaussian { tau: f64 },
}

impl Mixture {
    fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Mixture::Origin => vec![0.0; d],
            Mixture::SymmetricPair { a } => {
                let mut z = vec![0.0; d];
                z[0] = if rng.random() { a } else { -a };
                z
            }
            Mixture::Gaussian { tau } => (0..d).map(|_| tau * rng.sample::<f64, _>(StandardNormal)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub sigma2: f64,
    pub d: usize,
    pub mixture: Mixture,
    pub trials: usize,
    /// Estimate of `χ²(N(0,σ²I) ∗ μ ‖ N(0,σ²I))`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Estimate of `E e^{⟨z,z′⟩/σ²} − 1`.
    pub rhs: f64,
    pub rhs_se: f64,
    pub pass: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Monte Carlo of both sides of the chi-square mixture bound.
///
/// The left side uses `χ² = E_{x∼P}[dP/dQ(x)] − 1`, estimated unbiasedly by
/// `e^{⟨x,z⟩/σ² − ‖z‖²/(2σ²)}` with `x ∼ P` and an independent `z ∼ μ`.
pub fn chi_square_mixture_check(
    sigma2: f64,
    d: usize,
    mixture: Mixture,
    trials: usize,
    seed: u64,
) -> Result<ChiSquareReport, StatsError> {
    if d == 0 || d > 2 {
        return Err(StatsError::DimensionTooLarge { dim: d, max: 2 });
    }
    if trials < 2 {
        return Err(StatsError::TooFewSamples { got: trials, need: 2 });
    }
    let sigma = sigma2.sqrt();
    let mut rng = SeedTree::new(seed).child(label::STATS).rng();
    let mut lhs = Vec::with_capacity(trials);
    let mut rhs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let z0 = mixture.sample(d, &mut rng);
        let x: Vec<f64> = z0.iter().map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let z = mixture.sample(d, &mut rng);
        let zz = crate::numerics::dot(&z, &z);
        lhs.push((crate::numerics::dot(&x, &z) / sigma2 - zz / (2.0 * sigma2)).exp() - 1.0);
        let z1 = mixture.sample(d, &mut rng);
        let z2 = mixture.sample(d, &mut rng);
        rhs.push((crate::numerics::dot(&z1, &z2) / sigma2).exp() - 1.0);
    }
    let (l, lse) = mean_se(&lhs);
    let (r, rse) = mean_se(&rhs);
    Ok(ChiSquareReport {
        sigma2,
        d,
        mixture,
        trials,
        lhs: l,
        lhs_se: lse,
        rhs: r,
        rhs_se: rse,
        pass: l <= r + 3.0 * (lse * lse + rse * rse).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgfReport {
    pub a: f64,
    pub sigma2: f64,
    pub samples: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Monte Carlo `E[e^{a x y/σ²}]` for independent `x, y ∼ D(0, σ²)` against `(1−a²)^{−1/2}·1.02`.
pub fn mgf_check(a: f64, sigma2: f64, samples: usize, seed: u64) -> Result<MgfReport, StatsError> {
    if !(a.abs() < 1.0) {
        return Err(StatsError::PreconditionUnmet(format!("|a| = {} must be below 1", a.abs())));
    }
    if samples < 2 {
        return Err(StatsError::TooFewSamples { got: samples, need: 2 });
    }
    let d = DiscreteGaussian1d::new(sigma2)?;
    let mut rng = SeedTree::new(seed).child(label::STATS).rng();
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let (x, y) = (d.sample(&mut rng) as f64, d.sample(&mut rng) as f64);
            (a * x * y / sigma2).exp()
        })
        .collect();
    let (estimate, standard_error) = mean_se(&vals);
    let bound = MGF_SLACK / (1.0 - a * a).sqrt();
    Ok(MgfReport { a, sigma2, samples, estimate, standard_error, bound, pass: estimate <= bound })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularValueReport {
    pub rows: usize,
    pub cols: usize,
    pub noise: f64,
    pub trials: usize,
    /// Trials whose singular values all lie in `N·[√m − 3√n, √m + 3√n]`.
    pub within: usize,
    pub lower: f64,
    pub upper: f64,
    pub smallest: f64,
    pub largest: f64,
}

/// Singular values of `m × n` matrices with `D(0, N²)` entries against `N·[√m ∓ 3√n]`.
pub fn singular_value_check(
    rows: usize,
    cols: usize,
    noise: f64,
    trials: usize,
    seed: u64,
) -> Result<SingularValueReport, StatsError> {
    let d = DiscreteGaussian1d::new(noise * noise)?;
    let (mf, nf) = (rows as f64, cols as f64);
    let lower = noise * (mf.sqrt() - 3.0 * nf.sqrt());
    let upper = noise * (mf.sqrt() + 3.0 * nf.sqrt());
    let seeds = SeedTree::new(seed).child(label::STATS);
    let spectra: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds.child(t as u64).rng();
            let m = nalgebra::DMatrix::from_fn(rows, cols, |_, _| d.sample(&mut rng) as f64);
            let sv = crate::harddist::singular_values(&m);
            (sv.iter().cloned().fold(f64::INFINITY, f64::min), sv.iter().cloned().fold(0.0, f64::max))
        })
        .collect();
    let within = spectra.iter().filter(|(lo, hi)| *lo >= lower && *hi <= upper).count();
    Ok(SingularValueReport {
        rows,
        cols,
        noise,
        trials,
        within,
        lower,
        upper,
        smallest: spectra.iter().map(|s| s.0).fold(f64::INFINITY, f64::min),
        largest: spectra.iter().map(|s| s.1).fold(0.0, f64::max),
    })
}
