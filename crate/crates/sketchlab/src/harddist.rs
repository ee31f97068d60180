//! Hard input distributions for sketching lower bounds, their separating
//! statistics, and the spiked-matrix indistinguishability experiment.
//!
//! Each family has a null side `D1` and a planted side `D2`. Unspecified
//! constants are fitted by [`calibrate`] on seeds independent of the ones used
//! to draw instances.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use rand::seq::index::sample_weighted;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgauss::{smoothing_variance, DgaussError, DiscreteGaussian1d};
use crate::lattice::{IntMatrix, LatticeError};
use crate::numerics::{orthonormalize_rows, NumericsError, RealMatrix};
use crate::seed::{label, mix, SeedTree};
use crate::stats::{empirical_tvd, StatsError, TvdEstimate, TvdMode};

/// D1 draws used to fit noise constants (99th percentile).
pub const CALIBRATION_DRAWS: usize = 100;
/// Base draws on which a spike constant must make the D2 event hold.
pub const SPIKE_CALIBRATION_DRAWS: usize = 20;
/// Multiplier applied to the smallest passing spike constant.
pub const SPIKE_MARGIN: f64 = 1.25;
/// Monte Carlo draws behind each expected p-norm.
pub const EXPECTED_NORM_DRAWS: usize = 10_000;
/// Largest sketch dimension for the indistinguishability experiment.
pub const MAX_SKETCH_ROWS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("sketch dimension {dim} exceeds {max}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error(transparent)]
    Dgauss(#[from] DgaussError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Schatten index `p ∈ [1, ∞]`; serialized as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SchattenIndex {
    Finite(f64),
    Infinity,
}

impl Serialize for SchattenIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SchattenIndex::Finite(p) => s.serialize_f64(*p),
            SchattenIndex::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SchattenIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "inf" => Ok(SchattenIndex::Infinity),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(SchattenIndex::Finite)
                .ok_or_else(|| serde::de::Error::custom("p must be finite or \"inf\"")),
            other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other}"))),
        }
    }
}

/// A hard-distribution family with its parameters. `noise` is `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HardFamily {
    LpSmall { n: usize, eps: f64, p: f64, noise: f64 },
    LpLarge { n: usize, eps: f64, p: f64, delta: f64, noise: f64 },
    OpnormAlpha { n: usize, alpha: f64, noise: f64 },
    OpnormEps { d: usize, eps: f64, noise: f64 },
    Kyfan { n: usize, s: usize, noise: f64 },
    Eigen { d: usize, eps: f64, noise: f64 },
    Psd { d: usize, eps: f64, p: SchattenIndex, noise: f64 },
    /// Entries of planted vectors are `±root`, so `N = root²`.
    Cs { n: usize, k: usize, eps: f64, root: i64 },
}

pub const FAMILY_NAMES: [&str; 8] = ["lp-small", "lp-large", "opnorm-alpha", "opnorm-eps", "kyfan", "eigen", "psd", "cs"];

impl HardFamily {
    /// Desk-scale parameters for each family.
    pub fn desk(name: &str) -> Result<Self, HardError> {
        Ok(match name {
            "lp-small" => HardFamily::LpSmall { n: 1024, eps: 0.1, p: 1.5, noise: 1e6 },
            "lp-large" => HardFamily::LpLarge { n: 1024, eps: 0.1, p: 4.0, delta: 1.0 / 9.0, noise: 1e4 },
            "opnorm-alpha" => HardFamily::OpnormAlpha { n: 64, alpha: 2.0, noise: 1e4 },
            "opnorm-eps" => HardFamily::OpnormEps { d: 64, eps: 0.1, noise: 1e4 },
            "kyfan" => HardFamily::Kyfan { n: 64, s: 4, noise: 1e4 },
            "eigen" => HardFamily::Eigen { d: 64, eps: 0.1, noise: 1e4 },
            "psd" => HardFamily::Psd { d: 64, eps: 0.1, p: SchattenIndex::Infinity, noise: 1e4 },
            "cs" => HardFamily::Cs { n: 256, k: 8, eps: 0.2, root: 256 },
            other => return Err(HardError::BadParams(format!("unknown family {other}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            HardFamily::LpSmall { .. } => "lp-small",
            HardFamily::LpLarge { .. } => "lp-large",
            HardFamily::OpnormAlpha { .. } => "opnorm-alpha",
            HardFamily::OpnormEps { .. } => "opnorm-eps",
            HardFamily::Kyfan { .. } => "kyfan",
            HardFamily::Eigen { .. } => "eigen",
            HardFamily::Psd { .. } => "psd",
            HardFamily::Cs { .. } => "cs",
        }
    }

    fn check(cond: bool, msg: impl Into<String>) -> Result<(), HardError> {
        if cond {
            Ok(())
        } else {
            Err(HardError::BadParams(msg.into()))
        }
    }

    /// Checks each family's stated parameter regime.
    ///
    /// The compressed-sensing condition `ε > √(k ln n / n)` is reported by
    /// [`HardFamily::regime_warnings`] instead of rejected.
    pub fn validate(&self) -> Result<(), HardError> {
        let noise_floor = |dim: usize, variance: f64| {
            Self::check(
                variance >= smoothing_variance(dim),
                format!("noise variance {variance} is below the smoothing floor {}", smoothing_variance(dim)),
            )
        };
        match *self {
            HardFamily::LpSmall { n, eps, p, noise } => {
                Self::check(n >= 2, "n ≥ 2")?;
                Self::check(eps > 0.0 && eps < 1.0, "ε in (0,1)")?;
                Self::check((1.0..=2.0).contains(&p), "p in [1,2]")?;
                noise_floor(n, noise * noise)
            }
            HardFamily::LpLarge { n, eps, p, delta, noise } => {
                Self::check(eps > 0.0 && eps < 1.0, "ε in (0,1)")?;
                Self::check(p > 2.0, "p > 2")?;
                Self::check(delta > 0.0 && delta < 1.0, "δ in (0,1)")?;
                Self::check(lp_large_t(delta) < n, "t < n")?;
                noise_floor(n, noise * noise)
            }
            HardFamily::OpnormAlpha { n, alpha, noise } => {
                Self::check(n >= 2, "n ≥ 2")?;
                Self::check(alpha > 1.0, "α > 1")?;
                noise_floor(n, noise)
            }
            HardFamily::OpnormEps { d, eps, noise } => {
                Self::check(d >= 2, "d ≥ 2")?;
                Self::check(eps > 0.0 && eps < 1.0 / 3.0, "ε in (0,1/3)")?;
                noise_floor(d, noise)
            }
            HardFamily::Kyfan { n, s, noise } => {
                Self::check(s >= 1 && s <= n, "1 ≤ s ≤ n")?;
                noise_floor(n, noise)
            }
            HardFamily::Eigen { d, eps, noise } => {
                Self::check(d >= 2, "d ≥ 2")?;
                Self::check(eps > 0.0 && eps < 1.0 / 3.0, "ε in (0,1/3)")?;
                noise_floor(d, noise)
            }
            HardFamily::Psd { d, eps, p, noise } => {
                Self::check(d >= 2, "d ≥ 2")?;
                Self::check(eps > 0.0 && eps < 1.0, "ε in (0,1)")?;
                if let SchattenIndex::Finite(p) = p {
                    Self::check(p >= 1.0, "p ≥ 1")?;
                }
                noise_floor(d, noise)
            }
            HardFamily::Cs { n, k, eps, root } => {
                Self::check(k >= 1 && 2 * k <= n, "1 ≤ k ≤ n/2")?;
                Self::check(eps > 0.0 && eps < 1.0, "ε in (0,1)")?;
                Self::check(root >= 1, "root ≥ 1")?;
                noise_floor(n, cs_noise_variance(n, k, eps, root))
            }
        }
    }

    /// Regime conditions that hold only asymptotically and are reported, not enforced.
    pub fn regime_warnings(&self) -> Vec<String> {
        match *self {
            HardFamily::Cs { n, k, eps, .. } => {
                let need = ((k as f64) * (n as f64).ln() / n as f64).sqrt();
                if eps > need {
                    vec![]
                } else {
                    vec![format!("ε = {eps} does not exceed √(k ln n / n) = {need:.4}")]
                }
            }
            _ => vec![],
        }
    }
}

/// `t = log₃(1/√δ)`, rounded up to an integer of at least 1.
pub fn lp_large_t(delta: f64) -> usize {
    let t = (1.0 / delta).ln() / (2.0 * 3f64.ln());
    ((t - 1e-9).ceil() as usize).max(1)
}

fn cs_noise_variance(n: usize, k: usize, eps: f64, root: i64) -> f64 {
    eps * (root * root) as f64 * k as f64 / n as f64
}

static EXPECTED_NORMS: Lazy<Mutex<HashMap<(usize, u64), f64>>> = Lazy::new(|| Mutex::new(HashMap::new()));

/// `E‖g‖_p` for `g ~ N(0, I_n)`, by Monte Carlo over a fixed seed; cached.
pub fn expected_p_norm(n: usize, p: f64) -> f64 {
    let key = (n, p.to_bits());
    if let Some(v) = EXPECTED_NORMS.lock().expect("cache lock").get(&key) {
        return *v;
    }
    let mut rng = SeedTree::new(mix(n as u64) ^ p.to_bits()).child(label::HARD).rng();
    let total: f64 = (0..EXPECTED_NORM_DRAWS)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs().powf(p)).sum::<f64>().powf(1.0 / p))
        .sum();
    let v = total / EXPECTED_NORM_DRAWS as f64;
    EXPECTED_NORMS.lock().expect("cache lock").insert(key, v);
    v
}

/// `‖x‖_p` of an integer vector.
pub fn p_norm(x: &[i64], p: f64) -> f64 {
    x.iter().map(|&v| (v as f64).abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Singular values, descending, via the smaller Gram matrix.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let g = if m.nrows() >= m.ncols() { m.transpose() * m } else { m * m.transpose() };
    let mut sv: Vec<f64> = g.symmetric_eigenvalues().iter().map(|&e| e.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    sv
}

fn to_dmatrix(m: &IntMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) as f64)
}

/// Eigenvalues of `[[0, X], [Xᵀ, 0]] + shift·I`, ascending.
pub fn symmetric_embedding_eigenvalues(m: &IntMatrix, shift: f64) -> Vec<f64> {
    let (r, c) = (m.rows(), m.cols());
    let e = DMatrix::from_fn(r + c, r + c, |i, j| {
        let base = match (i < r, j < r) {
            (true, false) => m.get(i, j - r) as f64,
            (false, true) => m.get(j, i - r) as f64,
            _ => 0.0,
        };
        if i == j {
            base + shift
        } else {
            base
        }
    });
    let mut ev: Vec<f64> = e.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ev
}

fn schatten(eigenvalues: &[f64], p: SchattenIndex) -> f64 {
    match p {
        SchattenIndex::Infinity => eigenvalues.iter().fold(0.0f64, |a, &e| a.max(e.abs())),
        SchattenIndex::Finite(p) => eigenvalues.iter().map(|e| e.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

/// `G + Σ s_i u_i v_iᵀ` with `G` entries `D(0, N²)` and `u_i, v_i ~ D(0, N·I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeModel {
    pub rows: usize,
    pub cols: usize,
    pub noise: f64,
    pub scales: Vec<f64>,
}

/// One planted rank-one term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub u: Vec<i64>,
    pub v: Vec<i64>,
}

struct SpikeDraw {
    noise: Vec<i64>,
    spikes: Vec<Spike>,
}

impl SpikeModel {
    fn draw<R: Rng + ?Sized>(&self, with_spikes: bool, rng: &mut R) -> Result<SpikeDraw, HardError> {
        let g = DiscreteGaussian1d::new(self.noise * self.noise)?;
        let noise = (0..self.rows * self.cols).map(|_| g.sample(rng)).collect();
        let mut spikes = Vec::new();
        if with_spikes {
            let s = DiscreteGaussian1d::new(self.noise)?;
            for _ in &self.scales {
                spikes.push(Spike {
                    u: (0..self.rows).map(|_| s.sample(rng)).collect(),
                    v: (0..self.cols).map(|_| s.sample(rng)).collect(),
                });
            }
        }
        Ok(SpikeDraw { noise, spikes })
    }

    /// Integer planted part `round(Σ s_i u_i v_iᵀ)`.
    pub fn planted(&self, spikes: &[Spike], scales: &[f64]) -> IntMatrix {
        let mut data = vec![0i64; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v: f64 = spikes.iter().zip(scales).map(|(sp, s)| s * (sp.u[i] * sp.v[j]) as f64).sum();
                data[i * self.cols + j] = v.round() as i64;
            }
        }
        IntMatrix::from_row_major(self.rows, self.cols, data).expect("shape")
    }

    fn assemble(&self, draw: &SpikeDraw, scales: &[f64]) -> (IntMatrix, Option<IntMatrix>) {
        let g = IntMatrix::from_row_major(self.rows, self.cols, draw.noise.clone()).expect("shape");
        if draw.spikes.is_empty() {
            return (g, None);
        }
        let planted = self.planted(&draw.spikes, scales);
        let sum = (0..self.rows * self.cols)
            .map(|k| draw.noise[k] + planted.get(k / self.cols, k % self.cols))
            .collect();
        (IntMatrix::from_row_major(self.rows, self.cols, sum).expect("shape"), Some(planted))
    }
}

/// Fitted constants for a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Noise constant `C` (`C₁` for the eigenvalue families); 1 when unused.
    pub noise_constant: f64,
    /// Spike constant: `C` for lp-large, `γ₁`, `α`, `γ`, `c` for the matrix families; 1 when unused.
    pub spike_constant: f64,
    pub calibration_seed: u64,
    /// Support family for cs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedFamily {
    pub family: HardFamily,
    pub constants: Constants,
}

impl CalibratedFamily {
    /// The spiked-matrix model behind the matrix families.
    pub fn spike_model(&self) -> Option<SpikeModel> {
        let k = self.constants.spike_constant;
        Some(match self.family {
            HardFamily::OpnormAlpha { n, alpha, noise } => {
                SpikeModel { rows: n, cols: n, noise, scales: vec![k * alpha / (n as f64).sqrt()] }
            }
            HardFamily::OpnormEps { d, eps, noise } => SpikeModel {
                rows: opnorm_eps_rows(d, eps),
                cols: d,
                noise,
                scales: vec![k * (eps / d as f64).sqrt()],
            },
            HardFamily::Kyfan { n, s, noise } => {
                SpikeModel { rows: n, cols: n, noise, scales: vec![k / (n as f64).sqrt(); s] }
            }
            HardFamily::Eigen { d, eps, noise } => SpikeModel { rows: d, cols: d, noise, scales: vec![k * eps] },
            HardFamily::Psd { d, noise, .. } => {
                SpikeModel { rows: d, cols: d, noise, scales: vec![k / (d as f64).sqrt()] }
            }
            _ => return None,
        })
    }
}

fn opnorm_eps_rows(d: usize, eps: f64) -> usize {
    (d as f64 / (eps * eps)).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    D1,
    D2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    Vector(Vec<i64>),
    Matrix(IntMatrix),
}

/// Hidden planted structure; `payload − planted` is the null draw.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<Spike>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<Payload>,
    /// Support set (cs) or planted coordinates (lp-large).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coordinates: Vec<usize>,
    /// Per-coordinate variance of the draw (lp-small).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardInstance {
    pub family: HardFamily,
    pub side: Side,
    pub seed: u64,
    pub payload: Payload,
    pub witness: Witness,
}

fn lp_large_spike(n: usize, eps: f64, p: f64, delta: f64, noise: f64, c: f64) -> (usize, f64) {
    let t = lp_large_t(delta);
    let e = expected_p_norm(n - t, p);
    (t, c * eps.powf(1.0 / p) * noise * e / (t as f64).powf(1.0 / p))
}

fn draw_vector<R: Rng + ?Sized>(n: usize, variance: f64, rng: &mut R) -> Result<Vec<i64>, HardError> {
    let g = DiscreteGaussian1d::new(variance)?;
    Ok((0..n).map(|_| g.sample(rng)).collect())
}

fn generate<R: Rng + ?Sized>(cal: &CalibratedFamily, side: Side, rng: &mut R) -> Result<(Payload, Witness), HardError> {
    let planted_side = side == Side::D2;
    match cal.family {
        HardFamily::LpSmall { n, eps, noise, .. } => {
            let scale = if planted_side { 1.0 + 4.0 * eps } else { 1.0 };
            let variance = (scale * noise).powi(2);
            Ok((Payload::Vector(draw_vector(n, variance, rng)?), Witness { variance: Some(variance), ..Witness::default() }))
        }
        HardFamily::LpLarge { n, eps, p, delta, noise } => {
            let mut x = draw_vector(n, noise * noise, rng)?;
            if !planted_side {
                return Ok((Payload::Vector(x), Witness::default()));
            }
            let (t, value) = lp_large_spike(n, eps, p, delta, noise, cal.constants.spike_constant);
            let coords: Vec<usize> = rand::seq::index::sample(rng, n, t).into_vec();
            let mut planted = vec![0i64; n];
            for &i in &coords {
                planted[i] = value.round() as i64;
                x[i] += planted[i];
            }
            Ok((
                Payload::Vector(x),
                Witness { planted: Some(Payload::Vector(planted)), coordinates: coords, ..Witness::default() },
            ))
        }
        HardFamily::Cs { n, k, eps, root } => {
            let mut y = draw_vector(n, cs_noise_variance(n, k, eps, root), rng)?;
            if !planted_side {
                return Ok((Payload::Vector(y), Witness::default()));
            }
            let supports = cal.constants.supports.as_ref().ok_or_else(|| HardError::BadParams("missing supports".into()))?;
            let support = supports.choose(rng).expect("non-empty family").clone();
            let mut planted = vec![0i64; n];
            for &i in &support {
                planted[i] = if rng.random() { root } else { -root };
                y[i] += planted[i];
            }
            Ok((
                Payload::Vector(y),
                Witness { planted: Some(Payload::Vector(planted)), coordinates: support, ..Witness::default() },
            ))
        }
        _ => {
            let model = cal.spike_model().expect("matrix family");
            let draw = model.draw(planted_side, rng)?;
            let (payload, planted) = model.assemble(&draw, &model.scales);
            let witness = match planted {
                Some(p) => Witness {
                    spikes: draw.spikes,
                    scales: model.scales.clone(),
                    planted: Some(Payload::Matrix(p)),
                    ..Witness::default()
                },
                None => Witness::default(),
            };
            Ok((Payload::Matrix(payload), witness))
        }
    }
}

/// Draws one instance of `side`; the null part of a D2 draw equals the D1 draw of the same seed.
pub fn gen_hard_instance(cal: &CalibratedFamily, side: Side, seed: u64) -> Result<HardInstance, HardError> {
    cal.family.validate()?;
    let mut rng = SeedTree::new(seed).child(label::HARD).rng();
    let (payload, witness) = generate(cal, side, &mut rng)?;
    Ok(HardInstance { family: cal.family.clone(), side, seed, payload, witness })
}

/// Outcome of the separating statistic on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEvent {
    pub side: Side,
    pub statistic: f64,
    pub threshold: f64,
    /// D1: `statistic ≤ threshold` (PSD: `≥`); D2: `statistic ≥ threshold` (PSD: `≤`).
    pub event_holds: bool,
    /// Support decoded from the payload (cs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoded: Option<Vec<usize>>,
}

fn matrix_of(payload: &Payload) -> Result<&IntMatrix, HardError> {
    match payload {
        Payload::Matrix(m) => Ok(m),
        Payload::Vector(_) => Err(HardError::BadParams("expected a matrix payload".into())),
    }
}

fn vector_of(payload: &Payload) -> Result<&[i64], HardError> {
    match payload {
        Payload::Vector(v) => Ok(v),
        Payload::Matrix(_) => Err(HardError::BadParams("expected a vector payload".into())),
    }
}

/// Best support in `supports` by the score `Σ_{i∈S} |y_i|`.
pub fn decode_support(y: &[i64], supports: &[Vec<usize>]) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for s in supports {
        let score: f64 = s.iter().map(|&i| (y[i] as f64).abs()).sum();
        if score > best.1 {
            best = (s.clone(), score);
        }
    }
    best.0.sort_unstable();
    best
}

/// Statistic and threshold for `payload` on `side`.
fn statistic(cal: &CalibratedFamily, side: Side, payload: &Payload) -> Result<(f64, f64, Option<Vec<usize>>), HardError> {
    let c = cal.constants.noise_constant;
    let gamma = cal.constants.spike_constant;
    let d1 = side == Side::D1;
    Ok(match cal.family {
        HardFamily::LpSmall { n, eps, p, noise } => {
            let tau = noise * expected_p_norm(n, p);
            (p_norm(vector_of(payload)?, p), if d1 { (1.0 + eps) * tau } else { (1.0 + 3.0 * eps) * tau }, None)
        }
        HardFamily::LpLarge { n, eps, p, delta, noise } => {
            let base = noise * expected_p_norm(n - lp_large_t(delta), p);
            (p_norm(vector_of(payload)?, p), if d1 { (1.0 + 2.0 * eps) * base } else { (1.0 + 4.0 * eps) * base }, None)
        }
        HardFamily::OpnormAlpha { n, alpha, noise } => {
            let op = singular_values(&to_dmatrix(matrix_of(payload)?))[0];
            let unit = c * noise * (n as f64).sqrt();
            (op, if d1 { 3.0 * unit } else { 3.0 * alpha * unit }, None)
        }
        HardFamily::OpnormEps { d, eps, noise } => {
            let op = singular_values(&to_dmatrix(matrix_of(payload)?))[0];
            let unit = c * noise * (d as f64).sqrt() / eps;
            (op, if d1 { (1.0 + 2.0 * eps) * unit } else { (1.0 + 4.0 * eps) * unit }, None)
        }
        HardFamily::Kyfan { n, s, noise } => {
            let sv = singular_values(&to_dmatrix(matrix_of(payload)?));
            let ky: f64 = sv.iter().take(s).sum();
            let unit = noise * s as f64 * (n as f64).sqrt();
            (ky, if d1 { c * unit } else { (0.9 * gamma - c) * unit }, None)
        }
        HardFamily::Eigen { d, eps, noise } => {
            let m = matrix_of(payload)?;
            let top = *symmetric_embedding_eigenvalues(m, 0.0).last().expect("non-empty");
            let base = c * noise * (d as f64).sqrt();
            let fro = to_dmatrix(m).norm();
            (top, if d1 { base } else { base + 2.0 * eps * fro }, None)
        }
        HardFamily::Psd { d, eps, p, noise } => {
            let ev = symmetric_embedding_eigenvalues(matrix_of(payload)?, c * noise * (d as f64).sqrt());
            (ev[0], if d1 { 0.0 } else { -eps * schatten(&ev, p) }, None)
        }
        HardFamily::Cs { k, root, .. } => {
            let supports = cal.constants.supports.as_ref().ok_or_else(|| HardError::BadParams("missing supports".into()))?;
            let (decoded, score) = decode_support(vector_of(payload)?, supports);
            (score, k as f64 * root as f64 / 2.0, Some(decoded))
        }
    })
}

/// Evaluates the family's separating event on an instance.
pub fn verify_gap_event(cal: &CalibratedFamily, instance: &HardInstance) -> Result<GapEvent, HardError> {
    let side = instance.side;
    let (stat, threshold, decoded) = statistic(cal, side, &instance.payload)?;
    let psd = matches!(cal.family, HardFamily::Psd { .. });
    let mut holds = match (side, psd) {
        (Side::D1, false) | (Side::D2, true) => stat <= threshold,
        (Side::D2, false) | (Side::D1, true) => stat >= threshold,
    };
    if let (Side::D2, Some(dec)) = (side, &decoded) {
        let mut truth = instance.witness.coordinates.clone();
        truth.sort_unstable();
        holds = holds && *dec == truth;
    }
    Ok(GapEvent { side, statistic: stat, threshold, event_holds: holds, decoded })
}

/// Builds `|F|` supports of size `k` with pairwise `|S Δ S′| ≥ k`, sampling
/// coordinates with weights that favour rarely covered ones.
pub fn build_support_family<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, HardError> {
    let bits = (k as f64 * (n as f64 / k as f64).log2() / 4.0).floor() as u32;
    let target = 1usize << bits.min(20);
    let cap = (2 * target * k).div_ceil(n);
    let mut counts = vec![0usize; n];
    let mut family: Vec<Vec<usize>> = Vec::with_capacity(target);
    let mut attempts = 0usize;
    while family.len() < target {
        attempts += 1;
        if attempts > 200 * target + 10_000 {
            return Err(HardError::BadParams(format!("support family stalled at {} of {target}", family.len())));
        }
        let mut s = sample_weighted(rng, n, |i| (cap.saturating_sub(counts[i]) as f64).max(0.5), k)
            .map_err(|e| HardError::BadParams(e.to_string()))?
            .into_vec();
        s.sort_unstable();
        let far = family.iter().all(|t| {
            let common = s.iter().filter(|i| t.binary_search(i).is_ok()).count();
            2 * (k - common) >= k
        });
        if far {
            s.iter().for_each(|&i| counts[i] += 1);
            family.push(s);
        }
    }
    Ok(family)
}

/// Audit of a support family: minimum symmetric difference and inclusion frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportAudit {
    pub size: usize,
    pub min_symmetric_difference: usize,
    pub min_frequency: f64,
    pub max_frequency: f64,
}

pub fn audit_supports(family: &[Vec<usize>], n: usize) -> SupportAudit {
    let mut counts = vec![0usize; n];
    family.iter().flatten().for_each(|&i| counts[i] += 1);
    let mut min_sd = usize::MAX;
    for (a, s) in family.iter().enumerate() {
        for t in &family[a + 1..] {
            let common = s.iter().filter(|i| t.contains(i)).count();
            min_sd = min_sd.min(s.len() + t.len() - 2 * common);
        }
    }
    let f = family.len() as f64;
    SupportAudit {
        size: family.len(),
        min_symmetric_difference: min_sd,
        min_frequency: *counts.iter().min().unwrap_or(&0) as f64 / f,
        max_frequency: *counts.iter().max().unwrap_or(&0) as f64 / f,
    }
}

fn quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    v[((q * (v.len() - 1) as f64).ceil() as usize).min(v.len() - 1)]
}

/// Smallest positive constant (to relative 1e-3) for which `holds` is true, found by doubling then bisection.
fn smallest_passing(holds: impl Fn(f64) -> Result<bool, HardError>, start: f64) -> Result<f64, HardError> {
    let mut hi = start;
    let mut doublings = 0;
    while !holds(hi)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 40 {
            return Err(HardError::BadParams("spike calibration diverged".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-3 * hi && hi > 1e-6 * start {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid
        } else {
            lo = mid
        }
    }
    Ok(hi)
}

/// Fits the family's constants on calibration seeds derived from `seed`.
///
/// Noise constants are the 99th percentile of the normalized D1 statistic.
/// Spike constants are the smallest value for which the D2 event holds on
/// every one of [`SPIKE_CALIBRATION_DRAWS`] base draws, times [`SPIKE_MARGIN`].
pub fn calibrate(family: &HardFamily, seed: u64) -> Result<CalibratedFamily, HardError> {
    family.validate()?;
    let seeds = SeedTree::new(seed).child(label::CALIBRATION);
    let mut constants = Constants { noise_constant: 1.0, spike_constant: 1.0, calibration_seed: seed, supports: None };
    let mut cal = CalibratedFamily { family: family.clone(), constants: constants.clone() };
    let null_draws = |cal: &CalibratedFamily| -> Result<Vec<IntMatrix>, HardError> {
        (0..CALIBRATION_DRAWS)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeds.path(&[1, i as u64]).rng();
                match generate(cal, Side::D1, &mut rng)?.0 {
                    Payload::Matrix(m) => Ok(m),
                    Payload::Vector(_) => unreachable!("matrix family"),
                }
            })
            .collect()
    };
    let base_draws: once_cell::unsync::OnceCell<Vec<SpikeDraw>> = once_cell::unsync::OnceCell::new();
    let spike_events = |cal: &CalibratedFamily, k: f64| -> Result<bool, HardError> {
        let mut trial = cal.clone();
        trial.constants.spike_constant = k;
        let holds = |payload: Payload, witness: Witness| -> Result<bool, HardError> {
            let inst = HardInstance { family: trial.family.clone(), side: Side::D2, seed: 0, payload, witness };
            Ok(verify_gap_event(&trial, &inst)?.event_holds)
        };
        let Some(model) = trial.spike_model() else {
            return (0..SPIKE_CALIBRATION_DRAWS)
                .into_par_iter()
                .map(|i| {
                    let (payload, witness) = generate(&trial, Side::D2, &mut seeds.path(&[2, i as u64]).rng())?;
                    holds(payload, witness)
                })
                .try_reduce(|| true, |a, b| Ok(a && b));
        };
        let draws = base_draws.get_or_try_init(|| {
            (0..SPIKE_CALIBRATION_DRAWS)
                .into_par_iter()
                .map(|i| model.draw(true, &mut seeds.path(&[2, i as u64]).rng()))
                .collect::<Result<Vec<_>, HardError>>()
        })?;
        draws
            .par_iter()
            .map(|d| holds(Payload::Matrix(model.assemble(d, &model.scales).0), Witness::default()))
            .try_reduce(|| true, |a, b| Ok(a && b))
    };
    match *family {
        HardFamily::LpSmall { .. } => {}
        HardFamily::LpLarge { .. } => {
            constants.spike_constant = SPIKE_MARGIN * smallest_passing(|k| spike_events(&cal, k), 1.0)?;
        }
        HardFamily::Cs { n, k, .. } => {
            constants.supports = Some(build_support_family(n, k, &mut seeds.child(3).rng())?);
        }
        HardFamily::OpnormAlpha { n, noise, .. } | HardFamily::Kyfan { n, noise, .. } => {
            let per = match *family {
                HardFamily::Kyfan { s, .. } => s,
                _ => 1,
            };
            let norm: Vec<f64> = null_draws(&cal)?
                .iter()
                .map(|m| singular_values(&to_dmatrix(m)).iter().take(per).sum::<f64>() / (per as f64 * noise * (n as f64).sqrt()))
                .collect();
            constants.noise_constant = quantile(norm, 0.99);
            cal.constants.noise_constant = constants.noise_constant;
            let events = smallest_passing(|k| spike_events(&cal, k), 1.0)?;
            constants.spike_constant = SPIKE_MARGIN
                * if per > 1 { events.max(2.0 * constants.noise_constant / 0.9) } else { events };
        }
        HardFamily::OpnormEps { d, eps, noise } => {
            let unit = noise * (d as f64).sqrt() / eps * (1.0 + 2.0 * eps);
            let norm: Vec<f64> = null_draws(&cal)?.iter().map(|m| singular_values(&to_dmatrix(m))[0] / unit).collect();
            constants.noise_constant = quantile(norm, 0.99);
            cal.constants.noise_constant = constants.noise_constant;
            constants.spike_constant = SPIKE_MARGIN * smallest_passing(|k| spike_events(&cal, k), 1.0)?;
        }
        HardFamily::Eigen { d, noise, .. } | HardFamily::Psd { d, noise, .. } => {
            let unit = noise * (d as f64).sqrt();
            let norm: Vec<f64> = null_draws(&cal)?.iter().map(|m| singular_values(&to_dmatrix(m))[0] / unit).collect();
            constants.noise_constant = quantile(norm, 0.99);
            cal.constants.noise_constant = constants.noise_constant;
            constants.spike_constant = SPIKE_MARGIN * smallest_passing(|k| spike_events(&cal, k), 1.0)?;
        }
    }
    Ok(CalibratedFamily { family: family.clone(), constants })
}

/// Both events over `pairs` seeded instance pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBattery {
    pub family: String,
    pub pairs: usize,
    pub d1_holds: usize,
    pub d2_holds: usize,
    pub both_hold: usize,
    pub constants: Constants,
    pub warnings: Vec<String>,
}

pub fn gap_battery(cal: &CalibratedFamily, pairs: usize, seed: u64) -> Result<GapBattery, HardError> {
    let seeds = SeedTree::new(seed).child(label::HARD);
    let outcomes: Vec<(bool, bool)> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let s = seeds.child(i as u64).value();
            let e1 = verify_gap_event(cal, &gen_hard_instance(cal, Side::D1, s)?)?.event_holds;
            let e2 = verify_gap_event(cal, &gen_hard_instance(cal, Side::D2, mix(s))?)?.event_holds;
            Ok((e1, e2))
        })
        .collect::<Result<_, HardError>>()?;
    Ok(GapBattery {
        family: cal.family.name().to_string(),
        pairs,
        d1_holds: outcomes.iter().filter(|o| o.0).count(),
        d2_holds: outcomes.iter().filter(|o| o.1).count(),
        both_hold: outcomes.iter().filter(|o| o.0 && o.1).count(),
        constants: cal.constants.clone(),
        warnings: cal.family.regime_warnings(),
    })
}

/// Empirical TVD between `B·vec(X)` for `X` from each side of `model`, with a
/// fixed random orthonormal `d`-row sketch `B`.
pub fn sketched_indistinguishability(
    model: &SpikeModel,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<TvdEstimate, HardError> {
    if d == 0 || d > MAX_SKETCH_ROWS {
        return Err(HardError::DimensionTooLarge { dim: d, max: MAX_SKETCH_ROWS });
    }
    let seeds = SeedTree::new(seed).child(label::HARD);
    let len = model.rows * model.cols;
    let mut rng = seeds.child(0).rng();
    let raw = RealMatrix::from_row_major(d, len, (0..d * len).map(|_| rng.sample(StandardNormal)).collect())?;
    let (b, _) = orthonormalize_rows(&raw)?;
    const CHUNK: usize = 500;
    let images = |side: Side| -> Result<Vec<Vec<f64>>, HardError> {
        let parts: Vec<Vec<Vec<f64>>> = (0..trials.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = seeds.path(&[side as u64 + 1, c as u64]).rng();
                (0..CHUNK.min(trials - c * CHUNK))
                    .map(|_| {
                        let draw = model.draw(side == Side::D2, &mut rng)?;
                        let (x, _) = model.assemble(&draw, &model.scales);
                        let xf: Vec<f64> = (0..len).map(|k| x.get(k / model.cols, k % model.cols) as f64).collect();
                        Ok(b.mul_vec(&xf))
                    })
                    .collect()
            })
            .collect::<Result<_, HardError>>()?;
        Ok(parts.into_iter().flatten().collect())
    };
    Ok(empirical_tvd(&images(Side::D1)?, &images(Side::D2)?, TvdMode::Histogram, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lp_large_t_matches_definition() {
        assert_eq!(lp_large_t(1.0 / 9.0), 1);
        assert_eq!(lp_large_t(1.0 / 81.0), 2);
    }

    #[test]
    fn schatten_index_json() {
        let s: SchattenIndex = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(s, SchattenIndex::Infinity);
        assert_eq!(serde_json::to_string(&SchattenIndex::Finite(2.0)).unwrap(), "2.0");
        assert!(serde_json::from_str::<SchattenIndex>("\"two\"").is_err());
    }

    #[test]
    fn tiny_noise_is_rejected() {
        let f = HardFamily::OpnormAlpha { n: 16, alpha: 2.0, noise: 1.0 };
        assert!(matches!(calibrate(&f, 1), Err(HardError::BadParams(_))));
    }

    #[test]
    fn embedding_eigenvalues_are_signed_singular_values() {
        let m = IntMatrix::from_rows(&[vec![3, 0], vec![0, -2]]).unwrap();
        let ev = symmetric_embedding_eigenvalues(&m, 1.0);
        let expect = [-2.0, -1.0, 3.0, 4.0];
        for (a, b) in ev.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_picks_heaviest_support() {
        let fam = vec![vec![0, 1], vec![2, 3]];
        assert_eq!(decode_support(&[1, -1, 5, -7], &fam).0, vec![2, 3]);
    }
}
