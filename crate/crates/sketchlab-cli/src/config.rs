//! Experiment configuration: parsing with field paths and validation.

use std::path::{Path, PathBuf};

use clap::{Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sketchlab::attack::{AttackConfig, GridSpec, SlackMode};
use sketchlab::dgauss::smoothing_variance;
use sketchlab::harddist::HardFamily;
use sketchlab::lattice::preprocess_sketch;
use sketchlab::sketch::{build_sketch, FamilyKind, GapNormParams, SketchParams, SketchSpec};
use sketchlab::stats::CellVariant;

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; overridden by `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory; overridden by `--out` or `SKETCHLAB_OUT`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub attack: Option<AttackBlock>,
    #[serde(default)]
    pub harddist: Option<HardBlock>,
    #[serde(default)]
    pub stats: Option<StatsCheck>,
}

/// `α` as a number, or `"auto"` to derive it from the preprocessed sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaPolicy {
    Fixed(f64),
    Keyword(AlphaKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaKeyword {
    Auto,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    /// Sketch-backed norm-gap oracle.
    #[default]
    Sketch,
    /// Ground truth from the exact norm.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub family: FamilyKind,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "B")]
    pub b: f64,
    pub alpha: AlphaPolicy,
    /// `ε` in the automatic rule `α ≥ ℓ²·ln(2n(1+1/ε))/π`.
    #[serde(default = "default_auto_eps")]
    pub auto_eps: f64,
    /// Queries per grid point.
    pub m: usize,
    pub grid: GridSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub oracle: OracleKind,
    /// Direction budget; defaults to `r`.
    #[serde(default)]
    pub r_budget: Option<usize>,
    #[serde(default)]
    pub positive_floor: Option<f64>,
    #[serde(default)]
    pub round_cap: Option<usize>,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub slack: Option<SlackMode>,
    #[serde(default)]
    pub verification_trials: Option<usize>,
    /// Exploits written per run.
    #[serde(default = "default_max_exploits")]
    pub max_exploits: usize,
    #[serde(default)]
    pub entry_scale: Option<f64>,
    #[serde(default)]
    pub entry_cap: Option<i64>,
    #[serde(default)]
    pub hash_rows: Option<usize>,
    #[serde(default)]
    pub groups: Option<usize>,
}

fn default_auto_eps() -> f64 {
    0.5
}

fn default_runs() -> usize {
    1
}

fn default_max_exploits() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardBlock {
    pub family: HardFamily,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_count() -> usize {
    100
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Smoothed,
    Rounded,
}

impl From<VariantArg> for CellVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Smoothed => CellVariant::Smoothed,
            VariantArg::Rounded => CellVariant::Rounded,
        }
    }
}

/// Numeric checks, usable as `stats check <name>` flags or a config `stats` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StatsCheck {
    /// Ratio of the discrete Gaussian pmf to the rounded Gaussian pmf.
    PmfRatio {
        #[arg(long)]
        n: usize,
        #[arg(long = "C")]
        #[serde(alias = "C")]
        c: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        #[serde(default)]
        z_range: Option<i64>,
    },
    /// Normalization constant bounds.
    Normalizer {
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,4,100,1000000")]
        sigma2: Vec<f64>,
    },
    /// Sketched image of a discrete Gaussian against its continuous limit.
    Cell {
        #[arg(long, default_value_t = 2)]
        r: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Entry bound of the random sketch.
        #[arg(long, default_value_t = 50)]
        entry_bound: i64,
        #[arg(long, default_value_t = 1e8)]
        sigma2: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Smoothed)]
        variant: VariantArg,
    },
    /// Two-sided singular value bounds for discrete Gaussian matrices.
    SingularValues {
        #[arg(long, default_value_t = 400)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1e4)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Required fraction of trials inside the bounds.
        #[arg(long, default_value_t = 0.95)]
        #[serde(default = "default_fraction")]
        min_fraction: f64,
    },
    /// Moment generating function bound.
    Mgf {
        #[arg(long)]
        a: f64,
        #[arg(long, default_value_t = 1e4)]
        sigma2: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

fn default_fraction() -> f64 {
    0.95
}

impl StatsCheck {
    pub fn name(&self) -> &'static str {
        match self {
            StatsCheck::PmfRatio { .. } => "pmf-ratio",
            StatsCheck::Normalizer { .. } => "normalizer",
            StatsCheck::Cell { .. } => "cell",
            StatsCheck::SingularValues { .. } => "singular-values",
            StatsCheck::Mgf { .. } => "mgf",
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.to_string(), message: message.into() }
}

/// Parses and validates a config file, reporting the path of any offending field.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        invalid(if p == "." { "<root>" } else { &p }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if let Some(h) = &self.harddist {
            h.family.validate().map_err(|e| invalid("harddist.family", e.to_string()))?;
            if h.count == 0 {
                return Err(invalid("harddist.count", "must be positive"));
            }
        }
        Ok(())
    }
}

impl AttackBlock {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(invalid("attack.n", "must be positive"));
        }
        if self.r == 0 || self.r > self.n {
            return Err(invalid("attack.r", format!("must lie in 1..={}", self.n)));
        }
        if !(self.b > 1.0 && self.b.is_finite()) {
            return Err(invalid("attack.B", "must exceed 1"));
        }
        if self.m < 100 {
            return Err(invalid("attack.m", "must be at least 100"));
        }
        if self.runs == 0 {
            return Err(invalid("attack.runs", "must be positive"));
        }
        if let GridSpec::Geometric { points } = self.grid {
            if points < 2 {
                return Err(invalid("attack.grid.points", "must be at least 2"));
            }
        }
        match self.alpha {
            AlphaPolicy::Fixed(a) => {
                let floor = 8.0 * smoothing_variance(self.n);
                if !(a >= floor) {
                    return Err(invalid("attack.alpha", format!("must be at least {floor:.1} for n={}", self.n)));
                }
            }
            AlphaPolicy::Keyword(AlphaKeyword::Auto) => {
                if !(self.auto_eps > 0.0) {
                    return Err(invalid("attack.auto_eps", "must be positive"));
                }
                if 4 * self.r > self.n {
                    return Err(invalid("attack.alpha", "\"auto\" needs 4r <= n for preprocessing"));
                }
            }
        }
        if let Some(z) = self.zeta {
            if !(z > 0.0 && z < 0.5) {
                return Err(invalid("attack.zeta", "must lie in (0, 0.5)"));
            }
        }
        Ok(())
    }

    fn sketch_params(&self, alpha: f64) -> SketchParams {
        let mut p = SketchParams::new(alpha, self.b);
        if let Some(s) = self.entry_scale {
            p.entry_scale = s;
        }
        p.entry_cap = self.entry_cap;
        p.hash_rows = self.hash_rows;
        p.groups = self.groups;
        p
    }

    /// The sketch spec for one run; `α` must already be resolved.
    pub fn sketch_spec(&self, alpha: f64, seed: u64) -> SketchSpec {
        SketchSpec { family: self.family, n: self.n, r: self.r, seed, params: self.sketch_params(alpha) }
    }

    /// Resolves `α` for the sketch of `seed`.
    ///
    /// `"auto"` takes `max(ℓ²·ln(2n(1+1/ε))/π, 8·r₀²)` where `ℓ` is the certified
    /// orthogonal-lattice length of the preprocessed sketch matrix.
    pub fn resolve_alpha(&self, seed: u64) -> Result<f64, CliError> {
        match self.alpha {
            AlphaPolicy::Fixed(a) => Ok(a),
            AlphaPolicy::Keyword(AlphaKeyword::Auto) => {
                let floor = 8.0 * smoothing_variance(self.n);
                let mut probe = self.sketch_spec(floor, seed);
                probe.params.calibration_samples = 100;
                let oracle = build_sketch(&probe)?;
                let a = oracle.sketch().matrix();
                let pre = preprocess_sketch(a, a.max_abs().max(1))?;
                let n = self.n as f64;
                let rule = pre.achieved_length.powi(2) * (2.0 * n * (1.0 + 1.0 / self.auto_eps)).ln() / std::f64::consts::PI;
                Ok(rule.max(floor))
            }
        }
    }

    pub fn attack_config(&self, alpha: f64) -> Result<AttackConfig, CliError> {
        let params = GapNormParams::new(alpha, self.b)?;
        let mut c = AttackConfig::new(params, self.m, self.grid);
        c.positive_floor = self.positive_floor;
        c.round_cap = self.round_cap;
        c.zeta = self.zeta;
        if let Some(s) = self.slack {
            c.slack = s;
        }
        if let Some(t) = self.verification_trials {
            c.verification_trials = t;
        }
        Ok(c)
    }
}
