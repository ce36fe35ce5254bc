//! Flat TOML experiment configuration.
//!
//! A config file names its `kind`; every other key is optional and falls
//! back to the defaults for that kind, so a one-line file is a valid
//! config. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Ensemble,
    Subspace,
    Foobi,
    Hmm,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [Self::Ensemble, Self::Subspace, Self::Foobi, Self::Hmm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ensemble => "ensemble",
            Self::Subspace => "subspace",
            Self::Foobi => "foobi",
            Self::Hmm => "hmm",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleVariant {
    /// σ_k of k perturbed copies of one vector, lifted to degree ℓ.
    SymmetricPower,
    /// Log-log small-ball slope of the rank-r counterexample map.
    SmallBall,
    /// Distance of a perturbed `x^{⊗ℓ}` from a random symmetric subspace.
    SymProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: u64,
    /// Worker threads; 0 means all available cores.
    pub jobs: usize,
    pub out: PathBuf,
    /// Also write per-trial matrices (factors, bases, estimates) under `out`.
    pub save_outputs: bool,

    pub n: usize,
    pub ell: usize,
    pub rho: f64,

    pub variant: EnsembleVariant,
    /// Column count for `symmetric_power`.
    pub k: usize,
    /// Rank: counterexample rank, FOOBI R, or HMM state count.
    pub r: usize,
    /// Small-ball radius scale; 0 picks 50·5^(r−1).
    pub eta: f64,
    pub samples: u64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_points: usize,
    /// Dimension of the target subspace as a fraction of C(n+ℓ−1, ℓ).
    pub subspace_fraction: f64,

    /// Subspace dimension, or HMM transition sparsity.
    pub d: usize,
    pub m: usize,
    pub alpha: f64,
    pub eps0: f64,

    pub err_norm: f64,
    pub retries: usize,
    pub gap_floor: f64,
    /// Tensor file to decompose instead of planted instances.
    pub input: Option<PathBuf>,

    pub sigma_obs: f64,
    /// Sampled windows per trial; 0 uses exact moments.
    pub window_samples: u64,

    /// Per-trial error bound (sin-Θ, matched error, HMM errors, relative slope error).
    pub max_error: f64,
    /// Required σ_k over the numerical rank tolerance.
    pub rank_margin: f64,
    /// Threshold constant for the projection experiment.
    pub threshold_c: f64,
    /// Fraction of trials that must pass for exit status 0.
    pub min_pass_rate: f64,
}

impl ExperimentConfig {
    /// Defaults for a kind, sized like the acceptance checks.
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let mut c = Self {
            kind,
            seed: 0,
            trials: 20,
            jobs: 0,
            out: PathBuf::from("out"),
            save_outputs: false,
            n: 8,
            ell: 2,
            rho: 0.1,
            variant: EnsembleVariant::SymmetricPower,
            k: 30,
            r: 5,
            eta: 0.0,
            samples: 100_000,
            eps_min: 1e-3,
            eps_max: 1e-1,
            eps_points: 9,
            subspace_fraction: 0.5,
            d: 4,
            m: 600,
            alpha: 0.35,
            eps0: 0.0,
            err_norm: 0.0,
            retries: 20,
            gap_floor: 1.0,
            input: None,
            sigma_obs: 0.1,
            window_samples: 0,
            max_error: 1e-6,
            rank_margin: 1e3,
            threshold_c: 0.01,
            min_pass_rate: 0.9,
        };
        match kind {
            ExperimentKind::Ensemble => {
                c.trials = 100;
                c.min_pass_rate = 0.95;
                c.max_error = 0.3;
            }
            ExperimentKind::Subspace => {}
            ExperimentKind::Foobi => {
                c.n = 4;
                c.r = 5;
            }
            ExperimentKind::Hmm => {
                c.n = 5;
                c.ell = 1;
                c.r = 4;
                c.d = 2;
            }
        }
        c
    }

    /// Parses a config file body; missing keys take the kind's defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let kind = user
            .get("kind")
            .ok_or_else(|| ConfigError::Invalid("missing `kind`".into()))?
            .clone()
            .try_into::<ExperimentKind>()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::defaults_for(kind)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merged.extend(user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are TOML-representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} exceeds the TOML integer range", self.seed));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n == 0 || self.ell == 0 {
            return bad("n and ell must be positive".into());
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be finite and nonnegative, got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.min_pass_rate) {
            return bad("min_pass_rate must lie in [0, 1]".into());
        }
        if self.max_error.is_nan() || self.max_error <= 0.0 {
            return bad("max_error must be positive".into());
        }
        match self.kind {
            ExperimentKind::Ensemble => match self.variant {
                EnsembleVariant::SymmetricPower if self.k == 0 => bad("k must be positive".into()),
                EnsembleVariant::SmallBall
                    if !(self.eps_min > 0.0 && self.eps_min < self.eps_max && self.eps_points >= 2) =>
                {
                    bad("need 0 < eps_min < eps_max and eps_points ≥ 2".into())
                }
                EnsembleVariant::SmallBall if self.r == 0 || self.r > self.n => bad("need 1 ≤ r ≤ n".into()),
                EnsembleVariant::SymProjection if !(0.0..1.0).contains(&self.subspace_fraction) => {
                    bad("subspace_fraction must lie in [0, 1)".into())
                }
                _ => Ok(()),
            },
            ExperimentKind::Subspace => {
                if self.d == 0 || self.d >= self.n {
                    return bad(format!("need 0 < d < n, got d={}, n={}", self.d, self.n));
                }
                if !(0.0..=1.0).contains(&self.alpha) {
                    return bad("alpha must lie in [0, 1]".into());
                }
                if self.m == 0 {
                    return bad("m must be positive".into());
                }
                Ok(())
            }
            ExperimentKind::Foobi => {
                if self.ell < 2 {
                    return bad("foobi needs ell ≥ 2".into());
                }
                if self.r == 0 || self.retries == 0 {
                    return bad("r and retries must be positive".into());
                }
                Ok(())
            }
            ExperimentKind::Hmm => {
                if self.r == 0 || self.d == 0 || self.d > self.r {
                    return bad(format!("need 1 ≤ d ≤ r, got d={}, r={}", self.d, self.r));
                }
                Ok(())
            }
        }
    }

    /// Compact `key=value` echo of the parameters that shape a trial.
    pub fn param_echo(&self) -> String {
        match self.kind {
            ExperimentKind::Ensemble => match self.variant {
                EnsembleVariant::SymmetricPower => {
                    format!("symmetric_power n={} ell={} k={} rho={}", self.n, self.ell, self.k, self.rho)
                }
                EnsembleVariant::SmallBall => format!(
                    "small_ball n={} ell={} r={} rho={} eta={} samples={}",
                    self.n, self.ell, self.r, self.rho, self.eta, self.samples
                ),
                EnsembleVariant::SymProjection => format!(
                    "sym_projection n={} ell={} fraction={} rho={}",
                    self.n, self.ell, self.subspace_fraction, self.rho
                ),
            },
            ExperimentKind::Subspace => format!(
                "n={} d={} ell={} m={} alpha={} rho={} eps0={}",
                self.n, self.d, self.ell, self.m, self.alpha, self.rho, self.eps0
            ),
            ExperimentKind::Foobi => format!("n={} ell={} r={} err_norm={}", self.n, self.ell, self.r, self.err_norm),
            ExperimentKind::Hmm => format!(
                "r={} n={} d={} ell={} rho={} samples={}",
                self.r, self.n, self.d, self.ell, self.rho, self.window_samples
            ),
        }
    }
}
