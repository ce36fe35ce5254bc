//! Experiment runner for the `smoothed` library: TOML configs, plain-text
//! matrix and tensor files, seeded batch execution and CSV/JSON reports.

pub mod config;
pub mod experiments;
pub mod io;
pub mod report;

pub use config::{ConfigError, EnsembleVariant, ExperimentConfig, ExperimentKind};
pub use experiments::{run, write_outputs, RunError, RunOutput};
pub use report::{ResultRow, Summary};

/// Small, fast configurations covering every kind, used by `selftest`.
pub fn selftest_configs() -> Vec<ExperimentConfig> {
    let mut ensemble = ExperimentConfig::defaults_for(ExperimentKind::Ensemble);
    ensemble.trials = 20;
    let mut small_ball = ExperimentConfig::defaults_for(ExperimentKind::Ensemble);
    small_ball.variant = EnsembleVariant::SmallBall;
    small_ball.n = 4;
    small_ball.r = 1;
    small_ball.trials = 2;
    small_ball.samples = 50_000;
    small_ball.min_pass_rate = 1.0;
    let mut subspace = ExperimentConfig::defaults_for(ExperimentKind::Subspace);
    subspace.n = 6;
    subspace.d = 2;
    subspace.alpha = 0.5;
    subspace.m = 120;
    subspace.trials = 4;
    let mut foobi = ExperimentConfig::defaults_for(ExperimentKind::Foobi);
    foobi.trials = 10;
    let mut hmm = ExperimentConfig::defaults_for(ExperimentKind::Hmm);
    hmm.trials = 10;
    vec![ensemble, small_ball, subspace, foobi, hmm]
}
