//! Per-kind trial functions and the seeded batch runner.
//!
//! Trial `i` draws everything from `trial_seed(master, i)`, further split
//! into sub-streams with `trial_seed(trial, j)`. Trials run on a rayon pool
//! of `jobs` threads and are collected in index order, so the rows do not
//! depend on the schedule.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use smoothed::ensembles::{
    counterexample_matrix, dense_rows, log_log_slope, machine_rank_tol, perturb, random_symmetric_subspace,
    small_ball_curve, trial_sym_projection, PerturbationModel, ThresholdParams,
};
use smoothed::foobi::{decompose, match_components, FoobiInstance, FoobiParams};
use smoothed::hmm::{self, GenParams, JennrichParams};
use smoothed::linalg::singular_values;
use smoothed::rng::{rng_from_seed, trial_seed};
use smoothed::subspace::{self, RecoveryParams};
use smoothed::tensor::{outer_power, sym_dim};
use smoothed::DenseTensor;

use crate::config::{EnsembleVariant, ExperimentConfig, ExperimentKind};
use crate::io::{self, FormatError};
use crate::report::{self, ResultRow, Summary, TimingRow};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot load input {path}: {source}")]
    Input { path: PathBuf, source: FormatError },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

/// One measured quantity of a trial, before it becomes a [`ResultRow`].
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: &'static str,
    pub value: f64,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
    pub detail: String,
}

impl Metric {
    pub fn info(name: &'static str, value: f64) -> Self {
        Self {
            name,
            value,
            threshold: None,
            pass: None,
            detail: String::new(),
        }
    }

    /// Passes iff `value ≤ bound`; NaN fails.
    pub fn at_most(name: &'static str, value: f64, bound: f64) -> Self {
        Self {
            threshold: Some(bound),
            pass: Some(value <= bound),
            ..Self::info(name, value)
        }
    }

    /// Passes iff `value ≥ bound`; NaN fails.
    pub fn at_least(name: &'static str, value: f64, bound: f64) -> Self {
        Self {
            threshold: Some(bound),
            pass: Some(value >= bound),
            ..Self::info(name, value)
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Matrix written to `<out>/trial_<id>_<name>.txt` when `save_outputs` is on.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: &'static str,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrialResult {
    pub metrics: Vec<Metric>,
    pub artifacts: Vec<Artifact>,
}

/// Data loaded once and shared by all trials.
#[derive(Debug, Clone, Default)]
pub enum Input {
    #[default]
    None,
    Tensor(DenseTensor),
    Points(Vec<DVector<f64>>),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Summary,
    pub artifacts: Vec<(u64, Vec<Artifact>)>,
}

/// Metric that decides a trial which errored out.
pub fn primary_metric(cfg: &ExperimentConfig, input: &Input) -> &'static str {
    match cfg.kind {
        ExperimentKind::Ensemble => match cfg.variant {
            EnsembleVariant::SymmetricPower => "sigma_k",
            EnsembleVariant::SmallBall => "slope_rel_error",
            EnsembleVariant::SymProjection => "proj_orth",
        },
        ExperimentKind::Subspace => match input {
            Input::Points(_) => "selected",
            _ => "sin_theta",
        },
        ExperimentKind::Foobi => match input {
            Input::Tensor(_) => "reconstruction_error",
            _ => "matched_error",
        },
        ExperimentKind::Hmm => "o_error",
    }
}

/// Small-ball scale used when `eta = 0`: 50 for r = 1, ×5 per extra rank.
pub fn auto_eta(r: usize) -> f64 {
    50.0 * 5f64.powi(r.saturating_sub(1) as i32)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo * (step * i as f64).exp() })
        .collect()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn e(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

pub fn symmetric_power_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let base = vec![e(cfg.n, 0); cfg.k];
    let pts = perturb(&base, &PerturbationModel::new(cfg.rho, cfg.n, seed));
    let cols: Vec<DVector<f64>> = pts.iter().map(|p| outer_power(p, cfg.ell)).collect();
    let m = DMatrix::from_columns(&cols);
    let s = singular_values(&m);
    let sigma = s.get(cfg.k - 1).copied().unwrap_or(0.0);
    let tol = machine_rank_tol(&m);
    let dim = sym_dim(cfg.n, cfg.ell)?;
    let judged = if cfg.k <= dim {
        Metric::at_least("sigma_k", sigma, cfg.rank_margin * tol)
    } else {
        Metric::at_most("sigma_k", sigma, tol)
    };
    Ok(TrialResult {
        metrics: vec![judged.with_detail(format!("rank_tol={tol:e} k/dim={}/{dim}", cfg.k))],
        artifacts: Vec::new(),
    })
}

pub fn small_ball_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let g = counterexample_matrix(cfg.n, cfg.ell, cfg.r)?;
    let centre = e(cfg.n, cfg.n - 1);
    let eta = if cfg.eta > 0.0 { cfg.eta } else { auto_eta(cfg.r) };
    let grid = log_grid(cfg.eps_min, cfg.eps_max, cfg.eps_points);
    let model = PerturbationModel::new(cfg.rho, cfg.n, seed);
    let curve = small_ball_curve(&g, &centre, &model, &grid, eta, cfg.samples)?;
    let slope = log_log_slope(&curve).unwrap_or(f64::NAN);
    let r = cfg.r as f64;
    let fact = factorial(cfg.ell);
    let idx = (r * cfg.n as f64 / fact).ceil() as usize;
    let dense = dense_rows(&g)?;
    let sigma = singular_values(&dense).get(idx - 1).copied().unwrap_or(0.0);
    let curve_matrix = DMatrix::from_fn(curve.len(), 3, |i, j| match j {
        0 => curve[i].eps,
        1 => curve[i].probability,
        _ => curve[i].hits as f64,
    });
    Ok(TrialResult {
        metrics: vec![
            Metric::info("slope", slope),
            Metric::at_most("slope_rel_error", (slope - r).abs() / r, cfg.max_error),
            Metric::at_least("sigma_dense", sigma, 1.0 / fact.sqrt() - 1e-10).with_detail(format!("index {idx}")),
            Metric::info("p_at_eps_max", curve.last().map_or(f64::NAN, |p| p.probability)),
        ],
        artifacts: vec![Artifact {
            name: "curve",
            matrix: curve_matrix,
        }],
    })
}

pub fn sym_projection_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let dim = (cfg.subspace_fraction * sym_dim(cfg.n, cfg.ell)? as f64).floor() as usize;
    let s = random_symmetric_subspace(&mut rng_from_seed(trial_seed(seed, 0)), cfg.n, cfg.ell, dim)?;
    let model = PerturbationModel::new(cfg.rho, cfg.n, trial_seed(seed, 1));
    let params = ThresholdParams {
        c: cfg.threshold_c,
        ..ThresholdParams::default()
    };
    let rep = trial_sym_projection(&e(cfg.n, 0), &s, cfg.ell, &model, &params)?;
    Ok(TrialResult {
        metrics: vec![
            Metric::at_least("proj_orth", rep.sigma_observed, rep.threshold),
            Metric::info("delta", rep.delta),
        ],
        artifacts: Vec::new(),
    })
}

pub fn subspace_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let inst = subspace::generate_instance(cfg.n, cfg.d, cfg.m, cfg.alpha, cfg.rho, cfg.eps0, seed)?;
    let params = RecoveryParams::new(cfg.n, cfg.d, cfg.ell, cfg.alpha, cfg.rho)?;
    let out = subspace::recover(&inst.points, &params, cfg.d)?;
    let sin = subspace::evaluate(&inst.t, &out.subspace)?;
    let outliers = out.selected.iter().filter(|&&i| !inst.labels[i]).count();
    Ok(TrialResult {
        metrics: vec![
            Metric::at_most("sin_theta", sin, cfg.max_error),
            Metric::at_most("outliers_selected", outliers as f64, 0.0),
            Metric::info("batches", out.batches_processed as f64),
            Metric::info("inliers", inst.inlier_count as f64),
        ],
        artifacts: vec![
            Artifact {
                name: "basis",
                matrix: out.subspace.basis().clone(),
            },
            Artifact {
                name: "planted",
                matrix: inst.t.basis().clone(),
            },
        ],
    })
}

/// Recovery on a user point cloud: no ground truth, only the selection.
pub fn subspace_input_trial(cfg: &ExperimentConfig, points: &[DVector<f64>]) -> smoothed::Result<TrialResult> {
    let params = RecoveryParams::new(cfg.n, cfg.d, cfg.ell, cfg.alpha, cfg.rho)?;
    let out = subspace::recover(points, &params, cfg.d)?;
    Ok(TrialResult {
        metrics: vec![
            Metric::info("selected", out.selected.len() as f64),
            Metric::info("batches", out.batches_processed as f64),
        ],
        artifacts: vec![Artifact {
            name: "basis",
            matrix: out.subspace.basis().clone(),
        }],
    })
}

fn foobi_params(cfg: &ExperimentConfig) -> FoobiParams {
    FoobiParams {
        retries: cfg.retries,
        gap_floor: cfg.gap_floor,
    }
}

fn reconstruction_error(t: &DenseTensor, factors: &DMatrix<f64>, ell: usize) -> smoothed::Result<f64> {
    let fit = FoobiInstance::planted(factors.clone(), ell, 0.0, 0)?;
    let diff: f64 = t
        .data()
        .iter()
        .zip(fit.t.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = t.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

fn foobi_diagnostics(out: &smoothed::foobi::FoobiOutput, r: usize) -> Vec<Metric> {
    let s = &out.h_phi_singular;
    let len = s.len();
    let at = |i: usize| if i < len { s[i] } else { f64::NAN };
    vec![
        Metric::info("attempts", out.attempts as f64),
        Metric::info("eigengap", out.gap),
        Metric::info("h_phi_sigma_r", if len >= r { at(len - r) } else { f64::NAN }),
        Metric::info("h_phi_sigma_r1", if len > r { at(len - r - 1) } else { f64::NAN }),
        Metric::info("null_space_dim", s.iter().filter(|&&x| x <= 1e-8).count() as f64),
    ]
}

pub fn foobi_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let inst = FoobiInstance::random(cfg.n, cfg.ell, cfg.r, cfg.err_norm, trial_seed(seed, 0))?;
    let out = decompose(&inst.t, cfg.r, &foobi_params(cfg), trial_seed(seed, 1))?;
    let matched = match_components(&inst.a, &out.factors)?;
    let mut metrics = vec![
        Metric::at_most("matched_error", matched.error, cfg.max_error),
        Metric::info("reconstruction_error", reconstruction_error(&inst.t, &out.factors, cfg.ell)?),
    ];
    metrics.extend(foobi_diagnostics(&out, cfg.r));
    Ok(TrialResult {
        metrics,
        artifacts: vec![
            Artifact {
                name: "factors",
                matrix: out.factors,
            },
            Artifact {
                name: "planted",
                matrix: inst.a,
            },
        ],
    })
}

pub fn foobi_input_trial(cfg: &ExperimentConfig, t: &DenseTensor, seed: u64) -> smoothed::Result<TrialResult> {
    let out = decompose(t, cfg.r, &foobi_params(cfg), seed)?;
    let mut metrics = vec![Metric::at_most(
        "reconstruction_error",
        reconstruction_error(t, &out.factors, cfg.ell)?,
        cfg.max_error,
    )];
    metrics.extend(foobi_diagnostics(&out, cfg.r));
    Ok(TrialResult {
        metrics,
        artifacts: vec![Artifact {
            name: "factors",
            matrix: out.factors,
        }],
    })
}

pub fn hmm_trial(cfg: &ExperimentConfig, seed: u64) -> smoothed::Result<TrialResult> {
    let gen = GenParams {
        sigma_obs: cfg.sigma_obs,
        ..GenParams::default()
    };
    let model = hmm::gen_model_with(cfg.r, cfg.n, cfg.d, cfg.rho, trial_seed(seed, 0), &gen)?;
    let moments = if cfg.window_samples == 0 {
        hmm::exact_moments(&model, cfg.ell)?
    } else {
        let samples = hmm::sample_sequences(&model, 2 * cfg.ell + 2, cfg.window_samples as usize, trial_seed(seed, 1));
        hmm::empirical_moments(&samples, cfg.ell)?
    };
    let params = JennrichParams {
        retries: cfg.retries,
        gap_floor: cfg.gap_floor,
    };
    let est = hmm::recover(&moments, cfg.r, &params, trial_seed(seed, 2))?;
    let errs = hmm::evaluate(&model, &est)?;
    Ok(TrialResult {
        metrics: vec![
            Metric::at_most("o_error", errs.o_error, cfg.max_error),
            Metric::at_most("p_error", errs.p_error, cfg.max_error),
            Metric::info("w_error", errs.w_error),
            Metric::info("sparsity", model.sparsity() as f64),
        ],
        artifacts: vec![
            Artifact {
                name: "o_hat",
                matrix: est.o_hat,
            },
            Artifact {
                name: "p_hat",
                matrix: est.p_hat,
            },
        ],
    })
}

pub fn run_trial(cfg: &ExperimentConfig, input: &Input, seed: u64) -> smoothed::Result<TrialResult> {
    match (cfg.kind, input) {
        (ExperimentKind::Ensemble, _) => match cfg.variant {
            EnsembleVariant::SymmetricPower => symmetric_power_trial(cfg, seed),
            EnsembleVariant::SmallBall => small_ball_trial(cfg, seed),
            EnsembleVariant::SymProjection => sym_projection_trial(cfg, seed),
        },
        (ExperimentKind::Subspace, Input::Points(p)) => subspace_input_trial(cfg, p),
        (ExperimentKind::Subspace, _) => subspace_trial(cfg, seed),
        (ExperimentKind::Foobi, Input::Tensor(t)) => foobi_input_trial(cfg, t, seed),
        (ExperimentKind::Foobi, _) => foobi_trial(cfg, seed),
        (ExperimentKind::Hmm, _) => hmm_trial(cfg, seed),
    }
}

pub fn load_input(cfg: &ExperimentConfig) -> Result<Input, RunError> {
    let Some(path) = &cfg.input else {
        return Ok(Input::None);
    };
    let wrap = |source| RunError::Input {
        path: path.clone(),
        source,
    };
    match cfg.kind {
        ExperimentKind::Foobi => {
            let t = io::read_tensor(path).map_err(wrap)?;
            if t.order() != 2 * cfg.ell || t.shape().iter().any(|&d| d != cfg.n) {
                return Err(RunError::InvalidInput(format!(
                    "tensor shape {:?} is not {} copies of n={}",
                    t.shape(),
                    2 * cfg.ell,
                    cfg.n
                )));
            }
            Ok(Input::Tensor(t))
        }
        ExperimentKind::Subspace => {
            let m = io::read_matrix(path).map_err(wrap)?;
            if m.nrows() != cfg.n {
                return Err(RunError::InvalidInput(format!(
                    "point matrix has {} rows, config n={}",
                    m.nrows(),
                    cfg.n
                )));
            }
            Ok(Input::Points(m.column_iter().map(|c| c.into_owned()).collect()))
        }
        kind => Err(RunError::InvalidInput(format!("`input` is not supported for {kind}"))),
    }
}

fn to_rows(cfg: &ExperimentConfig, input: &Input, trial_id: u64, seed: u64, res: smoothed::Result<TrialResult>) -> (Vec<ResultRow>, Vec<Artifact>) {
    let params = cfg.param_echo();
    let (metrics, artifacts) = match res {
        Ok(t) => (t.metrics, t.artifacts),
        Err(e) => {
            let threshold = match primary_metric(cfg, input) {
                "sigma_k" | "proj_orth" | "selected" => None,
                _ => Some(cfg.max_error),
            };
            let m = Metric {
                name: primary_metric(cfg, input),
                value: f64::NAN,
                threshold,
                pass: Some(false),
                detail: e.to_string(),
            };
            (vec![m], Vec::new())
        }
    };
    let rows = metrics
        .into_iter()
        .map(|m| ResultRow {
            kind: cfg.kind,
            trial_id,
            seed,
            params: params.clone(),
            metric: m.name.to_string(),
            value: m.value,
            threshold: m.threshold,
            pass: m.pass,
            detail: m.detail,
        })
        .collect();
    (rows, artifacts)
}

/// Runs every trial and builds the summary; writes nothing.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let input = load_input(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let per_trial: Vec<(Vec<ResultRow>, Vec<Artifact>, TimingRow)> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|id| {
                let seed = trial_seed(cfg.seed, id);
                let start = Instant::now();
                let res = run_trial(cfg, &input, seed);
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let (rows, artifacts) = to_rows(cfg, &input, id, seed, res);
                let timing = TimingRow {
                    kind: cfg.kind,
                    trial_id: id,
                    seed,
                    wall_ms,
                };
                (rows, artifacts, timing)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut artifacts = Vec::new();
    for (id, (r, a, t)) in per_trial.into_iter().enumerate() {
        rows.extend(r);
        timings.push(t);
        if !a.is_empty() {
            artifacts.push((id as u64, a));
        }
    }
    report::sort_rows(&mut rows);
    let summary = report::summarize(cfg.kind, cfg.seed, cfg.trials, cfg.param_echo(), cfg.min_pass_rate, &rows);
    Ok(RunOutput {
        rows,
        timings,
        summary,
        artifacts,
    })
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `results.csv`, `timings.csv`, `summary.json`, `config.toml` and,
/// with `save_outputs`, one matrix file per trial artifact.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput) -> Result<(), RunError> {
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    let results = dir.join("results.csv");
    let bytes = report::rows_to_csv(&out.rows).map_err(|e| output_err(&results, e))?;
    std::fs::write(&results, bytes).map_err(|e| output_err(&results, e))?;
    let timings = dir.join("timings.csv");
    report::write_csv(&timings, &out.timings).map_err(|e| output_err(&timings, e))?;
    let summary = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&out.summary).map_err(|e| output_err(&summary, e))?;
    std::fs::write(&summary, json + "\n").map_err(|e| output_err(&summary, e))?;
    let config = dir.join("config.toml");
    std::fs::write(&config, cfg.to_toml_string()).map_err(|e| output_err(&config, e))?;
    if cfg.save_outputs {
        for (id, arts) in &out.artifacts {
            let seed = trial_seed(cfg.seed, *id);
            for a in arts {
                let path = dir.join(format!("trial_{id:04}_{}.txt", a.name));
                let header = vec![
                    format!("kind={} trial_id={id} seed={seed} master_seed={}", cfg.kind, cfg.seed),
                    cfg.param_echo(),
                ];
                io::write_matrix(&path, &a.matrix, &header).map_err(|e| output_err(&path, e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults_for(kind);
        c.trials = 4;
        c.jobs = 2;
        c
    }

    #[test]
    fn grid_is_log_spaced_with_exact_ends() {
        let g = log_grid(1e-3, 1e-1, 9);
        assert_eq!((g[0], g[8]), (1e-3, 1e-1));
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(0.25)).abs() < 1e-12);
        }
        assert_eq!((auto_eta(1), auto_eta(2)), (50.0, 250.0));
    }

    #[test]
    fn symmetric_power_flags_rank_deficiency() {
        let mut c = cfg(ExperimentKind::Ensemble);
        let ok = symmetric_power_trial(&c, 3).unwrap();
        assert_eq!(ok.metrics[0].pass, Some(true));
        c.k = 37;
        let over = symmetric_power_trial(&c, 3).unwrap();
        assert_eq!(over.metrics[0].pass, Some(true));
        assert!(over.metrics[0].detail.contains("k/dim=37/36"));
    }

    #[test]
    fn schedule_does_not_change_rows() {
        let mut c = cfg(ExperimentKind::Foobi);
        c.trials = 6;
        c.jobs = 1;
        let a = run(&c).unwrap();
        c.jobs = 3;
        let b = run(&c).unwrap();
        assert_eq!(report::rows_to_csv(&a.rows).unwrap(), report::rows_to_csv(&b.rows).unwrap());
        assert!(a.summary.all_pass);
    }

    #[test]
    fn failed_trial_becomes_error_row() {
        let mut c = cfg(ExperimentKind::Subspace);
        c.n = 5;
        c.d = 2;
        c.m = 40;
        c.alpha = 0.0;
        c.trials = 2;
        let out = run(&c).unwrap();
        assert_eq!(out.rows.len(), 2);
        for r in &out.rows {
            assert_eq!(r.metric, "sin_theta");
            assert!(r.value.is_nan());
            assert_eq!(r.pass, Some(false));
            assert!(r.detail.contains("insufficient inliers detected"), "{}", r.detail);
        }
        assert!(!out.summary.all_pass);
    }

    #[test]
    fn input_kind_is_checked() {
        let mut c = cfg(ExperimentKind::Hmm);
        c.input = Some(PathBuf::from("x.txt"));
        assert!(matches!(load_input(&c), Err(RunError::InvalidInput(_))));
        let mut c = cfg(ExperimentKind::Foobi);
        c.input = Some(PathBuf::from("/nonexistent/t.txt"));
        assert!(matches!(load_input(&c), Err(RunError::Input { .. })));
    }
}
