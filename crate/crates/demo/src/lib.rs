//! WebAssembly bindings behind `www/index.html`.
//!
//! Three operations, each a pure function of its arguments and a seed:
//! [`sigma_histogram`], [`small_ball`] and [`foobi_noise_sweep`]. They also
//! run natively, which is how the tests exercise them.

use nalgebra::{DMatrix, DVector};
use smoothed::ensembles::{
    counterexample_matrix, log_log_slope, machine_rank_tol, perturb, small_ball_curve, PerturbationModel,
};
use smoothed::foobi::{decompose, match_components, FoobiInstance, FoobiParams};
use smoothed::linalg::singular_values;
use smoothed::rng::trial_seed;
use smoothed::tensor::outer_power;
use wasm_bindgen::prelude::*;

const MAX_TRIALS: u32 = 1000;
const MAX_SAMPLES: u32 = 400_000;

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn to_string(e: smoothed::Error) -> String {
    e.to_string()
}

/// σ_k of `k` perturbed copies of e₁ lifted to `x^{⊗ℓ}`, one trial per seed.
#[wasm_bindgen]
pub struct SigmaSample {
    log10_sigma: Vec<f64>,
    log10_tol: Vec<f64>,
    dimension: u32,
}

#[wasm_bindgen]
impl SigmaSample {
    /// log₁₀ σ_k per trial (−∞ mapped to −300).
    #[wasm_bindgen(getter)]
    pub fn log10_sigma(&self) -> Vec<f64> {
        self.log10_sigma.clone()
    }

    /// log₁₀ of the numerical rank tolerance per trial.
    #[wasm_bindgen(getter)]
    pub fn log10_tol(&self) -> Vec<f64> {
        self.log10_tol.clone()
    }

    /// C(n+ℓ−1, ℓ): σ_k collapses once k exceeds it.
    #[wasm_bindgen(getter)]
    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    /// Trials with σ_k above `margin` times the tolerance.
    pub fn count_above(&self, margin: f64) -> u32 {
        let shift = margin.log10();
        self.log10_sigma
            .iter()
            .zip(&self.log10_tol)
            .filter(|(s, t)| **s > **t + shift)
            .count() as u32
    }
}

fn log10_floor(x: f64) -> f64 {
    if x > 0.0 {
        x.log10()
    } else {
        -300.0
    }
}

#[wasm_bindgen]
pub fn sigma_histogram(n: u32, ell: u32, k: u32, rho: f64, trials: u32, seed: u32) -> Result<SigmaSample, String> {
    check((1..=12).contains(&n), "n must lie in 1..=12")?;
    check((1..=3).contains(&ell), "ell must lie in 1..=3")?;
    check((1..=200).contains(&k), "k must lie in 1..=200")?;
    check(rho.is_finite() && rho >= 0.0, "rho must be finite and nonnegative")?;
    check((1..=MAX_TRIALS).contains(&trials), "trials must lie in 1..=1000")?;
    let (n, ell, k) = (n as usize, ell as usize, k as usize);
    check(n.pow(ell as u32) <= 2000, "n^ell must stay below 2000")?;
    let mut e1 = DVector::zeros(n);
    e1[0] = 1.0;
    let base = vec![e1; k];
    let mut log10_sigma = Vec::with_capacity(trials as usize);
    let mut log10_tol = Vec::with_capacity(trials as usize);
    for t in 0..trials as u64 {
        let pts = perturb(&base, &PerturbationModel::new(rho, n, trial_seed(seed as u64, t)));
        let cols: Vec<DVector<f64>> = pts.iter().map(|p| outer_power(p, ell)).collect();
        let m = DMatrix::from_columns(&cols);
        let sigma = singular_values(&m).get(k - 1).copied().unwrap_or(0.0);
        log10_sigma.push(log10_floor(sigma));
        log10_tol.push(log10_floor(machine_rank_tol(&m)));
    }
    Ok(SigmaSample {
        log10_sigma,
        log10_tol,
        dimension: smoothed::tensor::sym_dim(n, ell).map_err(to_string)? as u32,
    })
}

/// Small-ball probabilities of the rank-r counterexample map (n=4, ℓ=2).
#[wasm_bindgen]
pub struct SmallBall {
    eps: Vec<f64>,
    probability: Vec<f64>,
    slope: f64,
}

#[wasm_bindgen]
impl SmallBall {
    #[wasm_bindgen(getter)]
    pub fn eps(&self) -> Vec<f64> {
        self.eps.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn probability(&self) -> Vec<f64> {
        self.probability.clone()
    }

    /// Fitted log-log slope; NaN when fewer than two points have hits.
    #[wasm_bindgen(getter)]
    pub fn slope(&self) -> f64 {
        self.slope
    }
}

#[wasm_bindgen]
pub fn small_ball(r: u32, rho: f64, samples: u32, seed: u32) -> Result<SmallBall, String> {
    check((1..=3).contains(&r), "r must lie in 1..=3")?;
    check(rho.is_finite() && rho > 0.0, "rho must be positive")?;
    check((100..=MAX_SAMPLES).contains(&samples), "samples must lie in 100..=400000")?;
    let (n, ell) = (4, 2);
    let g = counterexample_matrix(n, ell, r as usize).map_err(to_string)?;
    let mut centre = DVector::zeros(n);
    centre[n - 1] = 1.0;
    let eps: Vec<f64> = (0..=8).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
    let eta = 50.0 * 5f64.powi(r as i32 - 1);
    let model = PerturbationModel::new(rho, n, seed as u64);
    let curve = small_ball_curve(&g, &centre, &model, &eps, eta, samples as u64).map_err(to_string)?;
    Ok(SmallBall {
        slope: log_log_slope(&curve).unwrap_or(f64::NAN),
        probability: curve.iter().map(|p| p.probability).collect(),
        eps,
    })
}

/// Median FOOBI matched error at each noise level.
///
/// Noise levels are `points` log-spaced values of ‖Err‖_F between
/// `10^log10_min` and `10^log10_max`. Returns `[noise₀, err₀, noise₁, err₁, …]`.
#[wasm_bindgen]
pub fn foobi_noise_sweep(
    n: u32,
    r: u32,
    log10_min: f64,
    log10_max: f64,
    points: u32,
    trials: u32,
    seed: u32,
) -> Result<Vec<f64>, String> {
    check((2..=6).contains(&n), "n must lie in 2..=6")?;
    check(r >= 1 && r <= n * (n + 1) / 2, "r must lie in 1..=n(n+1)/2")?;
    check(log10_min.is_finite() && log10_max.is_finite() && log10_min < log10_max, "need log10_min < log10_max")?;
    check((2..=20).contains(&points), "points must lie in 2..=20")?;
    check((1..=50).contains(&trials), "trials must lie in 1..=50")?;
    let (n, r) = (n as usize, r as usize);
    let mut out = Vec::with_capacity(2 * points as usize);
    for p in 0..points {
        let level = 10f64.powf(log10_min + (log10_max - log10_min) * p as f64 / (points - 1) as f64);
        let mut errs: Vec<f64> = (0..trials as u64)
            .map(|t| {
                let s = trial_seed(seed as u64, t);
                FoobiInstance::random(n, 2, r, level, trial_seed(s, 0))
                    .and_then(|inst| {
                        let res = decompose(&inst.t, r, &FoobiParams::default(), trial_seed(s, 1))?;
                        match_components(&inst.a, &res.factors)
                    })
                    .map_or(f64::INFINITY, |m| m.error)
            })
            .collect();
        errs.sort_by(|a, b| a.total_cmp(b));
        let k = errs.len();
        let median = if k % 2 == 1 {
            errs[k / 2]
        } else {
            0.5 * (errs[k / 2 - 1] + errs[k / 2])
        };
        out.push(level);
        out.push(median);
    }
    Ok(out)
}
