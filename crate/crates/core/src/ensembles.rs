//! ρ-perturbed ensembles and Monte-Carlo probes of least singular values and
//! small-ball probabilities.
//!
//! Every trial function takes a [`PerturbationModel`] carrying its own seed,
//! so a batch of trials is reproducible and order-independent when the seeds
//! come from [`crate::rng::trial_seed`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{proj_orth, sigma_k, sigma_min_cols, singular_values, Subspace};
use crate::rng::{gaussian_vector, rng_from_seed};
use crate::tensor::{
    delta_profile, dense_len, eval_poly_matrix, monomial_matrix, multiplicity, outer_power,
    sorted_multi_indices, sym_dim, sym_rank, tensor_product, CoefficientMatrix, MonomialSpec,
};

/// Gaussian perturbation with per-coordinate variance `ρ²/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationModel {
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
}

impl PerturbationModel {
    pub fn new(rho: f64, n: usize, seed: u64) -> Self {
        Self { rho, n, seed }
    }

    pub fn std_dev(&self) -> f64 {
        self.rho / (self.n as f64).sqrt()
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trial_id: u64,
    pub seed: u64,
    pub n: usize,
    pub ell: usize,
    /// Column count (k or R).
    pub k: usize,
    pub delta: f64,
    pub sigma_observed: f64,
    pub threshold: f64,
    pub pass: bool,
    pub delta_profile: Vec<usize>,
    pub delta_condition: Option<bool>,
}

impl TrialReport {
    fn new(seed: u64, n: usize, ell: usize, k: usize, delta: f64, observed: f64, threshold: f64) -> Self {
        Self {
            trial_id: 0,
            seed,
            n,
            ell,
            k,
            delta,
            sigma_observed: observed,
            threshold,
            pass: observed >= threshold,
            delta_profile: Vec::new(),
            delta_condition: None,
        }
    }

    pub fn with_id(mut self, trial_id: u64) -> Self {
        self.trial_id = trial_id;
        self
    }
}

/// Configurable stand-in for the unspecified constants of the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams {
    /// Multiplier in front of the `(ρ/n)^ℓ` scale.
    pub c: f64,
    /// Slack δ: the coefficient matrix is probed at `σ_{k+⌈δD⌉}(U)`.
    pub delta: f64,
    /// Constant on the right of the Δ-condition.
    pub delta_c: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            c: 0.01,
            delta: 0.1,
            delta_c: 1.0,
        }
    }
}

/// Adds fresh `N(0, ρ²/n)` noise to every base vector.
pub fn perturb(base: &[DVector<f64>], model: &PerturbationModel) -> Vec<DVector<f64>> {
    let mut rng = rng_from_seed(model.seed);
    perturb_with(&mut rng, base, model.rho)
}

pub fn perturb_with<R: Rng + ?Sized>(rng: &mut R, base: &[DVector<f64>], rho: f64) -> Vec<DVector<f64>> {
    base.iter()
        .map(|a| {
            let sd = rho / (a.len() as f64).sqrt();
            a + gaussian_vector(rng, a.len(), sd)
        })
        .collect()
}

/// `max(rows, cols) · ε · σ_max`, the usual numerical-rank cutoff.
pub fn machine_rank_tol(m: &DMatrix<f64>) -> f64 {
    let top = singular_values(m).iter().next().copied().unwrap_or(0.0);
    m.nrows().max(m.ncols()) as f64 * f64::EPSILON * top
}

/// Least singular value of the column-polynomial matrix on perturbed points.
pub fn trial_column_poly(
    u: &CoefficientMatrix,
    base: &[DVector<f64>],
    model: &PerturbationModel,
    params: &ThresholdParams,
) -> Result<TrialReport> {
    let k = base.len();
    let dim = sym_dim(u.n, u.ell)?;
    let points = perturb(base, model);
    let m = eval_poly_matrix(u, &points)?;
    let observed = sigma_min_cols(&m);
    let idx = k + (params.delta * dim as f64).ceil() as usize;
    let su = if idx >= 1 && idx <= u.m().min(dim) {
        sigma_k(&u.entries, idx)?
    } else {
        0.0
    };
    let scale = (model.rho / u.n as f64).powi(u.ell as i32);
    let threshold = params.c / (k as f64).sqrt() * scale * su;
    Ok(TrialReport::new(model.seed, u.n, u.ell, k, params.delta, observed, threshold))
}

/// Evaluates `Σ_s Δ_s (n/ℓ)^{ℓ−s} ≤ c (n/ℓ)^ℓ`.
pub fn delta_condition(profile: &[usize], n: usize, ell: usize, c: f64) -> bool {
    let q = n as f64 / ell as f64;
    let lhs: f64 = profile
        .iter()
        .enumerate()
        .map(|(i, &d)| d as f64 * q.powi((ell - (i + 1)) as i32))
        .sum();
    lhs <= c * q.powi(ell as i32)
}

/// Least singular value of a tensor-monomial matrix on perturbed vectors.
pub fn trial_monomial(
    spec: &MonomialSpec,
    base: &[DVector<f64>],
    model: &PerturbationModel,
    params: &ThresholdParams,
) -> Result<TrialReport> {
    let points = perturb(base, model);
    let m = monomial_matrix(&points, spec)?;
    let r = spec.num_columns();
    let n = model.n;
    let threshold = params.c * (model.rho / n as f64).powi(spec.ell as i32) / (r as f64).sqrt();
    let profile = delta_profile(spec);
    let mut report = TrialReport::new(model.seed, n, spec.ell, r, params.delta, sigma_min_cols(&m), threshold);
    report.delta_condition = Some(delta_condition(&profile, n, spec.ell, params.delta_c));
    report.delta_profile = profile;
    Ok(report)
}

/// `‖Π_{S^⊥} x̃^{⊗ℓ}‖₂` for one perturbation of `x`.
pub fn trial_sym_projection(
    x: &DVector<f64>,
    s: &Subspace,
    ell: usize,
    model: &PerturbationModel,
    params: &ThresholdParams,
) -> Result<TrialReport> {
    let n = x.len();
    let expected = dense_len(n, ell)?;
    if s.ambient() != expected {
        return Err(Error::DimensionMismatch {
            context: "trial_sym_projection subspace",
            expected,
            found: s.ambient(),
        });
    }
    let xt = perturb(std::slice::from_ref(x), model).remove(0);
    let value = proj_orth(&outer_power(&xt, ell), s)?;
    let threshold = params.c * model.rho.powi(ell as i32) / (n as f64).powi(ell as i32);
    let delta = 1.0 - s.dim() as f64 / sym_dim(n, ell)? as f64;
    Ok(TrialReport::new(model.seed, n, ell, 1, delta, value, threshold))
}

/// `‖Π_W (x̃₁ ⊗ … ⊗ x̃_ℓ)‖₂` with independently perturbed factors.
pub fn trial_decoupled(
    bases: &[DVector<f64>],
    w: &Subspace,
    model: &PerturbationModel,
    params: &ThresholdParams,
) -> Result<TrialReport> {
    let ell = bases.len();
    let n = model.n;
    let pts = perturb(bases, model);
    let refs: Vec<&DVector<f64>> = pts.iter().collect();
    let v = tensor_product(&refs);
    if v.len() != w.ambient() {
        return Err(Error::DimensionMismatch {
            context: "trial_decoupled subspace",
            expected: v.len(),
            found: w.ambient(),
        });
    }
    let value = w.project(&v).norm();
    let threshold = params.c * model.rho.powi(ell as i32) / (n as f64).powi(ell as i32);
    let delta = w.dim() as f64 / w.ambient() as f64;
    Ok(TrialReport::new(model.seed, n, ell, ell, delta, value, threshold))
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallBallPoint {
    pub eps: f64,
    pub radius: f64,
    pub hits: u64,
    pub trials: u64,
    pub probability: f64,
    pub wilson: (f64, f64),
}

/// Dense rows: row i is the symmetric tensor T_i with `⟨T_i, x^{⊗ℓ}⟩ = f_i(x)`.
pub fn dense_rows(u: &CoefficientMatrix) -> Result<DMatrix<f64>> {
    let idx = sorted_multi_indices(u.n, u.ell);
    let cols = dense_len(u.n, u.ell)?;
    let shape = vec![u.n; u.ell];
    let mut out = DMatrix::zeros(u.m(), cols);
    for off in 0..cols {
        let mut j = crate::tensor::unflatten(off, &shape);
        j.sort_unstable();
        let s = sym_rank(u.n, &j);
        let w = multiplicity(&idx[s]) as f64;
        for i in 0..u.m() {
            out[(i, off)] = u.entries[(i, s)] / w;
        }
    }
    Ok(out)
}

/// Monte-Carlo estimate of `Pr[‖g(u + z)‖₂ < ε·η·ρ^ℓ/n^ℓ]` for each ε.
pub fn small_ball_curve(
    g: &CoefficientMatrix,
    center: &DVector<f64>,
    model: &PerturbationModel,
    eps_grid: &[f64],
    eta: f64,
    samples: u64,
) -> Result<Vec<SmallBallPoint>> {
    if eps_grid.iter().any(|&e| e <= 0.0) || eps_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("eps_grid must be positive and ascending".into()));
    }
    if center.len() != g.n {
        return Err(Error::DimensionMismatch {
            context: "small_ball_curve center",
            expected: g.n,
            found: center.len(),
        });
    }
    let scale = eta * model.rho.powi(g.ell as i32) / (g.n as f64).powi(g.ell as i32);
    let mut rng = rng_from_seed(model.seed);
    let mut hits = vec![0u64; eps_grid.len()];
    let sd = model.std_dev();
    for _ in 0..samples {
        let x = center + gaussian_vector(&mut rng, g.n, sd);
        let value = (&g.entries * crate::tensor::monomial_vector(&x, g.ell)).norm();
        // Grid is ascending, so every radius from the first hit upward counts.
        if let Some(first) = eps_grid.iter().position(|&e| value < e * scale) {
            for h in &mut hits[first..] {
                *h += 1;
            }
        }
    }
    Ok(eps_grid
        .iter()
        .zip(hits)
        .map(|(&eps, h)| SmallBallPoint {
            eps,
            radius: eps * scale,
            hits: h,
            trials: samples,
            probability: h as f64 / samples as f64,
            wilson: wilson_interval(h, samples, 1.96),
        })
        .collect())
}

/// Slope of log-probability against log-ε, weighting each point by its hit
/// count; points without hits are skipped.
pub fn log_log_slope(curve: &[SmallBallPoint]) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> = curve
        .iter()
        .filter(|p| p.hits > 0)
        .map(|p| (p.eps.ln(), p.probability.ln(), p.hits as f64))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let wsum: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / wsum;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / wsum;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Polynomial map whose rows are the monomials `x_I·x_j` for `I ∈ [n]^{ℓ−1}`, `j < r`.
///
/// Its image of `z` has norm `‖z‖^{ℓ−1}·‖z_{[r]}‖`, so small balls have
/// probability of order `ε^r` however large n is.
pub fn counterexample_matrix(n: usize, ell: usize, r: usize) -> Result<CoefficientMatrix> {
    if r > n || r == 0 || ell == 0 {
        return Err(Error::InvalidArgument(format!(
            "counterexample needs 1 ≤ r ≤ n and ℓ ≥ 1 (n={n}, r={r}, ℓ={ell})"
        )));
    }
    let dim = sym_dim(n, ell)?;
    let heads = dense_len(n, ell - 1)?;
    let m = r * heads;
    let head_shape = vec![n; ell - 1];
    let mut entries = DMatrix::zeros(m, dim);
    for h in 0..heads {
        let head = crate::tensor::unflatten(h, &head_shape);
        for j in 0..r {
            let mut idx = head.clone();
            idx.push(j);
            idx.sort_unstable();
            entries[(h * r + j, sym_rank(n, &idx))] = 1.0;
        }
    }
    CoefficientMatrix::new(n, ell, entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedComboReport {
    pub seed: u64,
    pub patterns: usize,
    pub low_patterns: usize,
    pub threshold: f64,
    pub min_value: f64,
}

/// Enumerates the `2^{r−1}` combinations `x + z₁ ± z₂ ± … ± z_r` (each zᵢ with
/// per-coordinate variance `ρ²/(rn)`) and counts those whose square has small
/// projection onto `S^⊥`.
pub fn signed_combination_demo(
    x: &DVector<f64>,
    s: &Subspace,
    model: &PerturbationModel,
    r: usize,
    threshold: f64,
) -> Result<SignedComboReport> {
    let n = x.len();
    if r == 0 || r > 12 {
        return Err(Error::InvalidArgument(format!("split count must be in 1..=12, got {r}")));
    }
    if s.ambient() != n * n {
        return Err(Error::DimensionMismatch {
            context: "signed_combination_demo subspace",
            expected: n * n,
            found: s.ambient(),
        });
    }
    let mut rng = rng_from_seed(model.seed);
    let sd = model.rho / ((r * n) as f64).sqrt();
    let z: Vec<DVector<f64>> = (0..r).map(|_| gaussian_vector(&mut rng, n, sd)).collect();
    let patterns = 1usize << (r - 1);
    let mut low = 0;
    let mut min_value = f64::INFINITY;
    for mask in 0..patterns {
        let mut y = x + &z[0];
        for (i, zi) in z.iter().enumerate().skip(1) {
            if mask >> (i - 1) & 1 == 1 {
                y -= zi;
            } else {
                y += zi;
            }
        }
        let v = proj_orth(&outer_power(&y, 2), s)?;
        min_value = min_value.min(v);
        if v < threshold {
            low += 1;
        }
    }
    Ok(SignedComboReport {
        seed: model.seed,
        patterns,
        low_patterns: low,
        threshold,
        min_value,
    })
}

/// Random subspace of the symmetric tensors in `(ℝⁿ)^{⊗ℓ}` with the given
/// dimension, as a subspace of the flattened `n^ℓ` space.
pub fn random_symmetric_subspace<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    ell: usize,
    dim: usize,
) -> Result<Subspace> {
    let d = sym_dim(n, ell)?;
    if dim > d {
        return Err(Error::InvalidArgument(format!("dimension {dim} exceeds {d}")));
    }
    let inner = Subspace::random(rng, d, dim);
    // Orthonormal embedding of symmetric coordinates into the dense space.
    let u = CoefficientMatrix::new(n, ell, DMatrix::identity(d, d))?;
    let mut emb = dense_rows(&u)?.transpose();
    for (c, j) in sorted_multi_indices(n, ell).iter().enumerate() {
        let scale = (multiplicity(j) as f64).sqrt();
        emb.column_mut(c).scale_mut(scale);
    }
    Subspace::new(emb * inner.basis())
}
