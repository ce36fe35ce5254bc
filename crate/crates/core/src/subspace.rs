//! Robust subspace recovery from lifted 1-bounded combinations.
//!
//! Points are lifted to their ℓ-th tensor powers. Inliers lie in a subspace T
//! of dimension d, so their lifts span only `C(d+ℓ−1, ℓ)` dimensions of the
//! `C(n+ℓ−1, ℓ)`-dimensional symmetric space. Inside a batch that holds
//! enough inliers, an inlier's lift is a 1-bounded combination of the other
//! lifts, while a perturbed outlier's lift is not. Points that pass the
//! ℓ₁-residual test are collected and the top-d singular subspace of the
//! first 2d of them is returned.
//!
//! Lifts are kept in sorted-monomial coordinates. The ℓ₁ norm of a symmetric
//! `n^ℓ` tensor equals `Σ_J mult(J)·|x_J|`, so the LP below is the exact dense
//! formulation at a fraction of the size.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sin_theta, singular_values, Subspace};
use crate::rng::{gaussian_vector, rng_from_seed, unit_vector, StdRng};
use crate::tensor::{monomial_vector, multiplicity, sorted_multi_indices, sym_dim};

#[derive(Debug, Clone)]
pub struct RecoveryInstance {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub alpha: f64,
    pub inlier_count: usize,
    pub points: Vec<DVector<f64>>,
    pub labels: Vec<bool>,
    pub t: Subspace,
    pub rho: f64,
    pub eps0: f64,
}

impl RecoveryInstance {
    pub fn outlier_indices(&self) -> Vec<usize> {
        (0..self.m).filter(|&i| !self.labels[i]).collect()
    }
}

/// Source of base points and of the additive noise E.
pub trait Adversary {
    /// Inlier base point, given in coordinates of an orthonormal basis of T.
    fn inlier_base(&mut self, rng: &mut StdRng, d: usize) -> DVector<f64>;
    fn outlier_base(&mut self, rng: &mut StdRng, n: usize) -> DVector<f64>;
    /// Noise matrix (n × m, one column per point) with Frobenius norm eps0.
    fn noise(
        &mut self,
        rng: &mut StdRng,
        points: &[DVector<f64>],
        labels: &[bool],
        t: &Subspace,
        eps0: f64,
    ) -> DMatrix<f64>;
}

/// Unit directions with lengths uniform in [1/2, 1]; noise pushes inliers
/// orthogonally out of T.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultAdversary;

impl Adversary for DefaultAdversary {
    fn inlier_base(&mut self, rng: &mut StdRng, d: usize) -> DVector<f64> {
        unit_vector(rng, d) * rng.random_range(0.5..=1.0)
    }

    fn outlier_base(&mut self, rng: &mut StdRng, n: usize) -> DVector<f64> {
        unit_vector(rng, n) * rng.random_range(0.5..=1.0)
    }

    fn noise(
        &mut self,
        rng: &mut StdRng,
        points: &[DVector<f64>],
        labels: &[bool],
        t: &Subspace,
        eps0: f64,
    ) -> DMatrix<f64> {
        let n = t.ambient();
        let mut e = DMatrix::zeros(n, points.len());
        if eps0 == 0.0 || !labels.iter().any(|&l| l) {
            return e;
        }
        for (i, &inlier) in labels.iter().enumerate() {
            if inlier {
                let g = gaussian_vector(rng, n, 1.0);
                e.set_column(i, &(&g - t.project(&g)));
            }
        }
        let norm = e.norm();
        if norm > 0.0 {
            e *= eps0 / norm;
        }
        e
    }
}

pub fn generate_instance(
    n: usize,
    d: usize,
    m: usize,
    alpha: f64,
    rho: f64,
    eps0: f64,
    seed: u64,
) -> Result<RecoveryInstance> {
    generate_instance_with(&mut DefaultAdversary, n, d, m, alpha, rho, eps0, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn generate_instance_with<A: Adversary>(
    adversary: &mut A,
    n: usize,
    d: usize,
    m: usize,
    alpha: f64,
    rho: f64,
    eps0: f64,
    seed: u64,
) -> Result<RecoveryInstance> {
    if d == 0 || d >= n {
        return Err(Error::InvalidArgument(format!("need 0 < d < n, got d={d}, n={n}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut rng = rng_from_seed(seed);
    let t = Subspace::random(&mut rng, n, d);
    // Rounded up so the realised fraction never falls below α.
    let inlier_count = ((alpha * m as f64) - 1e-9).ceil().max(0.0) as usize;
    let inlier_count = inlier_count.min(m);
    let mut labels: Vec<bool> = (0..m).map(|i| i < inlier_count).collect();
    labels.shuffle(&mut rng);
    let mut points = Vec::with_capacity(m);
    for &inlier in &labels {
        let p = if inlier {
            let coords = adversary.inlier_base(&mut rng, d) + gaussian_vector(&mut rng, d, rho / (d as f64).sqrt());
            t.basis() * coords
        } else {
            adversary.outlier_base(&mut rng, n) + gaussian_vector(&mut rng, n, rho / (n as f64).sqrt())
        };
        points.push(p);
    }
    let e = adversary.noise(&mut rng, &points, &labels, &t, eps0);
    for (i, p) in points.iter_mut().enumerate() {
        *p += e.column(i);
    }
    Ok(RecoveryInstance {
        n,
        d,
        m,
        alpha,
        inlier_count,
        points,
        labels,
        t,
        rho,
        eps0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryParams {
    pub ell: usize,
    pub delta: f64,
    pub tau: f64,
    pub b: usize,
}

impl RecoveryParams {
    /// Defaults: δ = min(1, α·D / C(d+ℓ−1, ℓ) − 1) clamped at 0,
    /// b = ⌊(1 − δ/3)·D⌋ and τ = ρ^ℓ / (10 n^ℓ), with D = C(n+ℓ−1, ℓ).
    pub fn new(n: usize, d: usize, ell: usize, alpha: f64, rho: f64) -> Result<Self> {
        let big = sym_dim(n, ell)? as f64;
        let small = sym_dim(d, ell)? as f64;
        let delta = (alpha * big / small - 1.0).clamp(0.0, 1.0);
        Ok(Self {
            ell,
            delta,
            tau: rho.powi(ell as i32) / (10.0 * (n as f64).powi(ell as i32)),
            b: ((1.0 - delta / 3.0) * big).floor() as usize,
        })
    }
}

/// Optimal value and witness of
/// `min ‖u − Σ αᵢ vᵢ‖₁  s.t. −1 ≤ αᵢ ≤ 1`.
pub fn bounded_combo_residual(u: &DVector<f64>, others: &[DVector<f64>]) -> Result<(f64, Vec<f64>)> {
    bounded_combo_residual_weighted(u, others, &vec![1.0; u.len()])
}

/// Same LP with coordinate weights: `min Σ_J w_J |u_J − Σ αᵢ v_{i,J}|`.
pub fn bounded_combo_residual_weighted(
    u: &DVector<f64>,
    others: &[DVector<f64>],
    weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let len = u.len();
    if weights.len() != len {
        return Err(Error::DimensionMismatch {
            context: "bounded_combo_residual weights",
            expected: len,
            found: weights.len(),
        });
    }
    if let Some(v) = others.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch {
            context: "bounded_combo_residual",
            expected: len,
            found: v.len(),
        });
    }
    // The split-variable form is a fallback for the rare pivots where the
    // simplex basis of the two-sided form turns singular.
    let witness = match solve_two_sided(u, others, weights) {
        Ok(w) => w,
        Err(first) => solve_split(u, others, weights).map_err(|_| first)?,
    };
    // Recompute the objective from the witness so the value is exact for it.
    let residual = (0..len)
        .map(|j| {
            let fit: f64 = witness.iter().zip(others).map(|(a, v)| a * v[j]).sum();
            weights[j] * (u[j] - fit).abs()
        })
        .sum();
    Ok((residual, witness))
}

fn finish(lp: &Problem, alphas: &[microlp::Variable]) -> Result<Vec<f64>> {
    let sol = lp
        .solve()
        .map_err(|e| Error::LpFailure(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::LpFailure("solve interrupted".into()))?;
    Ok(alphas.iter().map(|&a| sol.var_value(a)).collect())
}

/// `−t ≤ u − Σ αᵢ vᵢ ≤ t`, minimise `Σ w·t`.
fn solve_two_sided(u: &DVector<f64>, others: &[DVector<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let alphas: Vec<_> = others.iter().map(|_| lp.add_var(0.0, (-1.0, 1.0))).collect();
    let slack: Vec<_> = weights.iter().map(|&w| lp.add_var(w, (0.0, f64::INFINITY))).collect();
    let mut row = Vec::with_capacity(others.len() + 1);
    for j in 0..u.len() {
        row.clear();
        row.extend(alphas.iter().zip(others).map(|(&a, v)| (a, -v[j])));
        row.push((slack[j], -1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, -u[j]);
        row.clear();
        row.extend(alphas.iter().zip(others).map(|(&a, v)| (a, v[j])));
        row.push((slack[j], -1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, u[j]);
    }
    finish(&lp, &alphas)
}

/// `Σ αᵢ vᵢ + p − q = u` with `p, q ≥ 0`, minimise `Σ w·(p + q)`.
fn solve_split(u: &DVector<f64>, others: &[DVector<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let alphas: Vec<_> = others.iter().map(|_| lp.add_var(0.0, (-1.0, 1.0))).collect();
    let pos: Vec<_> = weights.iter().map(|&w| lp.add_var(w, (0.0, f64::INFINITY))).collect();
    let neg: Vec<_> = weights.iter().map(|&w| lp.add_var(w, (0.0, f64::INFINITY))).collect();
    let mut row = Vec::with_capacity(others.len() + 2);
    for j in 0..u.len() {
        row.clear();
        row.extend(alphas.iter().zip(others).map(|(&a, v)| (a, v[j])));
        row.push((pos[j], 1.0));
        row.push((neg[j], -1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, u[j]);
    }
    finish(&lp, &alphas)
}

/// Index blocks of size b. When b divides m these are the m/b consecutive
/// blocks; otherwise every cyclic window of length m′ (the largest multiple of
/// b below m) is split into b-blocks. Repeated blocks are dropped.
pub fn batch_plan(m: usize, b: usize) -> Result<Vec<Vec<usize>>> {
    if b == 0 || b > m {
        return Err(Error::InvalidArgument(format!("batch size {b} must lie in 1..={m}")));
    }
    if m.is_multiple_of(b) {
        return Ok((0..m / b).map(|i| (i * b..(i + 1) * b).collect()).collect());
    }
    let window = (m / b) * b;
    let mut seen = std::collections::HashSet::new();
    let mut plan = Vec::new();
    for start in 0..m {
        for block in 0..window / b {
            let idx: Vec<usize> = (0..b).map(|o| (start + block * b + o) % m).collect();
            let mut key = idx.clone();
            key.sort_unstable();
            if seen.insert(key) {
                plan.push(idx);
            }
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub subspace: Subspace,
    /// Selected indices in increasing order, truncated to 2d.
    pub selected: Vec<usize>,
    pub batches_processed: usize,
}

fn lp_weights(n: usize, ell: usize) -> Vec<f64> {
    sorted_multi_indices(n, ell)
        .iter()
        .map(|j| multiplicity(j) as f64)
        .collect()
}

/// Selects the members of one block whose lifts are 1-bounded combinations
/// of the other lifts in the block up to ℓ₁ error `tau/2`.
pub fn select_in_block(
    lifts: &[DVector<f64>],
    block: &[usize],
    weights: &[f64],
    tau: f64,
) -> Result<Vec<usize>> {
    let mut chosen = Vec::new();
    for (pos, &i) in block.iter().enumerate() {
        let others: Vec<DVector<f64>> = block
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != pos)
            .map(|(_, &j)| lifts[j].clone())
            .collect();
        let (res, _) = bounded_combo_residual_weighted(&lifts[i], &others, weights)?;
        if res <= tau / 2.0 {
            chosen.push(i);
        }
    }
    Ok(chosen)
}

fn lift_all(points: &[DVector<f64>], ell: usize) -> Vec<DVector<f64>> {
    points.iter().map(|p| monomial_vector(p, ell)).collect()
}

fn collect(points: &[DVector<f64>], params: &RecoveryParams, target: usize) -> Result<(Vec<usize>, usize)> {
    let n = points.first().map(|p| p.len()).ok_or(Error::EmptySamples)?;
    let lifts = lift_all(points, params.ell);
    let weights = lp_weights(n, params.ell);
    let plan = batch_plan(points.len(), params.b)?;
    let mut chosen = std::collections::BTreeSet::new();
    let mut processed = 0;
    for block in &plan {
        processed += 1;
        let fresh: Vec<usize> = block.iter().copied().filter(|i| !chosen.contains(i)).collect();
        if fresh.is_empty() {
            continue;
        }
        // Already chosen points still act as combination members.
        for i in select_in_block(&lifts, block, &weights, params.tau)? {
            chosen.insert(i);
        }
        if chosen.len() >= target {
            break;
        }
    }
    Ok((chosen.into_iter().collect(), processed))
}

/// Recovers a d-dimensional subspace from a corrupted point cloud.
pub fn recover(points: &[DVector<f64>], params: &RecoveryParams, d: usize) -> Result<RecoveryOutcome> {
    let (mut selected, processed) = collect(points, params, 2 * d)?;
    if selected.len() < 2 * d {
        return Err(Error::InsufficientInliers {
            found: selected.len(),
            needed: 2 * d,
        });
    }
    selected.truncate(2 * d);
    let cols: Vec<DVector<f64>> = selected.iter().map(|&i| points[i].clone()).collect();
    let subspace = Subspace::top_left(&DMatrix::from_columns(&cols), d)?;
    Ok(RecoveryOutcome {
        subspace,
        selected,
        batches_processed: processed,
    })
}

/// Variant for unknown d: collects up to `2·d_max` points and picks d at the
/// largest ratio gap of their singular values.
pub fn recover_unknown_dim(
    points: &[DVector<f64>],
    params: &RecoveryParams,
    d_max: usize,
) -> Result<RecoveryOutcome> {
    let (selected, processed) = collect(points, params, 2 * d_max)?;
    if selected.len() < 2 {
        return Err(Error::InsufficientInliers {
            found: selected.len(),
            needed: 2,
        });
    }
    let cols: Vec<DVector<f64>> = selected.iter().map(|&i| points[i].clone()).collect();
    let mat = DMatrix::from_columns(&cols);
    let d = estimate_dimension(&mat).min(d_max);
    Ok(RecoveryOutcome {
        subspace: Subspace::top_left(&mat, d)?,
        selected,
        batches_processed: processed,
    })
}

/// Index of the largest ratio `σ_i / σ_{i+1}` (floored at machine scale).
pub fn estimate_dimension(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let floor = s.iter().next().copied().unwrap_or(0.0) * 1e-15 + f64::MIN_POSITIVE;
    let mut best = (1, 0.0);
    for i in 0..s.len().saturating_sub(1) {
        let ratio = s[i].max(floor) / s[i + 1].max(floor);
        if ratio > best.1 {
            best = (i + 1, ratio);
        }
    }
    best.0
}

/// Half the 1st percentile of outlier residuals measured on a pilot instance,
/// using the same batch plan as [`recover`].
pub fn calibrate_tau(pilot: &RecoveryInstance, params: &RecoveryParams, max_blocks: usize) -> Result<f64> {
    let lifts = lift_all(&pilot.points, params.ell);
    let weights = lp_weights(pilot.n, params.ell);
    let mut residuals = Vec::new();
    for block in batch_plan(pilot.m, params.b)?.iter().take(max_blocks) {
        for (pos, &i) in block.iter().enumerate() {
            if pilot.labels[i] {
                continue;
            }
            let others: Vec<DVector<f64>> = block
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != pos)
                .map(|(_, &j)| lifts[j].clone())
                .collect();
            residuals.push(bounded_combo_residual_weighted(&lifts[i], &others, &weights)?.0);
        }
    }
    if residuals.is_empty() {
        return Err(Error::EmptySamples);
    }
    residuals.sort_by(|a, b| a.total_cmp(b));
    let idx = ((residuals.len() as f64) * 0.01).floor() as usize;
    Ok(residuals[idx.min(residuals.len() - 1)] / 2.0)
}

/// sin-Θ distance between the planted and recovered subspaces.
pub fn evaluate(t: &Subspace, t_hat: &Subspace) -> Result<f64> {
    sin_theta(t, t_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::proj_orth;
    use crate::tensor::outer_power;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn instance_examples() {
        let inst = generate_instance(6, 2, 40, 1.0, 0.1, 0.0, 1).unwrap();
        assert!(inst.points.iter().all(|p| proj_orth(p, &inst.t).unwrap() < 1e-12));

        let inst = generate_instance(8, 2, 400, 0.12, 0.1, 0.0, 2).unwrap();
        let count = inst.labels.iter().filter(|&&l| l).count();
        assert_eq!(count, inst.inlier_count);
        assert!(count as f64 / 400.0 >= 0.12);

        let inst = generate_instance(5, 2, 50, 0.4, 0.0, 0.0, 3).unwrap();
        for (p, &l) in inst.points.iter().zip(&inst.labels) {
            let len = p.norm();
            assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&len));
            if l {
                assert!(proj_orth(p, &inst.t).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn adversarial_noise_has_requested_norm() {
        let inst = generate_instance(6, 2, 30, 0.5, 0.1, 1e-3, 4).unwrap();
        let clean = generate_instance(6, 2, 30, 0.5, 0.1, 0.0, 4).unwrap();
        let diff: f64 = inst
            .points
            .iter()
            .zip(&clean.points)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(diff, 1e-3, max_relative = 1e-9);
    }

    #[test]
    fn pre_noise_lengths_in_model_range() {
        let rho = 0.05;
        let inst = generate_instance(8, 3, 300, 0.3, rho, 0.0, 5).unwrap();
        for p in &inst.points {
            let len = p.norm();
            assert!(len >= 0.5 - 5.0 * rho && len <= 1.0 + 5.0 * rho, "{len}");
        }
    }

    #[test]
    fn residual_examples() {
        let v1 = dv(&[1.0, 0.0, 2.0]);
        let v2 = dv(&[0.0, 1.0, -1.0]);
        let (res, alpha) = bounded_combo_residual(&(&v1 + &v2), &[v1.clone(), v2.clone()]).unwrap();
        assert!(res < 1e-9);
        assert!((alpha[0] - 1.0).abs() < 1e-9 && (alpha[1] - 1.0).abs() < 1e-9);

        let (res, alpha) = bounded_combo_residual(&(&v1 * 3.0), std::slice::from_ref(&v1)).unwrap();
        assert_relative_eq!(res, 2.0 * v1.lp_norm(1), max_relative = 1e-9);
        assert_relative_eq!(alpha[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn residual_matches_grid_search() {
        let mut rng = rng_from_seed(6);
        let u = gaussian_vector(&mut rng, 6, 1.0);
        let others: Vec<_> = (0..5).map(|_| gaussian_vector(&mut rng, 6, 1.0)).collect();
        let (res, _) = bounded_combo_residual(&u, &others).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let mut best = f64::INFINITY;
        let mut idx = [0usize; 5];
        loop {
            let mut r = u.clone();
            for (k, &g) in idx.iter().enumerate() {
                r -= &others[k] * grid[g];
            }
            best = best.min(r.lp_norm(1));
            let mut p = 0;
            while p < 5 {
                idx[p] += 1;
                if idx[p] < grid.len() {
                    break;
                }
                idx[p] = 0;
                p += 1;
            }
            if p == 5 {
                break;
            }
        }
        // The LP optimum is below every grid point, and the grid gets within
        // one half-step of the optimum along each coordinate.
        let slack: f64 = others.iter().map(|v| 0.05 * v.lp_norm(1)).sum();
        assert!(res <= best + 1e-9);
        assert!(best <= res + slack);
    }

    #[test]
    fn weighted_lp_equals_dense_lp() {
        let mut rng = rng_from_seed(7);
        let (n, ell) = (3, 2);
        let pts: Vec<_> = (0..5).map(|_| gaussian_vector(&mut rng, n, 1.0)).collect();
        let dense: Vec<_> = pts.iter().map(|p| outer_power(p, ell)).collect();
        let sym = lift_all(&pts, ell);
        let w = lp_weights(n, ell);
        let (a, _) = bounded_combo_residual(&dense[0], &dense[1..]).unwrap();
        let (b, _) = bounded_combo_residual_weighted(&sym[0], &sym[1..], &w).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-8);
    }

    #[test]
    fn lp_formulations_agree() {
        let mut rng = rng_from_seed(14);
        for _ in 0..10 {
            let u = gaussian_vector(&mut rng, 8, 1.0);
            let others: Vec<_> = (0..5).map(|_| gaussian_vector(&mut rng, 8, 1.0)).collect();
            let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
            let objective = |a: &[f64]| -> f64 {
                (0..8)
                    .map(|j| w[j] * (u[j] - a.iter().zip(&others).map(|(x, v)| x * v[j]).sum::<f64>()).abs())
                    .sum()
            };
            let a = objective(&solve_two_sided(&u, &others, &w).unwrap());
            let b = objective(&solve_split(&u, &others, &w).unwrap());
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn batch_plan_examples() {
        assert_eq!(batch_plan(6, 3).unwrap(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        let plan = batch_plan(7, 3).unwrap();
        assert_eq!(plan[0], vec![0, 1, 2]);
        assert_eq!(plan[1], vec![3, 4, 5]);
        assert_eq!(plan[2], vec![1, 2, 3]);
        assert!(plan.iter().all(|b| b.len() == 3));
        assert!(batch_plan(3, 4).is_err());
    }

    proptest! {
        #[test]
        fn batch_plan_covers_everything(m in 1usize..60, b_frac in 0.05f64..1.0) {
            let b = ((m as f64 * b_frac).ceil() as usize).clamp(1, m);
            let plan = batch_plan(m, b).unwrap();
            let mut seen = vec![false; m];
            for block in &plan {
                prop_assert_eq!(block.len(), b);
                for &i in block {
                    seen[i] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn recovers_exact_linear_case() {
        let inst = generate_instance(6, 2, 60, 1.0, 0.1, 0.0, 8).unwrap();
        let params = RecoveryParams::new(6, 2, 1, 1.0, 0.1).unwrap();
        let out = recover(&inst.points, &params, 2).unwrap();
        assert!(evaluate(&inst.t, &out.subspace).unwrap() <= 1e-8);
    }

    #[test]
    fn recovers_quadratic_lift_without_outliers() {
        let mut zero_outliers = 0;
        for seed in 0..20 {
            let inst = generate_instance(8, 2, 500, 0.12, 0.1, 0.0, 100 + seed).unwrap();
            let params = RecoveryParams::new(8, 2, 2, 0.12, 0.1).unwrap();
            let out = recover(&inst.points, &params, 2).unwrap();
            assert!(evaluate(&inst.t, &out.subspace).unwrap() <= 1e-6, "seed {seed}");
            if out.selected.iter().all(|&i| inst.labels[i]) {
                zero_outliers += 1;
            }
        }
        assert_eq!(zero_outliers, 20);
    }

    #[test]
    fn all_outliers_is_reported() {
        let inst = generate_instance(6, 2, 40, 0.0, 0.1, 0.0, 9).unwrap();
        let params = RecoveryParams::new(6, 2, 2, 0.5, 0.1).unwrap();
        match recover(&inst.points, &params, 2) {
            Err(Error::InsufficientInliers { found, needed }) => {
                assert_eq!(needed, 4);
                assert!(found < 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inlier_sufficiency() {
        // A single block with C(d+ℓ−1, ℓ) + s inliers selects at least s of them.
        let (n, d, ell) = (6, 2, 2);
        let need = sym_dim(d, ell).unwrap();
        for s in 1..=3 {
            let inst = generate_instance(n, d, 18, (need + s) as f64 / 18.0, 0.1, 0.0, 40 + s as u64).unwrap();
            let lifts = lift_all(&inst.points, ell);
            let block: Vec<usize> = (0..18).collect();
            let params = RecoveryParams::new(n, d, ell, 0.5, 0.1).unwrap();
            let chosen = select_in_block(&lifts, &block, &lp_weights(n, ell), params.tau).unwrap();
            let inliers = chosen.iter().filter(|&&i| inst.labels[i]).count();
            assert!(inliers >= s, "s={s}: {inliers}");
        }
    }

    #[test]
    fn evaluate_examples() {
        let mut rng = rng_from_seed(10);
        let t = Subspace::random(&mut rng, 5, 2);
        assert!(evaluate(&t, &t).unwrap() < 1e-12);
        let a = Subspace::new(DMatrix::from_column_slice(4, 2, &[1., 0., 0., 0., 0., 1., 0., 0.])).unwrap();
        let b = Subspace::new(DMatrix::from_column_slice(4, 2, &[0., 0., 1., 0., 0., 0., 0., 1.])).unwrap();
        assert_relative_eq!(evaluate(&a, &b).unwrap(), 2f64.sqrt(), max_relative = 1e-12);

        let th = 1e-3f64;
        let rot = Subspace::new(DMatrix::from_column_slice(
            4,
            2,
            &[th.cos(), 0., th.sin(), 0., 0., 1., 0., 0.],
        ))
        .unwrap();
        let val = evaluate(&a, &rot).unwrap();
        assert!((val - th).abs() <= 0.1 * th);
    }

    #[test]
    fn unknown_dimension_is_estimated() {
        let inst = generate_instance(6, 2, 60, 1.0, 0.1, 0.0, 11).unwrap();
        let params = RecoveryParams::new(6, 2, 1, 1.0, 0.1).unwrap();
        let out = recover_unknown_dim(&inst.points, &params, 4).unwrap();
        assert_eq!(out.subspace.dim(), 2);
        assert!(evaluate(&inst.t, &out.subspace).unwrap() <= 1e-8);
    }

    #[test]
    fn calibrated_tau_is_below_outlier_residuals() {
        let pilot = generate_instance(6, 2, 120, 0.3, 0.1, 0.0, 12).unwrap();
        let params = RecoveryParams::new(6, 2, 2, 0.3, 0.1).unwrap();
        let tau = calibrate_tau(&pilot, &params, 3).unwrap();
        assert!(tau > 0.0);
    }

    #[test]
    fn recover_is_deterministic() {
        let inst = generate_instance(6, 2, 80, 0.4, 0.1, 0.0, 13).unwrap();
        let params = RecoveryParams::new(6, 2, 2, 0.4, 0.1).unwrap();
        let a = recover(&inst.points, &params, 2).unwrap();
        let b = recover(&inst.points, &params, 2).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.subspace, b.subspace);
    }
}
