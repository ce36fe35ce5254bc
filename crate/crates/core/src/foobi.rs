//! Order-2ℓ FOOBI decomposition.
//!
//! Given `T = Σᵢ aᵢ^{⊗2ℓ} + Err`, the matricization `T ≈ UUᵀ` with
//! `U = A^{⊙ℓ}` (n^ℓ × R) is factored as `Ĥ = UQ` for an unknown orthogonal
//! Q. The bilinear detector Φ vanishes on pairs of equal product tensors, so
//! the symmetric solutions W of `Σ W_ij Φ(Ĥ_i, Ĥ_j) = 0` are exactly
//! `Qᵀ diag(λ) Q`. A random element of that space is eigendecomposed to get
//! Q, then each column of `ĤQᵀ` is reshaped to `n × n^{ℓ−1}` and its top
//! singular pair gives `±aᵢ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ensembles::{perturb, PerturbationModel};
use crate::error::{Error, Result};
use crate::linalg::{
    full_right_svd, min_gap, psd_project, real_eigen, sigma_min_cols, singular_values, sqrt_factor, svd, sym_eigen,
    RANK_TOL,
};
use crate::rng::{gaussian_vector, rng_from_seed, unit_vector};
use crate::tensor::{dense_len, outer_power, DenseTensor};

/// `Ψ(X, Y)` for flat order-ℓ tensors over ℝⁿ, returned flat of length `n^{2ℓ}`:
/// `X_{i'i}·Y_{j'j} − X_{i'j}·Y_{j'i}` where `i'`, `j'` are the first ℓ−1 indices.
pub fn psi(x: &DVector<f64>, y: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
    let len = x.len();
    if y.len() != len {
        return Err(Error::DimensionMismatch {
            context: "psi",
            expected: len,
            found: y.len(),
        });
    }
    if n == 0 || !len.is_multiple_of(n) {
        return Err(Error::InvalidArgument(format!("length {len} is not a multiple of n={n}")));
    }
    let pre = len / n;
    let mut out = DVector::zeros(len * len);
    for ip in 0..pre {
        for i in 0..n {
            let row = (ip * n + i) * len;
            for jp in 0..pre {
                for j in 0..n {
                    out[row + jp * n + j] = x[ip * n + i] * y[jp * n + j] - x[ip * n + j] * y[jp * n + i];
                }
            }
        }
    }
    Ok(out)
}

/// `Φ(X, Y) = Ψ(X, Y) + Ψ(Y, X)`.
pub fn phi(x: &DVector<f64>, y: &DVector<f64>, n: usize) -> Result<DVector<f64>> {
    Ok(psi(x, y, n)? + psi(y, x, n)?)
}

/// Dense-tensor wrapper around [`psi`].
pub fn psi_tensor(x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
    let n = cubic(x)?;
    if x.shape() != y.shape() {
        return Err(Error::InvalidArgument("psi requires equal shapes".into()));
    }
    let flat = psi(&x.flatten(), &y.flatten(), n)?;
    DenseTensor::from_flat(n, 2 * x.order(), &flat)
}

fn cubic(t: &DenseTensor) -> Result<usize> {
    let n = t.shape()[0];
    if t.shape().iter().any(|&d| d != n) {
        return Err(Error::InvalidArgument("tensor must be cubic".into()));
    }
    Ok(n)
}

/// Pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn strict_pairs(r: usize) -> Vec<(usize, usize)> {
    (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).collect()
}

/// Pairs `(i, j)`, `i ≤ j`, in lexicographic order.
pub fn upper_pairs(r: usize) -> Vec<(usize, usize)> {
    (0..r).flat_map(|i| (i..r).map(move |j| (i, j))).collect()
}

/// `U = A^{⊙ℓ}`: column i is `aᵢ^{⊗ℓ}`.
pub fn khatri_rao_power(a: &DMatrix<f64>, ell: usize) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = a.column_iter().map(|c| outer_power(&c.into_owned(), ell)).collect();
    DMatrix::from_columns(&cols)
}

/// Columns `Φ(aᵢ^{⊗ℓ}, aⱼ^{⊗ℓ})` for `i < j`.
pub fn build_m_phi(a: &DMatrix<f64>, ell: usize) -> Result<DMatrix<f64>> {
    let r = a.ncols();
    if r < 2 {
        return Err(Error::InvalidArgument("M_Φ needs at least two columns".into()));
    }
    let u = khatri_rao_power(a, ell);
    let n = a.nrows();
    let cols = strict_pairs(r)
        .into_iter()
        .map(|(i, j)| phi(&u.column(i).into_owned(), &u.column(j).into_owned(), n))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Columns `Φ(Hᵢ, Hᵢ)` on the diagonal pairs and `√2·Φ(Hᵢ, Hⱼ)` for `i < j`.
pub fn build_h_phi(h: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let cols = upper_pairs(h.ncols())
        .into_iter()
        .map(|(i, j)| {
            let v = phi(&h.column(i).into_owned(), &h.column(j).into_owned(), n)?;
            Ok(if i == j { v } else { v * std::f64::consts::SQRT_2 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn tri_size(len: usize) -> Result<usize> {
    let r = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if r * (r + 1) / 2 != len {
        return Err(Error::InvalidArgument(format!("{len} is not a triangular number")));
    }
    Ok(r)
}

/// Isometry from `R(R+1)/2`-vectors to symmetric `R × R` matrices.
pub fn psi_map(z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r = tri_size(z.len())?;
    let mut out = DMatrix::zeros(r, r);
    for (k, (i, j)) in upper_pairs(r).into_iter().enumerate() {
        if i == j {
            out[(i, i)] = z[k];
        } else {
            let v = z[k] / std::f64::consts::SQRT_2;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Inverse of [`psi_map`] (the input is symmetrized first).
pub fn psi_map_inv(s: &DMatrix<f64>) -> DVector<f64> {
    let r = s.nrows();
    let pairs = upper_pairs(r);
    DVector::from_iterator(
        pairs.len(),
        pairs.into_iter().map(|(i, j)| {
            if i == j {
                s[(i, i)]
            } else {
                (s[(i, j)] + s[(j, i)]) / std::f64::consts::SQRT_2
            }
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappas {
    pub kappa_u: f64,
    pub kappa_m: f64,
    /// Which matrix was rank deficient, and at which singular-value index (1-based).
    pub deficient: Option<(&'static str, usize)>,
}

fn kappa(m: &DMatrix<f64>) -> (f64, Option<usize>) {
    let s = singular_values(m);
    let k = m.ncols();
    if m.nrows() < k {
        return (f64::INFINITY, Some(m.nrows() + 1));
    }
    let top = s[0];
    if let Some(idx) = s.iter().position(|&x| x <= RANK_TOL * top) {
        return (f64::INFINITY, Some(idx + 1));
    }
    (top / s[k - 1], None)
}

/// Condition numbers of `U = A^{⊙ℓ}` and of `M_Φ`.
pub fn condition_kappas(a: &DMatrix<f64>, ell: usize) -> Result<Kappas> {
    let (ku, du) = kappa(&khatri_rao_power(a, ell));
    let (km, dm) = kappa(&build_m_phi(a, ell)?);
    Ok(Kappas {
        kappa_u: ku,
        kappa_m: km,
        deficient: du.map(|i| ("U", i)).or(dm.map(|i| ("M_phi", i))),
    })
}

/// `σ_min(M_Φ)` for R copies of `e₁ ∈ ℝⁿ` after a ρ-perturbation, the
/// worst-case base for the smoothed bound.
pub fn smoothed_m_phi_sigma_min(n: usize, r: usize, ell: usize, rho: f64, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let base: Vec<DVector<f64>> = (0..r).map(|_| DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 })).collect();
    let a = perturb(&base, &PerturbationModel::new(rho, n, seed));
    Ok(sigma_min_cols(&build_m_phi(&DMatrix::from_columns(&a), ell)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoobiParams {
    pub retries: usize,
    /// Required eigengap in units of `1/(20R²)`.
    pub gap_floor: f64,
}

impl Default for FoobiParams {
    fn default() -> Self {
        Self {
            retries: 20,
            gap_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoobiInstance {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    pub a: DMatrix<f64>,
    pub err_norm: f64,
    pub t: DenseTensor,
}

impl FoobiInstance {
    /// Random unit factors and a Gaussian error tensor of Frobenius norm `err_norm`.
    pub fn random(n: usize, ell: usize, r: usize, err_norm: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let cols: Vec<DVector<f64>> = (0..r).map(|_| unit_vector(&mut rng, n)).collect();
        Self::planted(DMatrix::from_columns(&cols), ell, err_norm, rng.random())
    }

    /// `Σ aᵢ^{⊗2ℓ}` plus error of norm `err_norm` drawn from `seed`.
    pub fn planted(a: DMatrix<f64>, ell: usize, err_norm: f64, seed: u64) -> Result<Self> {
        let n = a.nrows();
        let len = dense_len(n, 2 * ell)?;
        let mut flat = DVector::zeros(len);
        for c in a.column_iter() {
            flat += outer_power(&c.into_owned(), 2 * ell);
        }
        if err_norm > 0.0 {
            let g = gaussian_vector(&mut rng_from_seed(seed), len, 1.0);
            flat += &g * (err_norm / g.norm());
        }
        Ok(Self {
            n,
            ell,
            r: a.ncols(),
            a,
            err_norm,
            t: DenseTensor::from_flat(n, 2 * ell, &flat)?,
        })
    }
}

/// Row-major matricization of an order-2ℓ tensor as `n^ℓ × n^ℓ`.
pub fn matricize(t: &DenseTensor) -> Result<DMatrix<f64>> {
    let n = cubic(t)?;
    if !t.order().is_multiple_of(2) {
        return Err(Error::InvalidArgument("tensor order must be even".into()));
    }
    let side = dense_len(n, t.order() / 2)?;
    Ok(DMatrix::from_row_slice(side, side, t.data()))
}

#[derive(Debug, Clone)]
pub struct FoobiOutput {
    /// n × R, recovered factors (up to order and sign).
    pub factors: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    /// Singular values of Ĥ_Φ, descending.
    pub h_phi_singular: DVector<f64>,
    pub gap: f64,
    pub attempts: usize,
}

/// Steps 1–3: symmetrize the matricization, project to the PSD cone and
/// factor at rank R.
pub fn square_root_step(t: &DenseTensor, r: usize) -> Result<DMatrix<f64>> {
    let m = matricize(t)?;
    let sym = (&m + m.transpose()) * 0.5;
    sqrt_factor(&psd_project(&sym)?, r)
}

fn extract_factor(col: &DVector<f64>, n: usize, ell: usize) -> DVector<f64> {
    let rest = col.len() / n;
    let reshaped = DMatrix::from_row_slice(n, rest, col.as_slice());
    let d = svd(&reshaped);
    let mut u = d.u.column(0).into_owned();
    if u[u.iamax()] < 0.0 {
        u.neg_mut();
    }
    u * d.s[0].powf(1.0 / ell as f64)
}

/// Recovers R factors of an order-2ℓ tensor.
pub fn decompose(t: &DenseTensor, r: usize, params: &FoobiParams, seed: u64) -> Result<FoobiOutput> {
    let n = cubic(t)?;
    let ell = t.order() / 2;
    if ell < 2 || !t.order().is_multiple_of(2) {
        return Err(Error::InvalidArgument("decompose needs an even order 2ℓ with ℓ ≥ 2".into()));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be positive".into()));
    }
    if params.retries == 0 {
        return Err(Error::InvalidArgument("retries must be at least 1".into()));
    }
    let h = square_root_step(t, r)?;
    let h_phi = build_h_phi(&h, n)?;
    let (svals, v) = full_right_svd(&h_phi);
    let cols = v.ncols();
    let null = v.columns(cols - r, r).into_owned();

    let floor = params.gap_floor / (20.0 * (r * r) as f64);
    let mut rng = rng_from_seed(seed);
    for attempt in 1..=params.retries {
        let z = &null * gaussian_vector(&mut rng, r, 1.0);
        let zm = psi_map(&z)?;
        let (vals, g) = sym_eigen(&zm)?;
        let gap = min_gap(vals.as_slice());
        if r > 1 && gap < floor {
            continue;
        }
        let u_hat = &h * g;
        let mut factors = DMatrix::zeros(n, r);
        for i in 0..r {
            factors.set_column(i, &extract_factor(&u_hat.column(i).into_owned(), n, ell));
        }
        return Ok(FoobiOutput {
            factors,
            h_hat: h,
            h_phi_singular: svals,
            gap,
            attempts: attempt,
        });
    }
    Err(Error::DegenerateSpectrum {
        attempts: params.retries,
        floor,
    })
}

/// Unit directions of the R product vectors `aᵢ^{⊗ℓ}` spanning the column
/// space of `basis` (n^ℓ × R, any basis). Uses two random elements of the
/// solution space, since a non-orthogonal basis makes them only congruent to
/// diagonal.
pub fn rank_one_in_subspace(basis: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let r = basis.ncols();
    let h_phi = build_h_phi(basis, n)?;
    let (_, v) = full_right_svd(&h_phi);
    let null = v.columns(v.ncols() - r, r).into_owned();
    let mut rng = rng_from_seed(seed);
    let z1 = psi_map(&(&null * gaussian_vector(&mut rng, r, 1.0)))?;
    let z2 = psi_map(&(&null * gaussian_vector(&mut rng, r, 1.0)))?;
    let inv = z2
        .try_inverse()
        .ok_or(Error::RankDeficient { index: r, value: 0.0 })?;
    let (_, x) = real_eigen(&(z1 * inv), 1e-6)?;
    let u_hat = basis * x;
    let mut out = DMatrix::zeros(n, r);
    for i in 0..r {
        let f = extract_factor(&u_hat.column(i).into_owned(), n, 1);
        out.set_column(i, &(&f / f.norm()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub error: f64,
    /// `perm[i]` is the column of B matched to column i of A.
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

fn assign(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let r = cost.len();
    let full = 1usize << r;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        let i = mask.count_ones() as usize;
        if i >= r || !best[mask].is_finite() {
            continue;
        }
        for (j, c) in cost[i].iter().enumerate() {
            if mask >> j & 1 == 0 {
                let next = mask | 1 << j;
                let val = best[mask] + c;
                if val < best[next] {
                    best[next] = val;
                    choice[next] = j;
                }
            }
        }
    }
    let mut perm = vec![0; r];
    let mut mask = full - 1;
    for i in (0..r).rev() {
        let j = choice[mask];
        perm[i] = j;
        mask &= !(1 << j);
    }
    (best[full - 1], perm)
}

fn check_match_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: "match_components",
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    if a.ncols() > 20 {
        return Err(Error::InvalidArgument("exact assignment supports at most 20 columns".into()));
    }
    Ok(())
}

/// `min_{π,s} Σᵢ ‖Aᵢ − sᵢ B_{π(i)}‖` by exact assignment.
pub fn match_components(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Matching> {
    check_match_shapes(a, b)?;
    let r = a.ncols();
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|i| {
            (0..r)
                .map(|j| (a.column(i) - b.column(j)).norm().min((a.column(i) + b.column(j)).norm()))
                .collect()
        })
        .collect();
    let (error, perm) = assign(&cost);
    let signs = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if (a.column(i) - b.column(j)).norm() <= (a.column(i) + b.column(j)).norm() {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(Matching { error, perm, signs })
}

/// `min_π Σᵢ ‖Aᵢ − B_{π(i)}‖` without sign flips.
pub fn match_columns_unsigned(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Matching> {
    check_match_shapes(a, b)?;
    let r = a.ncols();
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|i| (0..r).map(|j| (a.column(i) - b.column(j)).norm()).collect())
        .collect();
    let (error, perm) = assign(&cost);
    Ok(Matching {
        error,
        perm,
        signs: vec![1.0; r],
    })
}
