//! Learning hidden Markov models with continuous, smoothed observations.
//!
//! Conventions: `P` is row-stochastic, `P[i][j] = Pr(Z_{t+1} = j | Z_t = i)`,
//! and observations are `X_t = Õ_{Z_t} + noise`. A window of `2ℓ+1`
//! observations centred at `X_{ℓ+1}` is viewed as three blocks:
//!
//! * `A`: `E[X_ℓ ⊗ … ⊗ X_1 | Z_{ℓ+1}]` (past, nearest first),
//! * `B = Õ`,
//! * `C`: `E[X_{ℓ+2} ⊗ … ⊗ X_{2ℓ+1} | Z_{ℓ+1}]` (future, nearest first).
//!
//! With these orientations `C⁽¹⁾ = ÕPᵀ` and `C⁽ᵗ⁺¹⁾ = (Õ ⊙ C⁽ᵗ⁾)Pᵀ`; `A` uses
//! the reverse chain `P′ = diag(w)⁻¹Pᵀdiag(w)` in the same recursion, and
//! `D = C⁽ℓ⁺¹⁾ = (Õ ⊙ C)Pᵀ`.
//!
//! Transition recovery. Write `Â = A·diag(1/α)` for the unit-column
//! estimate and `s = α ∘ w`. The cross moments `M₁₃ = A diag(w) Cᵀ` and
//! `M₁₃′ = A diag(w) Dᵀ` give `Z₁ = pinv(Â)M₁₃ = diag(s)Cᵀ` and
//! `Z₂ = pinv(Â)M₁₃′ = diag(s) P (Õ ⊙ C)ᵀ`. With `K = Õ ⊙ Z₁ᵀ = (Õ ⊙ C)diag(s)`,
//!
//! ```text
//! Q = pinv(K) Z₂ᵀ = diag(s)⁻¹ Pᵀ diag(s),   so   Qᵀ = diag(s) P diag(s)⁻¹.
//! ```
//!
//! `s` is unknown, but `P1 = 1` gives `Qᵀs = s`: `s` spans the eigenvalue-1
//! eigenspace of `Qᵀ` when the chain is irreducible, and
//! `P = diag(v)⁻¹ Qᵀ diag(v)` for any nonzero multiple `v` of `s`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::foobi::match_columns_unsigned;
use crate::linalg::{min_gap, null_vector, pinv, real_eigen, sigma_min_cols, svd};
use crate::rng::{gaussian_vector, rng_from_seed, trial_seed, unit_vector};
use crate::tensor::{khatri_rao, tensor_product, DenseTensor, MonomialSpec};

/// Tolerance on row sums and stationarity.
const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    pub r: usize,
    pub n: usize,
    pub p: DMatrix<f64>,
    pub o_tilde: DMatrix<f64>,
    pub w: DVector<f64>,
    pub sigma_obs: f64,
}

impl HmmModel {
    /// Builds a model with `w = stationary(P)`.
    pub fn new(p: DMatrix<f64>, o_tilde: DMatrix<f64>, sigma_obs: f64) -> Result<Self> {
        let w = stationary(&p)?;
        Self::with_distribution(p, o_tilde, w, sigma_obs)
    }

    /// Builds a model with a caller-supplied stationary distribution; useful
    /// for reducible chains where it is not unique.
    pub fn with_distribution(p: DMatrix<f64>, o_tilde: DMatrix<f64>, w: DVector<f64>, sigma_obs: f64) -> Result<Self> {
        let r = p.nrows();
        if !p.is_square() || r == 0 {
            return Err(Error::InvalidArgument("P must be square and nonempty".into()));
        }
        if o_tilde.ncols() != r {
            return Err(Error::DimensionMismatch {
                context: "observation matrix columns",
                expected: r,
                found: o_tilde.ncols(),
            });
        }
        if w.len() != r {
            return Err(Error::DimensionMismatch {
                context: "stationary distribution",
                expected: r,
                found: w.len(),
            });
        }
        check_stochastic(&p)?;
        if w.iter().any(|&x| x <= 0.0) || (w.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument("w must be a positive probability vector".into()));
        }
        if (p.transpose() * &w - &w).amax() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument("w is not stationary for P".into()));
        }
        if sigma_obs < 0.0 {
            return Err(Error::InvalidArgument("sigma_obs must be nonnegative".into()));
        }
        Ok(Self {
            r,
            n: o_tilde.nrows(),
            p,
            o_tilde,
            w,
            sigma_obs,
        })
    }

    /// Largest number of nonzeros in any row or column of P.
    pub fn sparsity(&self) -> usize {
        let rows = self.p.row_iter().map(|r| r.iter().filter(|&&x| x != 0.0).count());
        let cols = self.p.column_iter().map(|c| c.iter().filter(|&&x| x != 0.0).count());
        rows.chain(cols).max().unwrap_or(0)
    }

    /// `P′ = diag(w)⁻¹ Pᵀ diag(w)`.
    pub fn reverse_transition(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r, self.r, |i, j| self.w[j] * self.p[(j, i)] / self.w[i])
    }
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidArgument("P has negative or non-finite entries".into()));
    }
    for (i, row) in p.row_iter().enumerate() {
        if (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidArgument(format!("row {i} of P sums to {}", row.sum())));
        }
    }
    Ok(())
}

fn irreducible(p: &DMatrix<f64>) -> bool {
    let r = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; r];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..r {
                let edge = if forward { p[(i, j)] } else { p[(j, i)] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Stationary distribution of an irreducible row-stochastic P.
pub fn stationary(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::InvalidArgument("P must be square and nonempty".into()));
    }
    check_stochastic(p)?;
    if !irreducible(p) {
        return Err(Error::ReducibleChain);
    }
    let r = p.nrows();
    let (v, _, _) = null_vector(&(p.transpose() - DMatrix::identity(r, r)));
    let w = &v / v.sum();
    Ok(w.map(|x| x.max(0.0)) / w.map(|x| x.max(0.0)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    /// Rejection floor on σ_min(P).
    pub gamma1: f64,
    pub budget: usize,
    pub sigma_obs: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            gamma1: 0.05,
            budget: 1000,
            sigma_obs: 0.1,
        }
    }
}

pub fn gen_model(r: usize, n: usize, d: usize, rho: f64, seed: u64) -> Result<HmmModel> {
    gen_model_with(r, n, d, rho, seed, &GenParams::default())
}

/// Random d-sparse chain and ρ-perturbed unit observation columns.
///
/// P is a relabelled sum of d cyclic shifts, one of them by a single step so
/// the chain is irreducible, with random positive weights per row.
pub fn gen_model_with(r: usize, n: usize, d: usize, rho: f64, seed: u64, params: &GenParams) -> Result<HmmModel> {
    if r == 0 || n == 0 {
        return Err(Error::InvalidArgument("r and n must be positive".into()));
    }
    if d == 0 || d > r {
        return Err(Error::InvalidArgument(format!("need 1 ≤ d ≤ r, got d={d}, r={r}")));
    }
    if r > 1 && d == 1 && params.gamma1 > 1.0 {
        return Err(Error::InvalidArgument("gamma1 above 1 is unattainable".into()));
    }
    let mut rng = rng_from_seed(seed);
    let base: Vec<DVector<f64>> = (0..r).map(|_| unit_vector(&mut rng, n)).collect();
    let mut o = DMatrix::from_columns(&base);
    if rho > 0.0 {
        let normal = Normal::new(0.0, rho / (n as f64).sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        o.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
    }
    for _ in 0..params.budget {
        let p = random_sparse_chain(&mut rng, r, d);
        if r == 1 || sigma_min_cols(&p) >= params.gamma1 {
            return HmmModel::new(p, o, params.sigma_obs);
        }
    }
    Err(Error::BudgetExhausted(params.budget))
}

fn random_sparse_chain<R: Rng + ?Sized>(rng: &mut R, r: usize, d: usize) -> DMatrix<f64> {
    let mut shifts: Vec<usize> = (0..r).filter(|&s| s != 1 % r).collect();
    shifts.shuffle(rng);
    shifts.truncate(d - 1);
    shifts.push(1 % r);
    let mut label: Vec<usize> = (0..r).collect();
    label.shuffle(rng);
    let mut p = DMatrix::zeros(r, r);
    for i in 0..r {
        let weights: Vec<f64> = shifts.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (&s, wt) in shifts.iter().zip(&weights) {
            p[(label[i], label[(i + s) % r])] += wt / total;
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: Option<DMatrix<f64>>,
}

fn chain_view(o: &DMatrix<f64>, trans: &DMatrix<f64>, ell: usize) -> DMatrix<f64> {
    let tt = trans.transpose();
    let mut v = o * &tt;
    for _ in 1..ell {
        v = khatri_rao(o, &v).expect("matching column counts") * &tt;
    }
    v
}

pub fn build_views(model: &HmmModel, ell: usize, with_d: bool) -> Result<ViewMatrices> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ℓ must be at least 1".into()));
    }
    let o = &model.o_tilde;
    let c = chain_view(o, &model.p, ell);
    let d = if with_d {
        Some(khatri_rao(o, &c)? * model.p.transpose())
    } else {
        None
    };
    Ok(ViewMatrices {
        a: chain_view(o, &model.reverse_transition(), ell),
        b: o.clone(),
        c,
        d,
    })
}

/// `Σᵢ wᵢ Aᵢ ⊗ Bᵢ ⊗ Cᵢ`, shape `(n^ℓ, n, n^ℓ)`.
pub fn exact_moment3(model: &HmmModel, ell: usize) -> Result<DenseTensor> {
    let v = build_views(model, ell, false)?;
    Ok(three_way(&v.a, &v.b, &v.c, &model.w))
}

fn three_way(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, w: &DVector<f64>) -> DenseTensor {
    let (p, q, s) = (a.nrows(), b.nrows(), c.nrows());
    let mut data = vec![0.0; p * q * s];
    for i in 0..w.len() {
        for x in 0..p {
            let ax = w[i] * a[(x, i)];
            for y in 0..q {
                let axy = ax * b[(y, i)];
                let row = (x * q + y) * s;
                for z in 0..s {
                    data[row + z] += axy * c[(z, i)];
                }
            }
        }
    }
    DenseTensor::new(vec![p, q, s], data).expect("consistent shape")
}

/// Moments consumed by recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub ell: usize,
    /// `E[A-view ⊗ X_{ℓ+1} ⊗ C-view]`.
    pub t3: DenseTensor,
    /// `E[A-view ⊗ C-view]`, `n^ℓ × n^ℓ`.
    pub m13: DMatrix<f64>,
    /// `E[A-view ⊗ (X_{ℓ+2} ⊗ … ⊗ X_{2ℓ+2})]`, `n^ℓ × n^{ℓ+1}`; needs a
    /// `2ℓ+2` window.
    pub m13_next: Option<DMatrix<f64>>,
    /// `E[X_t]`.
    pub mean: DVector<f64>,
}

pub fn exact_moments(model: &HmmModel, ell: usize) -> Result<Moments> {
    let v = build_views(model, ell, true)?;
    let wd = DMatrix::from_diagonal(&model.w);
    Ok(Moments {
        ell,
        t3: three_way(&v.a, &v.b, &v.c, &model.w),
        m13: &v.a * &wd * v.c.transpose(),
        m13_next: v.d.map(|d| &v.a * &wd * d.transpose()),
        mean: &model.o_tilde * &model.w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub n: usize,
    pub window: usize,
    /// One `n × window` matrix per sequence; column t is `X_{t+1}`.
    pub observations: Vec<DMatrix<f64>>,
    pub states: Vec<Vec<usize>>,
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// N independent stationary windows; sequence i uses its own derived seed.
pub fn sample_sequences(model: &HmmModel, window: usize, count: usize, seed: u64) -> Samples {
    let sd = model.sigma_obs / (model.n as f64).sqrt();
    let mut observations = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rng = rng_from_seed(trial_seed(seed, idx as u64));
        let mut z = draw_index(&mut rng, model.w.iter().copied());
        let mut path = Vec::with_capacity(window);
        let mut obs = DMatrix::zeros(model.n, window);
        for t in 0..window {
            if t > 0 {
                z = draw_index(&mut rng, model.p.row(z).iter().copied());
            }
            path.push(z);
            let x = model.o_tilde.column(z) + gaussian_vector(&mut rng, model.n, sd);
            obs.set_column(t, &x);
        }
        observations.push(obs);
        states.push(path);
    }
    Samples {
        n: model.n,
        window,
        observations,
        states,
    }
}

fn view_of(obs: &DMatrix<f64>, times: impl Iterator<Item = usize>) -> DVector<f64> {
    let cols: Vec<DVector<f64>> = times.map(|t| obs.column(t).into_owned()).collect();
    let refs: Vec<&DVector<f64>> = cols.iter().collect();
    tensor_product(&refs)
}

/// Sample averages of the quantities in [`Moments`]. `m13_next` is present
/// when the window has at least `2ℓ+2` observations.
pub fn empirical_moments(samples: &Samples, ell: usize) -> Result<Moments> {
    if samples.observations.is_empty() {
        return Err(Error::EmptySamples);
    }
    if ell == 0 || samples.window < 2 * ell + 1 {
        return Err(Error::InvalidArgument(format!(
            "window {} too short for ℓ={ell}",
            samples.window
        )));
    }
    let n = samples.n;
    let side = n.pow(ell as u32);
    let with_next = samples.window >= 2 * ell + 2;
    let mut t3 = DenseTensor::zeros(vec![side, n, side])?;
    let mut m13 = DMatrix::zeros(side, side);
    let mut m13_next = DMatrix::zeros(side, side * n);
    let mut mean = DVector::zeros(n);
    for obs in &samples.observations {
        let a = view_of(obs, (0..ell).rev());
        let b = obs.column(ell).into_owned();
        let c = view_of(obs, ell + 1..2 * ell + 1);
        let ac = &a * c.transpose();
        m13 += &ac;
        let flat = t3.data_mut();
        for x in 0..side {
            for y in 0..n {
                let row = (x * n + y) * side;
                for z in 0..side {
                    flat[row + z] += ac[(x, z)] * b[y];
                }
            }
        }
        if with_next {
            m13_next += &a * view_of(obs, ell + 1..2 * ell + 2).transpose();
        }
        mean += obs.column_mean();
    }
    let scale = 1.0 / samples.observations.len() as f64;
    t3.data_mut().iter_mut().for_each(|x| *x *= scale);
    Ok(Moments {
        ell,
        t3,
        m13: m13 * scale,
        m13_next: with_next.then(|| m13_next * scale),
        mean: mean * scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JennrichParams {
    pub retries: usize,
    /// Minimum separation of the contracted eigenvalues, in units of `1/(20r²)`.
    pub gap_floor: f64,
}

impl Default for JennrichParams {
    fn default() -> Self {
        Self {
            retries: 20,
            gap_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JennrichOutput {
    pub a_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    /// Diagonal of `pinv(Â) M₁₃ pinv(Ĉ)ᵀ`.
    pub d_diag: DVector<f64>,
    pub gap: f64,
    pub attempts: usize,
}

fn unit_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
        if col[col.iamax()] < 0.0 {
            col.neg_mut();
        }
    }
    out
}

/// Middle-mode contraction `Σ_y θ_y T[·, y, ·]`.
fn contract_middle(t: &DenseTensor, theta: &DVector<f64>) -> DMatrix<f64> {
    let s = t.shape();
    let (p, q, c) = (s[0], s[1], s[2]);
    DMatrix::from_fn(p, c, |x, z| (0..q).map(|y| theta[y] * t.data()[(x * q + y) * c + z]).sum())
}

/// Simultaneous diagonalization of `T = Σ λᵢ Aᵢ ⊗ Bᵢ ⊗ Cᵢ` against the
/// marginal `M₁₃ = Σ μᵢ Aᵢ Cᵢᵀ`.
///
/// Both are compressed to the top-r singular subspaces of M₁₃; the contraction
/// `S(θ)` then satisfies `S M̃⁻¹ = Ã diag(θᵀBᵢ·λᵢ/μᵢ) Ã⁻¹`, and the transposed
/// problem gives C̃ with the same eigenvalues, so sorting aligns the columns.
pub fn jennrich(t: &DenseTensor, m13: &DMatrix<f64>, r: usize, params: &JennrichParams, seed: u64) -> Result<JennrichOutput> {
    let shape = t.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument("jennrich expects a third-order tensor".into()));
    }
    let (p, q, c) = (shape[0], shape[1], shape[2]);
    if m13.shape() != (p, c) {
        return Err(Error::DimensionMismatch {
            context: "jennrich marginal rows",
            expected: p,
            found: m13.nrows(),
        });
    }
    if r == 0 || r > p.min(c) {
        return Err(Error::InvalidArgument(format!("rank {r} must lie in 1..={}", p.min(c))));
    }
    let dec = svd(m13);
    if dec.s[r - 1] <= crate::linalg::RANK_TOL * dec.s[0] {
        return Err(Error::RankDeficient {
            index: r,
            value: dec.s[r - 1],
        });
    }
    let ur = dec.u.columns(0, r).into_owned();
    let vr = dec.v.columns(0, r).into_owned();
    let inv_sigma = DMatrix::from_diagonal(&dec.s.rows(0, r).map(|x| 1.0 / x));

    let floor = params.gap_floor / (20.0 * (r * r) as f64);
    let mut rng = rng_from_seed(seed);
    for attempt in 1..=params.retries.max(1) {
        let theta = unit_vector(&mut rng, q);
        let s = ur.transpose() * contract_middle(t, &theta) * &vr;
        let x = &s * &inv_sigma;
        let y = s.transpose() * &inv_sigma;
        let (Ok((vals, ea)), Ok((_, ec))) = (real_eigen(&x, 1e-8), real_eigen(&y, 1e-8)) else {
            continue;
        };
        let spread = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let gap = min_gap(&vals) / spread;
        if r > 1 && gap < floor {
            continue;
        }
        let a_hat = unit_columns(&(&ur * ea));
        let c_hat = unit_columns(&(&vr * ec));
        let d_diag = (pinv(&a_hat) * m13 * pinv(&c_hat).transpose()).diagonal();
        return Ok(JennrichOutput {
            a_hat,
            c_hat,
            d_diag,
            gap,
            attempts: attempt,
        });
    }
    Err(Error::DegenerateSpectrum {
        attempts: params.retries.max(1),
        floor,
    })
}

/// Middle-mode unfolding `q × (p·c)`, column index `x·c + z`.
fn unfold_middle(t: &DenseTensor) -> DMatrix<f64> {
    let s = t.shape();
    let (p, q, c) = (s[0], s[1], s[2]);
    DMatrix::from_fn(q, p * c, |y, xz| t.data()[((xz / c) * q + y) * c + xz % c])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEstimate {
    pub o_hat: DMatrix<f64>,
    pub factors: JennrichOutput,
}

/// `Õ̂ᵢ = gᵢ / dᵢ` with `G = T₍₂₎ pinv((Â ⊙ Ĉ)ᵀ)`.
pub fn recover_observation(moments: &Moments, r: usize, params: &JennrichParams, seed: u64) -> Result<ObservationEstimate> {
    let factors = jennrich(&moments.t3, &moments.m13, r, params, seed)?;
    let kr = khatri_rao(&factors.a_hat, &factors.c_hat)?;
    let g = unfold_middle(&moments.t3) * pinv(&kr.transpose());
    let scale = factors.d_diag.amax().max(f64::MIN_POSITIVE);
    let mut o_hat = g.clone();
    for i in 0..r {
        let d = factors.d_diag[i];
        if d.abs() <= 1e-12 * scale {
            return Err(Error::UnresolvableScale { index: i, value: d });
        }
        o_hat.column_mut(i).scale_mut(1.0 / d);
    }
    Ok(ObservationEstimate { o_hat, factors })
}

/// Transition recovery from the shared-past cross moments (see module docs).
/// The estimate is projected back to a stochastic matrix by clipping
/// negative entries and renormalizing rows.
pub fn recover_transition(moments: &Moments, o_hat: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = o_hat.ncols();
    let m13_next = moments
        .m13_next
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("transition recovery needs the 2ℓ+2 cross moment".into()))?;
    let a_pinv = pinv(a_hat);
    let z1 = &a_pinv * &moments.m13;
    let z2 = &a_pinv * m13_next;
    let k = khatri_rao(o_hat, &z1.transpose())?;
    let qt = (pinv(&k) * z2.transpose()).transpose();
    let shifted = &qt - DMatrix::identity(r, r);
    let (v, _, second) = null_vector(&shifted);
    let tol = 1e-8 * qt.norm().max(1.0);
    if r > 1 && second <= tol {
        // A multi-dimensional eigenvalue-1 space only leaves P determined
        // when Qᵀ is already diagonal.
        let off = &qt - DMatrix::from_diagonal(&qt.diagonal());
        if off.amax() > tol {
            return Err(Error::ScaleAmbiguity);
        }
        return Ok(normalize_rows(DMatrix::from_diagonal(&qt.diagonal())));
    }
    let vmax = v.amax();
    if let Some(i) = v.iter().position(|x| x.abs() <= 1e-12 * vmax) {
        return Err(Error::UnresolvableScale { index: i, value: v[i] });
    }
    let p = normalize_rows(DMatrix::from_fn(r, r, |i, j| qt[(i, j)] * v[j] / v[i]));
    if let Some(i) = p.row_iter().position(|row| !row.sum().is_finite()) {
        return Err(Error::UnresolvableScale { index: i, value: v[i] });
    }
    Ok(p)
}

/// Clips negative entries to zero and rescales rows to sum 1.
fn normalize_rows(mut p: DMatrix<f64>) -> DMatrix<f64> {
    p.iter_mut().for_each(|x| *x = x.max(0.0));
    for mut row in p.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmEstimate {
    pub o_hat: DMatrix<f64>,
    pub p_hat: DMatrix<f64>,
    pub w_hat: DVector<f64>,
}

/// Full pipeline: observations, then transitions, then `ŵ`.
pub fn recover(moments: &Moments, r: usize, params: &JennrichParams, seed: u64) -> Result<HmmEstimate> {
    let obs = recover_observation(moments, r, params, seed)?;
    let p_hat = recover_transition(moments, &obs.o_hat, &obs.factors.a_hat)?;
    let w_hat = match stationary(&p_hat) {
        Ok(w) => w,
        Err(_) if obs.o_hat.nrows() >= r => {
            let w = pinv(&obs.o_hat) * &moments.mean;
            &w / w.sum()
        }
        Err(e) => return Err(e),
    };
    Ok(HmmEstimate {
        o_hat: obs.o_hat,
        p_hat,
        w_hat,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmErrors {
    pub o_error: f64,
    pub p_error: f64,
    pub w_error: f64,
    /// `perm[i]` is the recovered state matched to planted state i.
    pub perm: Vec<usize>,
}

/// Frobenius errors after aligning recovered states to planted ones by
/// unsigned column matching on Õ.
pub fn evaluate(model: &HmmModel, est: &HmmEstimate) -> Result<HmmErrors> {
    let m = match_columns_unsigned(&model.o_tilde, &est.o_hat)?;
    let perm = m.perm;
    let r = model.r;
    let o = DMatrix::from_fn(model.n, r, |i, j| est.o_hat[(i, perm[j])]);
    let p = DMatrix::from_fn(r, r, |i, j| est.p_hat[(perm[i], perm[j])]);
    let w = DVector::from_fn(r, |i, _| est.w_hat[perm[i]]);
    Ok(HmmErrors {
        o_error: (o - &model.o_tilde).norm(),
        p_error: (p - &model.p).norm(),
        w_error: (w - &model.w).norm(),
        perm,
    })
}

/// Tuples `(j₁, …, j_ℓ)` that are walks of positive probability in P, in
/// lexicographic order.
pub fn path_spec(p: &DMatrix<f64>, ell: usize) -> Result<MonomialSpec> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ℓ must be at least 1".into()));
    }
    let r = p.nrows();
    let mut paths: Vec<Vec<usize>> = (0..r).map(|i| vec![i]).collect();
    for _ in 1..ell {
        paths = paths
            .into_iter()
            .flat_map(|path| {
                let last = *path.last().expect("nonempty");
                (0..r).filter(move |&j| p[(last, j)] > 0.0).map(move |j| {
                    let mut next = path.clone();
                    next.push(j);
                    next
                })
            })
            .collect();
    }
    MonomialSpec::new(r, ell, paths)
}

/// Sums the `n₁` consecutive row blocks of an `(n₁·n₂) × k` matrix.
pub fn collapse_rows(a: &DMatrix<f64>, n1: usize) -> Result<DMatrix<f64>> {
    if n1 == 0 || !a.nrows().is_multiple_of(n1) {
        return Err(Error::InvalidArgument(format!("{} rows do not split into {n1} blocks", a.nrows())));
    }
    let n2 = a.nrows() / n1;
    let mut out = DMatrix::zeros(n2, a.ncols());
    for blk in 0..n1 {
        out += a.rows(blk * n2, n2);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sigma_k, singular_values};
    use crate::tensor::delta_profile;
    use approx::assert_relative_eq;
    use statrs::function::factorial::binomial;

    fn model(r: usize, n: usize, d: usize, seed: u64) -> HmmModel {
        gen_model(r, n, d, 0.1, seed).unwrap()
    }

    fn all_paths(r: usize, len: usize) -> Vec<Vec<usize>> {
        (0..r.pow(len as u32))
            .map(|mut code| {
                let mut p = vec![0; len];
                for slot in p.iter_mut().rev() {
                    *slot = code % r;
                    code /= r;
                }
                p
            })
            .collect()
    }

    #[test]
    fn gen_model_invariants() {
        for seed in 0..20 {
            let m = model(6, 4, 2, seed);
            assert!(m.sparsity() <= 2);
            for row in m.p.row_iter() {
                assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
            assert!(m.p.iter().all(|&x| x >= 0.0));
            assert!((m.p.transpose() * &m.w - &m.w).amax() <= 1e-10);
            assert!(m.w.min() > 0.0);
            assert!(sigma_min_cols(&m.p) >= GenParams::default().gamma1);
        }
    }

    #[test]
    fn gen_model_examples() {
        let dense = model(4, 3, 4, 1);
        assert!(dense.p.iter().all(|&x| x > 0.0));

        let a = gen_model(5, 3, 2, 0.0, 7).unwrap();
        for col in a.o_tilde.column_iter() {
            assert_relative_eq!(col.norm(), 1.0, epsilon = 1e-14);
        }
        assert!(gen_model(3, 3, 4, 0.1, 0).is_err());
        let strict = GenParams {
            gamma1: 0.999,
            budget: 5,
            sigma_obs: 0.1,
        };
        assert_eq!(gen_model_with(6, 3, 3, 0.1, 0, &strict), Err(Error::BudgetExhausted(5)));
    }

    #[test]
    fn stationary_examples() {
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let w = stationary(&swap).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-14);

        let ds = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.5, 0.2, 0.3, 0.3, 0.5, 0.2]);
        assert!((stationary(&ds).unwrap() - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-14);

        assert_eq!(stationary(&DMatrix::identity(2, 2)), Err(Error::ReducibleChain));
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let mut rng = rng_from_seed(3);
        let mut p = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0.0..1.0));
        for mut row in p.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let mut x = DVector::from_element(6, 1.0 / 6.0);
        for _ in 0..10_000 {
            x = p.transpose() * x;
        }
        assert!((stationary(&p).unwrap() - x).amax() < 1e-8);
    }

    #[test]
    fn views_base_cases() {
        let m = model(4, 3, 2, 4);
        let v = build_views(&m, 1, true).unwrap();
        assert!((&v.c - &m.o_tilde * m.p.transpose()).amax() < 1e-15);
        assert!((&v.a - &m.o_tilde * m.reverse_transition().transpose()).amax() < 1e-15);
        assert_eq!(v.b, m.o_tilde);

        let fixed = HmmModel::with_distribution(
            DMatrix::identity(3, 3),
            m.o_tilde.columns(0, 3).into_owned(),
            DVector::from_element(3, 1.0 / 3.0),
            0.1,
        )
        .unwrap();
        let v = build_views(&fixed, 2, false).unwrap();
        let kr = crate::foobi::khatri_rao_power(&fixed.o_tilde, 2);
        assert!((&v.a - &kr).amax() < 1e-15);
        assert!((&v.c - &kr).amax() < 1e-15);
    }

    #[test]
    fn views_match_path_sums() {
        let m = model(3, 3, 2, 5);
        let ell = 2;
        let v = build_views(&m, ell, true).unwrap();
        let rev = m.reverse_transition();
        for i in 0..3 {
            let mut c = DVector::zeros(9);
            let mut a = DVector::zeros(9);
            let mut d = DVector::zeros(27);
            for path in all_paths(3, ell) {
                let cols: Vec<DVector<f64>> = path.iter().map(|&j| m.o_tilde.column(j).into_owned()).collect();
                let refs: Vec<&DVector<f64>> = cols.iter().collect();
                let prod = tensor_product(&refs);
                let fwd = m.p[(i, path[0])] * m.p[(path[0], path[1])];
                let back = rev[(i, path[0])] * rev[(path[0], path[1])];
                c += &prod * fwd;
                a += &prod * back;
            }
            for path in all_paths(3, ell + 1) {
                let cols: Vec<DVector<f64>> = path.iter().map(|&j| m.o_tilde.column(j).into_owned()).collect();
                let refs: Vec<&DVector<f64>> = cols.iter().collect();
                let pr = m.p[(i, path[0])] * m.p[(path[0], path[1])] * m.p[(path[1], path[2])];
                d += tensor_product(&refs) * pr;
            }
            assert!((v.c.column(i) - c).amax() < 1e-14);
            assert!((v.a.column(i) - a).amax() < 1e-14);
            assert!((v.d.as_ref().unwrap().column(i) - d).amax() < 1e-14);
        }
    }

    #[test]
    fn moment3_examples() {
        let one = HmmModel::new(DMatrix::identity(1, 1), DMatrix::from_column_slice(2, 1, &[0.6, 0.8]), 0.1).unwrap();
        let t = exact_moment3(&one, 1).unwrap();
        let o = one.o_tilde.column(0).into_owned();
        assert!((DVector::from_column_slice(t.data()) - tensor_product(&[&o, &o, &o])).amax() < 1e-15);

        let m = model(2, 2, 2, 6);
        let t = exact_moment3(&m, 1).unwrap();
        let mut brute = DVector::zeros(8);
        for path in all_paths(2, 3) {
            let pr = m.w[path[0]] * m.p[(path[0], path[1])] * m.p[(path[1], path[2])];
            let cols: Vec<DVector<f64>> = path.iter().map(|&j| m.o_tilde.column(j).into_owned()).collect();
            brute += tensor_product(&[&cols[0], &cols[1], &cols[2]]) * pr;
        }
        assert!((DVector::from_column_slice(t.data()) - brute).amax() < 1e-15);
    }

    #[test]
    fn sampling_examples() {
        let one = HmmModel::new(DMatrix::identity(1, 1), DMatrix::from_column_slice(2, 1, &[0.6, 0.8]), 0.0).unwrap();
        let s = sample_sequences(&one, 3, 5, 1);
        for obs in &s.observations {
            for col in obs.column_iter() {
                assert_eq!(col, one.o_tilde.column(0));
            }
        }

        let m = model(4, 3, 2, 7);
        assert_eq!(sample_sequences(&m, 3, 10, 9), sample_sequences(&m, 3, 10, 9));

        let n = 10_000;
        let s = sample_sequences(&m, 1, n, 11);
        for i in 0..4 {
            let freq = s.states.iter().filter(|p| p[0] == i).count() as f64 / n as f64;
            let se = (m.w[i] * (1.0 - m.w[i]) / n as f64).sqrt();
            assert!((freq - m.w[i]).abs() <= 3.0 * se, "state {i}: {freq} vs {}", m.w[i]);
        }
    }

    #[test]
    fn empirical_single_sample_is_outer_product() {
        let m = model(3, 2, 2, 8);
        let s = sample_sequences(&m, 3, 1, 2);
        let mom = empirical_moments(&s, 1).unwrap();
        let obs = &s.observations[0];
        let x: Vec<DVector<f64>> = (0..3).map(|t| obs.column(t).into_owned()).collect();
        let want = tensor_product(&[&x[0], &x[1], &x[2]]);
        assert!((DVector::from_column_slice(mom.t3.data()) - want).amax() < 1e-15);
        assert!(mom.m13_next.is_none());
        assert_eq!(
            empirical_moments(&Samples { n: 2, window: 3, observations: vec![], states: vec![] }, 1),
            Err(Error::EmptySamples)
        );
    }

    #[test]
    fn empirical_matches_exact_within_standard_errors() {
        let m = gen_model_with(2, 2, 2, 0.1, 9, &GenParams { sigma_obs: 0.1, ..Default::default() }).unwrap();
        let n = 100_000;
        let s = sample_sequences(&m, 3, n, 4);
        let emp = empirical_moments(&s, 1).unwrap();
        let exact = exact_moment3(&m, 1).unwrap();
        let mut sq = vec![0.0; 8];
        for obs in &s.observations {
            let x: Vec<DVector<f64>> = (0..3).map(|t| obs.column(t).into_owned()).collect();
            for (k, v) in tensor_product(&[&x[0], &x[1], &x[2]]).iter().enumerate() {
                sq[k] += v * v;
            }
        }
        for k in 0..8 {
            let mean = emp.t3.data()[k];
            let var = sq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - exact.data()[k]).abs() <= 5.0 * se, "entry {k}");
        }
    }

    #[test]
    fn empirical_deterministic_chain() {
        let perm = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let o = gen_model(3, 3, 3, 0.1, 10).unwrap().o_tilde;
        let m = HmmModel::new(perm, o, 0.0).unwrap();
        let s = sample_sequences(&m, 5, 100_000, 3);
        let emp = empirical_moments(&s, 2).unwrap();
        let exact = exact_moments(&m, 2).unwrap();
        let diff = DVector::from_column_slice(emp.t3.data()) - DVector::from_column_slice(exact.t3.data());
        assert!(diff.amax() <= 1e-2);
        assert!(diff.norm() / DVector::from_column_slice(exact.t3.data()).norm() <= 1e-2);
    }

    #[test]
    fn jennrich_rank_one() {
        let a = DVector::from_column_slice(&[1.0, 2.0, 2.0]);
        let b = DVector::from_column_slice(&[0.0, 1.0]);
        let c = DVector::from_column_slice(&[3.0, 4.0, 0.0]);
        let t = DenseTensor::new(vec![3, 2, 3], tensor_product(&[&a, &b, &c]).as_slice().to_vec()).unwrap();
        let out = jennrich(&t, &(&a * c.transpose()), 1, &JennrichParams::default(), 0).unwrap();
        assert!((out.a_hat.column(0) - &a / 3.0).amax() < 1e-14);
        assert!((out.c_hat.column(0) - &c / 5.0).amax() < 1e-14);
        assert_relative_eq!(out.d_diag[0], 15.0, max_relative = 1e-12);
    }

    #[test]
    fn jennrich_planted_orthonormal() {
        let mut rng = rng_from_seed(12);
        let qa = svd(&crate::rng::gaussian_matrix(&mut rng, 9, 3, 1.0)).u;
        let qc = svd(&crate::rng::gaussian_matrix(&mut rng, 9, 3, 1.0)).u;
        let b = crate::rng::gaussian_matrix(&mut rng, 4, 3, 1.0);
        let w = DVector::from_column_slice(&[0.5, 0.3, 0.2]);
        let t = three_way(&qa, &b, &qc, &w);
        let m13 = &qa * DMatrix::from_diagonal(&w) * qc.transpose();
        let out = jennrich(&t, &m13, 3, &JennrichParams::default(), 1).unwrap();
        let ma = crate::foobi::match_components(&qa, &out.a_hat).unwrap();
        let mc = crate::foobi::match_components(&qc, &out.c_hat).unwrap();
        assert!(ma.error < 1e-8 && mc.error < 1e-8);
        assert_eq!(ma.perm, mc.perm);
        let core = pinv(&out.a_hat) * &m13 * pinv(&out.c_hat).transpose();
        let off = &core - DMatrix::from_diagonal(&core.diagonal());
        assert!(off.amax() <= 1e-6);
    }

    fn exact_recovery(r: usize, n: usize, ell: usize, seed: u64) -> (HmmModel, HmmEstimate, HmmErrors) {
        let m = model(r, n, 2, seed);
        let mom = exact_moments(&m, ell).unwrap();
        let est = recover(&mom, r, &JennrichParams::default(), seed).unwrap();
        let err = evaluate(&m, &est).unwrap();
        (m, est, err)
    }

    #[test]
    fn recover_undercomplete_exact() {
        for seed in 0..5 {
            let (_, _, err) = exact_recovery(4, 5, 1, seed);
            assert!(err.o_error <= 1e-6 && err.p_error <= 1e-6, "{seed}: {err:?}");
        }
    }

    #[test]
    fn recover_overcomplete_exact() {
        for seed in 0..5 {
            let (_, _, err) = exact_recovery(6, 4, 2, seed);
            assert!(err.o_error <= 1e-5 && err.p_error <= 1e-4, "{seed}: {err:?}");
        }
    }

    #[test]
    fn recover_single_state() {
        let one = HmmModel::new(DMatrix::identity(1, 1), DMatrix::from_column_slice(3, 1, &[0.2, -0.4, 0.9]), 0.1).unwrap();
        let est = recover(&exact_moments(&one, 1).unwrap(), 1, &JennrichParams::default(), 0).unwrap();
        assert!((&est.o_hat - &one.o_tilde).amax() < 1e-12);
        assert!((&est.o_hat.column(0) - &exact_moments(&one, 1).unwrap().mean).amax() < 1e-12);
        assert_relative_eq!(est.p_hat[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_chain_is_a_fixed_point() {
        let o = model(3, 4, 2, 13).o_tilde;
        let m = HmmModel::with_distribution(DMatrix::identity(3, 3), o, DVector::from_column_slice(&[0.5, 0.3, 0.2]), 0.1)
            .unwrap();
        let est = recover(&exact_moments(&m, 1).unwrap(), 3, &JennrichParams::default(), 0).unwrap();
        assert!((&est.p_hat - DMatrix::identity(3, 3)).amax() <= 1e-8);
        let err = evaluate(&m, &est).unwrap();
        assert!(err.o_error <= 1e-8 && err.w_error <= 1e-8);
    }

    #[test]
    fn recovered_model_reproduces_moments() {
        let (m, est, err) = exact_recovery(6, 4, 2, 21);
        let r = m.r;
        let perm = &err.perm;
        let aligned = HmmModel::with_distribution(
            DMatrix::from_fn(r, r, |i, j| est.p_hat[(perm[i], perm[j])]),
            DMatrix::from_fn(m.n, r, |i, j| est.o_hat[(i, perm[j])]),
            stationary(&DMatrix::from_fn(r, r, |i, j| est.p_hat[(perm[i], perm[j])])).unwrap(),
            m.sigma_obs,
        )
        .unwrap();
        let a = exact_moment3(&m, 2).unwrap();
        let b = exact_moment3(&aligned, 2).unwrap();
        let diff = DVector::from_column_slice(a.data()) - DVector::from_column_slice(b.data());
        assert!(diff.norm() <= 1e-6, "{}", diff.norm());
    }

    #[test]
    fn views_well_conditioned() {
        let ok = (0..20)
            .filter(|&s| {
                let v = build_views(&model(6, 4, 2, 100 + s), 2, false).unwrap();
                let sv = singular_values(&v.c);
                sigma_k(&v.c, 6).unwrap() > crate::linalg::RANK_TOL * sv[0]
            })
            .count();
        assert!(ok >= 19, "{ok}");
    }

    #[test]
    fn path_spec_delta_bound() {
        for seed in 0..10 {
            let m = model(6, 4, 2, 200 + seed);
            for ell in 2..=3 {
                let spec = path_spec(&m.p, ell).unwrap();
                assert_eq!(spec.num_columns(), 6 * 2usize.pow(ell as u32 - 1));
                let delta = delta_profile(&spec);
                for s in 1..ell {
                    assert!(delta[s - 1] as f64 <= binomial(ell as u64, s as u64) * 2f64.powi(s as i32));
                }
            }
        }
    }

    #[test]
    fn row_collapse_lemma() {
        let mut rng = rng_from_seed(14);
        for _ in 0..100 {
            let n1 = rng.random_range(1..5);
            let n3 = rng.random_range(1..5);
            let n2 = rng.random_range(n3..n3 + 4);
            let a = crate::rng::gaussian_matrix(&mut rng, n1 * n2, n3, 1.0);
            let b = collapse_rows(&a, n1).unwrap();
            assert!(sigma_k(&a, n3).unwrap() >= sigma_k(&b, n3).unwrap() / (n1 as f64).sqrt() - 1e-12);
        }
        assert!(collapse_rows(&DMatrix::zeros(5, 2), 2).is_err());
    }
}
