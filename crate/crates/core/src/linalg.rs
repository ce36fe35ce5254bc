//! Dense spectral primitives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::gaussian_matrix;

/// Relative tolerance (times σ_max) below which singular values count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Thin SVD with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn empty_svd(m: &DMatrix<f64>) -> Svd {
    let k = m.nrows().min(m.ncols());
    Svd {
        u: DMatrix::identity(m.nrows(), k),
        s: DVector::zeros(k),
        v: DMatrix::identity(m.ncols(), k),
    }
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    if m.is_empty() {
        return empty_svd(m);
    }
    match to_faer(m).thin_svd() {
        Ok(d) => Svd {
            u: from_faer(d.U()),
            s: DVector::from_iterator(d.S().dim(), d.S().column_vector().iter().copied()),
            v: from_faer(d.V()),
        },
        // Non-convergence only happens on non-finite input; report NaN rather than panic.
        Err(_) => {
            let mut out = empty_svd(m);
            out.s.fill(f64::NAN);
            out
        }
    }
}

/// Right singular vectors spanning all of ℝ^cols, with singular values
/// padded by zeros when the matrix is wide.
pub fn full_right_svd(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let cols = m.ncols();
    if m.nrows() >= cols {
        let d = svd(m);
        return (d.s, d.v);
    }
    match to_faer(m).svd() {
        Ok(d) => {
            let mut s = DVector::zeros(cols);
            for (i, x) in d.S().column_vector().iter().enumerate() {
                s[i] = *x;
            }
            (s, from_faer(d.V()))
        }
        Err(_) => (DVector::from_element(cols, f64::NAN), DMatrix::identity(cols, cols)),
    }
}

/// All singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    svd(m).s
}

/// k-th largest singular value (1-based).
pub fn sigma_k(m: &DMatrix<f64>, k: usize) -> Result<f64> {
    let bound = m.nrows().min(m.ncols());
    if k == 0 || k > bound {
        return Err(Error::IndexOutOfRange { index: k, bound });
    }
    Ok(singular_values(m)[k - 1])
}

/// `σ_k` of a matrix with k columns; zero when it has fewer than k rows.
pub fn sigma_min_cols(m: &DMatrix<f64>) -> f64 {
    let k = m.ncols();
    if k == 0 || m.nrows() < k {
        return 0.0;
    }
    singular_values(m)[k - 1]
}

/// Numerical rank under [`RANK_TOL`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.iter().next() else { return 0 };
    s.iter().filter(|&&x| x > RANK_TOL * top && x > 0.0).count()
}

/// Moore-Penrose pseudo-inverse with relative cutoff [`RANK_TOL`].
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = svd(m);
    let top = d.s.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in d.s.iter().enumerate() {
        if s > RANK_TOL * top && s > 0.0 {
            out += d.v.column(i) * d.u.column(i).transpose() / s;
        }
    }
    out
}

/// Orthonormal basis of a linear subspace of ℝ^ambient.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient: usize,
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let err = (gram - DMatrix::identity(basis.ncols(), basis.ncols())).amax();
        if err > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal (deviation {err:e})"
            )));
        }
        Ok(Self {
            ambient: basis.nrows(),
            basis,
        })
    }

    pub fn zero(ambient: usize) -> Self {
        Self {
            ambient,
            basis: DMatrix::zeros(ambient, 0),
        }
    }

    /// Column span of `m` with rank decided by [`RANK_TOL`].
    pub fn span(m: &DMatrix<f64>) -> Self {
        let r = rank(m);
        if r == 0 {
            return Self::zero(m.nrows());
        }
        Self {
            ambient: m.nrows(),
            basis: svd(m).u.columns(0, r).into_owned(),
        }
    }

    /// Span of the top-d left singular vectors of `m`.
    pub fn top_left(m: &DMatrix<f64>, d: usize) -> Result<Self> {
        let bound = m.nrows().min(m.ncols());
        if d > bound {
            return Err(Error::RankOverestimate {
                requested: d,
                rank: bound,
            });
        }
        Ok(Self {
            ambient: m.nrows(),
            basis: svd(m).u.columns(0, d).into_owned(),
        })
    }

    /// Haar-random subspace of the given dimension.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, ambient: usize, dim: usize) -> Self {
        if dim == 0 {
            return Self::zero(ambient);
        }
        let g = gaussian_matrix(rng, ambient, dim, 1.0);
        Self {
            ambient,
            basis: g.qr().q().columns(0, dim).into_owned(),
        }
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Orthogonal complement.
    pub fn complement(&self) -> Self {
        let (_, v) = full_right_svd(&self.basis.transpose());
        Self {
            ambient: self.ambient,
            basis: v.columns(self.dim(), self.ambient - self.dim()).into_owned(),
        }
    }
}

/// `‖Π_{S^⊥} v‖₂`.
pub fn proj_orth(v: &DVector<f64>, s: &Subspace) -> Result<f64> {
    if v.len() != s.ambient {
        return Err(Error::DimensionMismatch {
            context: "proj_orth",
            expected: s.ambient,
            found: v.len(),
        });
    }
    Ok((v - s.project(v)).norm())
}

/// Frobenius norm of sin Θ between equal-dimensional subspaces.
///
/// Evaluated as `‖V − U(UᵀV)‖_F`, which stays accurate for nearly equal
/// subspaces where `d − ‖UᵀV‖²_F` cancels.
pub fn sin_theta(u: &Subspace, v: &Subspace) -> Result<f64> {
    if u.ambient != v.ambient {
        return Err(Error::DimensionMismatch {
            context: "sin_theta ambient",
            expected: u.ambient,
            found: v.ambient,
        });
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            context: "sin_theta dimension",
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let residual = &v.basis - &u.basis * (u.basis.transpose() * &v.basis);
    Ok(residual.norm())
}

/// Distance from each column to the span of the others, minimised over columns.
pub fn leave_one_out(m: &DMatrix<f64>) -> Result<f64> {
    let k = m.ncols();
    if k < 2 {
        return Err(Error::InvalidArgument("leave_one_out needs at least two columns".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..k {
        let others = m.clone().remove_column(i);
        let col = m.column(i).into_owned();
        let dist = proj_orth(&col, &Subspace::span(&others))?;
        best = best.min(dist);
    }
    Ok(best)
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: s.nrows(),
            found: s.ncols(),
        });
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    let deviation = (s - s.transpose()).amax() / scale;
    if deviation > 1e-8 {
        return Err(Error::Asymmetric { deviation });
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen(s: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(s)?;
    let sym = (s + s.transpose()) * 0.5;
    let k = sym.nrows();
    let eig = to_faer(&sym)
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::InvalidArgument("symmetric eigensolver did not converge".into()))?;
    // faer sorts ascending.
    let vals: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let vecs = from_faer(eig.U());
    let order: Vec<usize> = (0..k).rev().collect();
    Ok((
        DVector::from_iterator(k, order.iter().map(|&i| vals[i])),
        vecs.select_columns(&order),
    ))
}

/// Frobenius-nearest PSD matrix: negative eigenvalues are clipped to zero.
pub fn psd_project(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(s)?;
    let clipped = DMatrix::from_diagonal(&vals.map(|x| x.max(0.0)));
    let out = &vecs * clipped * vecs.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// `H = E_R Λ_R^{1/2}` from the top-R eigenpairs. Each column is oriented so
/// its largest-magnitude entry is positive.
pub fn sqrt_factor(s: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(s)?;
    let top = vals.iter().copied().fold(0.0, f64::max);
    let numeric_rank = vals.iter().filter(|&&x| x > RANK_TOL * top && x > 0.0).count();
    if r > numeric_rank {
        return Err(Error::RankOverestimate {
            requested: r,
            rank: numeric_rank,
        });
    }
    let mut h = DMatrix::zeros(s.nrows(), r);
    for i in 0..r {
        let mut col = vecs.column(i) * vals[i].sqrt();
        if col[col.iamax()] < 0.0 {
            col.neg_mut();
        }
        h.set_column(i, &col);
    }
    Ok(h)
}

/// Unit vector minimising `‖M x‖` together with the two smallest singular
/// values (smallest first).
pub fn null_vector(m: &DMatrix<f64>) -> (DVector<f64>, f64, f64) {
    let (s, v) = full_right_svd(m);
    let c = v.ncols();
    let second = if c >= 2 { s[c - 2] } else { f64::INFINITY };
    (v.column(c - 1).into_owned(), s[c - 1], second)
}

/// Orthogonal Q minimising `‖Z Q − H‖_F`.
pub fn procrustes(z: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let d = svd(&(z.transpose() * h));
    &d.u * d.v.transpose()
}

/// Eigenpairs of a square matrix whose spectrum is real, eigenvalues in
/// descending order with unit eigenvectors. Fails if an eigenvalue has an
/// imaginary part above `imag_tol` (relative to the spectral radius).
pub fn real_eigen(m: &DMatrix<f64>, imag_tol: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "real_eigen",
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let k = m.nrows();
    let eig = nalgebra::Schur::new(m.clone()).complex_eigenvalues();
    let radius = eig.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if let Some(c) = eig.iter().find(|c| c.im.abs() > imag_tol * radius) {
        return Err(Error::InvalidArgument(format!(
            "complex eigenvalue {}+{}i",
            c.re, c.im
        )));
    }
    let mut vals: Vec<f64> = eig.iter().map(|c| c.re).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let mut vecs = DMatrix::zeros(k, k);
    for (i, &l) in vals.iter().enumerate() {
        let shifted = m - DMatrix::identity(k, k) * l;
        let (v, _, _) = null_vector(&shifted);
        vecs.set_column(i, &v);
    }
    Ok((vals, vecs))
}

/// Smallest gap between distinct positions of a sorted spectrum.
pub fn min_gap(sorted: &[f64]) -> f64 {
    sorted
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::rng::{gaussian_vector, rng_from_seed};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sigma_k_examples() {
        assert_eq!(sigma_k(&DMatrix::identity(3, 3), 3).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 2.0, 1.0]));
        assert_relative_eq!(sigma_k(&d, 2).unwrap(), 2.0, epsilon = 1e-14);
        assert!(sigma_k(&d, 0).is_err());
        assert!(sigma_k(&d, 4).is_err());
    }

    #[test]
    fn sigma_k_matches_gram_eigenvalues() {
        use nalgebra::SymmetricEigen;
        let mut rng = rng_from_seed(1);
        let m = gaussian_matrix(&mut rng, 5, 3, 1.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(m.transpose() * &m)
            .eigenvalues
            .iter()
            .map(|x| x.sqrt())
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for k in 1..=3 {
            assert_relative_eq!(sigma_k(&m, k).unwrap(), eig[k - 1], max_relative = 1e-10);
        }
    }

    #[test]
    fn leave_one_out_examples() {
        assert_relative_eq!(leave_one_out(&DMatrix::identity(3, 3)).unwrap(), 1.0);
        let mut m = DMatrix::identity(3, 3);
        m.set_column(2, &m.column(0).into_owned());
        assert!(leave_one_out(&m).unwrap() < 1e-12);
    }

    #[test]
    fn leave_one_out_sandwich() {
        let mut rng = rng_from_seed(2);
        for _ in 0..50 {
            let m = gaussian_matrix(&mut rng, 6, 4, 1.0);
            let l = leave_one_out(&m).unwrap();
            let s = sigma_min_cols(&m);
            assert!(l / 2.0 <= s * (1.0 + 1e-10));
            assert!(s <= l * (1.0 + 1e-10));
        }
    }

    #[test]
    fn proj_orth_examples() {
        let s = Subspace::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let inside = DVector::from_column_slice(&[2.0, 0.0, 0.0]);
        assert_eq!(proj_orth(&inside, &s).unwrap(), 0.0);
        let perp = DVector::from_column_slice(&[0.0, 3.0, 4.0]);
        assert_relative_eq!(proj_orth(&perp, &s).unwrap(), 5.0);
        assert!(proj_orth(&DVector::zeros(2), &s).is_err());
    }

    #[test]
    fn proj_orth_matches_least_squares() {
        let mut rng = rng_from_seed(3);
        let a = gaussian_matrix(&mut rng, 7, 3, 1.0);
        let s = Subspace::span(&a);
        let v = gaussian_vector(&mut rng, 7, 1.0);
        let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * &v)).unwrap();
        let oracle = (&v - &a * coef).norm();
        assert_relative_eq!(proj_orth(&v, &s).unwrap(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn sin_theta_examples() {
        let mut rng = rng_from_seed(4);
        let u = Subspace::random(&mut rng, 6, 3);
        assert!(sin_theta(&u, &u).unwrap() < 1e-12);
        let e1 = Subspace::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let e2 = Subspace::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_relative_eq!(sin_theta(&e1, &e2).unwrap(), 1.0);
        let t: f64 = 0.3;
        let l = Subspace::new(DMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()])).unwrap();
        assert_relative_eq!(sin_theta(&e1, &l).unwrap(), t.sin().abs(), max_relative = 1e-12);
        assert!(sin_theta(&u, &e1).is_err());
    }

    #[test]
    fn sin_theta_symmetric_and_rotation_invariant() {
        let mut rng = rng_from_seed(5);
        let u = Subspace::random(&mut rng, 8, 3);
        let v = Subspace::random(&mut rng, 8, 3);
        let a = sin_theta(&u, &v).unwrap();
        assert_relative_eq!(a, sin_theta(&v, &u).unwrap(), max_relative = 1e-12);
        let q = gaussian_matrix(&mut rng, 3, 3, 1.0).qr().q();
        let rotated = Subspace::new(v.basis() * q).unwrap();
        assert_relative_eq!(a, sin_theta(&u, &rotated).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn psd_project_examples() {
        let mut rng = rng_from_seed(6);
        let g = gaussian_matrix(&mut rng, 4, 4, 1.0);
        let p = &g * g.transpose();
        assert!((psd_project(&p).unwrap() - &p).amax() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -2.0]));
        let out = psd_project(&d).unwrap();
        assert!((out - DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]))).amax() < 1e-14);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(psd_project(&asym), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn psd_project_beats_random_candidates() {
        let mut rng = rng_from_seed(7);
        let g = gaussian_matrix(&mut rng, 5, 5, 1.0);
        let s = (&g + g.transpose()) * 0.5;
        let p = psd_project(&s).unwrap();
        let best = (&s - &p).norm();
        for _ in 0..1000 {
            let h = gaussian_matrix(&mut rng, 5, 5, 1.0);
            let cand = &h * h.transpose() * 0.3;
            assert!(best <= (&s - cand).norm() + 1e-12);
        }
    }

    #[test]
    fn sqrt_factor_examples() {
        let h = sqrt_factor(&DMatrix::identity(2, 2), 2).unwrap();
        assert!((&h * h.transpose() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        assert!((h.transpose() * &h - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);

        let mut s = DMatrix::zeros(3, 3);
        s[(0, 0)] = 4.0;
        let h = sqrt_factor(&s, 1).unwrap();
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-14);
        assert!(h.rows(1, 2).amax() < 1e-14);
        assert!(matches!(sqrt_factor(&s, 2), Err(Error::RankOverestimate { .. })));

        let mut rng = rng_from_seed(8);
        let u = gaussian_matrix(&mut rng, 6, 3, 1.0);
        let s = &u * u.transpose();
        let h = sqrt_factor(&s, 3).unwrap();
        assert!((&h * h.transpose() - s).norm() <= 1e-8);
    }

    #[test]
    fn robust_sylvester() {
        let mut rng = rng_from_seed(9);
        let mut checked = 0;
        while checked < 100 {
            let np = 8;
            let p = rng.random_range(3..=np);
            let r = rng.random_range(1..=np.min(6));
            if p + r <= np {
                continue;
            }
            let pi = Subspace::random(&mut rng, np, p).projector();
            let u = gaussian_matrix(&mut rng, np, r, 1.0);
            let idx = p + r - np;
            let lhs = sigma_k(&(&pi * &u), idx).unwrap();
            let rhs = sigma_k(&pi, p).unwrap() * sigma_k(&u, r).unwrap();
            assert!(lhs >= rhs * (1.0 - 1e-10), "{lhs} < {rhs}");
            checked += 1;
        }
    }

    #[test]
    fn weyl_inequality() {
        let mut rng = rng_from_seed(10);
        for _ in 0..50 {
            let a = gaussian_matrix(&mut rng, 6, 4, 1.0);
            let e = gaussian_matrix(&mut rng, 6, 4, 0.1);
            let (sa, sb) = (singular_values(&a), singular_values(&(&a + &e)));
            for k in 0..4 {
                assert!((sa[k] - sb[k]).abs() <= e.norm() + 1e-12);
            }
        }
    }

    #[test]
    fn pinv_inverts_full_rank() {
        let mut rng = rng_from_seed(11);
        let a = gaussian_matrix(&mut rng, 7, 4, 1.0);
        let p = pinv(&a);
        assert!((&p * &a - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn complement_is_orthogonal() {
        let mut rng = rng_from_seed(12);
        let s = Subspace::random(&mut rng, 7, 3);
        let c = s.complement();
        assert_eq!(c.dim(), 4);
        assert!((s.basis().transpose() * c.basis()).amax() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = rng_from_seed(13);
        let h = gaussian_matrix(&mut rng, 6, 3, 1.0);
        let q = gaussian_matrix(&mut rng, 3, 3, 1.0).qr().q();
        let z = &h * q.transpose();
        assert!((&z * procrustes(&z, &h) - &h).amax() < 1e-12);
    }

    #[test]
    fn real_eigen_of_similar_diagonal() {
        let mut rng = rng_from_seed(14);
        let p = gaussian_matrix(&mut rng, 4, 4, 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, -1.0, 0.5, 2.0]));
        let m = &p * d * p.clone().try_inverse().unwrap();
        let (vals, vecs) = real_eigen(&m, 1e-8).unwrap();
        for (got, want) in vals.iter().zip([3.0, 2.0, 0.5, -1.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-9);
        }
        for i in 0..4 {
            let v = vecs.column(i).into_owned();
            assert!((&m * &v - &v * vals[i]).norm() < 1e-9);
        }
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(real_eigen(&rot, 1e-8).is_err());
    }

    proptest! {
        #[test]
        fn pythagoras(seed: u64, dim in 0usize..6) {
            let mut rng = rng_from_seed(seed);
            let s = Subspace::random(&mut rng, 6, dim);
            let v = gaussian_vector(&mut rng, 6, 1.0);
            let perp = proj_orth(&v, &s).unwrap();
            let inside = (s.basis().transpose() * &v).norm_squared();
            prop_assert!((perp * perp + inside - v.norm_squared()).abs() < 1e-10);
        }
    }
}
