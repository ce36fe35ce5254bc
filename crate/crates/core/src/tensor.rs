//! Tensor and multi-index primitives.
//!
//! Conventions:
//! * indices are 0-based;
//! * dense tensors are flattened row-major (first index most significant);
//! * symmetric coordinates are indexed by sorted multi-indices
//!   `j₁ ≤ … ≤ j_ℓ` in lexicographic order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n.checked_sub(k)?);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Dimension `C(n+ℓ−1, ℓ)` of the space of symmetric order-ℓ tensors over ℝⁿ.
pub fn sym_dim(n: usize, ell: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("sym_dim requires n ≥ 1".into()));
    }
    if ell == 0 {
        return Ok(1);
    }
    binomial(n + ell - 1, ell).ok_or(Error::Overflow("sym_dim"))
}

/// `n^ℓ` with overflow detection.
pub fn dense_len(n: usize, ell: usize) -> Result<usize> {
    let mut len = 1usize;
    for _ in 0..ell {
        len = len.checked_mul(n).ok_or(Error::Overflow("n^ℓ"))?;
    }
    Ok(len)
}

/// All sorted multi-indices of length `ell` over `0..n`, lexicographically.
pub fn sorted_multi_indices(n: usize, ell: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; ell];
    loop {
        out.push(idx.clone());
        // Rightmost position that can still increase.
        let Some(p) = (0..ell).rev().find(|&p| idx[p] + 1 < n) else {
            return out;
        };
        let v = idx[p] + 1;
        for q in idx.iter_mut().skip(p) {
            *q = v;
        }
    }
}

/// Lexicographic rank of a sorted multi-index among all sorted multi-indices.
pub fn sym_rank(n: usize, sorted: &[usize]) -> usize {
    let ell = sorted.len();
    let mut rank = 0;
    let mut prev = 0;
    for (p, &v) in sorted.iter().enumerate() {
        let rest = ell - p - 1;
        for w in prev..v {
            rank += if rest == 0 { 1 } else { binomial(n - w + rest - 1, rest).unwrap_or(0) };
        }
        prev = v;
    }
    rank
}

/// Number of distinct orderings of a sorted multi-index, `ℓ!/∏ cᵢ!`.
pub fn multiplicity(sorted: &[usize]) -> usize {
    let mut result: usize = (1..=sorted.len()).product();
    let mut run = 1;
    for w in 1..=sorted.len() {
        if w < sorted.len() && sorted[w] == sorted[w - 1] {
            run += 1;
        } else {
            result /= (1..=run).product::<usize>();
            run = 1;
        }
    }
    result
}

/// Decodes a flat row-major offset into its multi-index.
pub fn unflatten(mut offset: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &dim) in idx.iter_mut().zip(shape).rev() {
        *slot = offset % dim;
        offset /= dim;
    }
    idx
}

/// For every dense offset of an `n^ℓ` tensor, the symmetric coordinate it maps to.
pub fn dense_to_sym_map(n: usize, ell: usize) -> Result<Vec<usize>> {
    let len = dense_len(n, ell)?;
    let shape = vec![n; ell];
    Ok((0..len)
        .map(|off| {
            let mut idx = unflatten(off, &shape);
            idx.sort_unstable();
            sym_rank(n, &idx)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument("tensor modes must be positive".into()));
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Overflow("tensor size"))?;
        if len != data.len() {
            return Err(Error::DimensionMismatch {
                context: "DenseTensor::new",
                expected: len,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::DimensionMismatch {
                context: "DenseTensor index",
                expected: self.shape.len(),
                found: idx.len(),
            });
        }
        let mut off = 0;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            if i >= d {
                return Err(Error::IndexOutOfRange { index: i, bound: d });
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Cubic order-ℓ tensor over ℝⁿ from a flat row-major vector.
    pub fn from_flat(n: usize, ell: usize, flat: &DVector<f64>) -> Result<Self> {
        Self::new(vec![n; ell], flat.as_slice().to_vec())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn cubic_dim(&self) -> Option<usize> {
        let n = *self.shape.first()?;
        self.shape.iter().all(|&d| d == n).then_some(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    n: usize,
    ell: usize,
    coeffs: Vec<f64>,
}

impl SymTensor {
    pub fn new(n: usize, ell: usize, coeffs: Vec<f64>) -> Result<Self> {
        let dim = sym_dim(n, ell)?;
        if coeffs.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "SymTensor::new",
                expected: dim,
                found: coeffs.len(),
            });
        }
        Ok(Self { n, ell, coeffs })
    }

    pub fn zeros(n: usize, ell: usize) -> Result<Self> {
        Self::new(n, ell, vec![0.0; sym_dim(n, ell)?])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient at an arbitrary (unsorted) multi-index.
    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        self.coeffs[sym_rank(self.n, &sorted)]
    }

    /// Full `n^ℓ` tensor.
    pub fn expand(&self) -> DenseTensor {
        let map = dense_to_sym_map(self.n, self.ell).expect("size validated at construction");
        let data = map.iter().map(|&s| self.coeffs[s]).collect();
        DenseTensor {
            shape: vec![self.n; self.ell],
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        sorted_multi_indices(self.n, self.ell)
            .iter()
            .zip(&self.coeffs)
            .map(|(j, c)| multiplicity(j) as f64 * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// `⟨T, y^{⊗ℓ}⟩`.
    pub fn eval(&self, y: &DVector<f64>) -> Result<f64> {
        check_len("SymTensor::eval", self.n, y.len())?;
        Ok(sorted_multi_indices(self.n, self.ell)
            .iter()
            .zip(&self.coeffs)
            .map(|(j, c)| multiplicity(j) as f64 * c * j.iter().map(|&i| y[i]).product::<f64>())
            .sum())
    }
}

/// Index maps of a tensor-monomial matrix. Entries are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialSpec {
    pub k: usize,
    pub ell: usize,
    pub columns: Vec<Vec<usize>>,
}

impl MonomialSpec {
    pub fn new(k: usize, ell: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        let spec = Self { k, ell, columns };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for col in &self.columns {
            if col.len() != self.ell {
                return Err(Error::DimensionMismatch {
                    context: "MonomialSpec tuple",
                    expected: self.ell,
                    found: col.len(),
                });
            }
            if let Some(&bad) = col.iter().find(|&&e| e >= self.k) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    bound: self.k,
                });
            }
        }
        Ok(())
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }
}

/// Coefficients `U_i(J)` of m polynomials over the sorted monomials of degree ℓ.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub n: usize,
    pub ell: usize,
    pub entries: DMatrix<f64>,
}

impl CoefficientMatrix {
    pub fn new(n: usize, ell: usize, entries: DMatrix<f64>) -> Result<Self> {
        let dim = sym_dim(n, ell)?;
        if entries.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "CoefficientMatrix columns",
                expected: dim,
                found: entries.ncols(),
            });
        }
        Ok(Self { n, ell, entries })
    }

    pub fn identity(n: usize, ell: usize) -> Result<Self> {
        let dim = sym_dim(n, ell)?;
        Self::new(n, ell, DMatrix::identity(dim, dim))
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

/// Kronecker product of vectors, first factor most significant.
pub fn tensor_product(factors: &[&DVector<f64>]) -> DVector<f64> {
    let mut acc = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(acc.len() * f.len());
        for &a in &acc {
            next.extend(f.iter().map(|&b| a * b));
        }
        acc = next;
    }
    DVector::from_vec(acc)
}

/// `v^{⊗ℓ}` flattened row-major.
pub fn outer_power(v: &DVector<f64>, ell: usize) -> DVector<f64> {
    let factors = vec![v; ell];
    tensor_product(&factors)
}

/// Degree-ℓ monomials of `x` in sorted lexicographic order, unweighted.
pub fn monomial_vector(x: &DVector<f64>, ell: usize) -> DVector<f64> {
    let idx = sorted_multi_indices(x.len(), ell);
    DVector::from_iterator(
        idx.len(),
        idx.iter().map(|j| j.iter().map(|&i| x[i]).product::<f64>()),
    )
}

/// Same as [`monomial_vector`] with each entry scaled by `√multiplicity`, so
/// that `⟨weighted(x), weighted(y)⟩ = ⟨x,y⟩^ℓ`.
pub fn weighted_monomial_vector(x: &DVector<f64>, ell: usize) -> DVector<f64> {
    let idx = sorted_multi_indices(x.len(), ell);
    DVector::from_iterator(
        idx.len(),
        idx.iter()
            .map(|j| (multiplicity(j) as f64).sqrt() * j.iter().map(|&i| x[i]).product::<f64>()),
    )
}

/// m × k matrix with entry `(i, j) = f_i(a_j)`.
pub fn eval_poly_matrix(u: &CoefficientMatrix, points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let dim = sym_dim(u.n, u.ell)?;
    let mut mono = DMatrix::zeros(dim, points.len());
    for (j, p) in points.iter().enumerate() {
        check_len("eval_poly_matrix point", u.n, p.len())?;
        mono.set_column(j, &monomial_vector(p, u.ell));
    }
    Ok(&u.entries * mono)
}

/// Column-wise Kronecker product: column i is `X_i ⊗ Y_i`.
pub fn khatri_rao(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len("khatri_rao columns", x.ncols(), y.ncols())?;
    let (p, q) = (x.nrows(), y.nrows());
    Ok(DMatrix::from_fn(p * q, x.ncols(), |row, c| {
        x[(row / q, c)] * y[(row % q, c)]
    }))
}

/// Tensor-monomial matrix: column c is `a_{f(1)} ⊗ … ⊗ a_{f(ℓ)}` for `f = spec.columns[c]`.
pub fn monomial_matrix(vectors: &[DVector<f64>], spec: &MonomialSpec) -> Result<DMatrix<f64>> {
    check_len("monomial_matrix vectors", spec.k, vectors.len())?;
    spec.validate()?;
    let n = vectors.first().map_or(0, |v| v.len());
    for v in vectors {
        check_len("monomial_matrix vector length", n, v.len())?;
    }
    let rows = dense_len(n, spec.ell)?;
    let mut out = DMatrix::zeros(rows, spec.columns.len());
    for (c, tuple) in spec.columns.iter().enumerate() {
        let factors: Vec<&DVector<f64>> = tuple.iter().map(|&i| &vectors[i]).collect();
        out.set_column(c, &tensor_product(&factors));
    }
    Ok(out)
}

/// `(Δ₁, …, Δ_ℓ)`: Δ_s is the largest number of other columns whose tuple
/// differs from a given column in exactly s positions.
pub fn delta_profile(spec: &MonomialSpec) -> Vec<usize> {
    let r = spec.columns.len();
    let mut best = vec![0usize; spec.ell];
    let mut counts = vec![0usize; spec.ell + 1];
    for i in 0..r {
        counts.iter_mut().for_each(|c| *c = 0);
        for j in 0..r {
            if i != j {
                let s = spec.columns[i]
                    .iter()
                    .zip(&spec.columns[j])
                    .filter(|(a, b)| a != b)
                    .count();
                counts[s] += 1;
            }
        }
        for s in 1..=spec.ell {
            best[s - 1] = best[s - 1].max(counts[s]);
        }
    }
    best
}

/// Orthogonal projection of a cubic tensor onto symmetric tensors.
pub fn symmetrize(t: &DenseTensor) -> Result<SymTensor> {
    let n = t
        .cubic_dim()
        .ok_or_else(|| Error::InvalidArgument("symmetrize requires a cubic shape".into()))?;
    let ell = t.order();
    let map = dense_to_sym_map(n, ell)?;
    let dim = sym_dim(n, ell)?;
    let mut sums = vec![0.0; dim];
    let mut counts = vec![0usize; dim];
    for (&s, &v) in map.iter().zip(&t.data) {
        sums[s] += v;
        counts[s] += 1;
    }
    let coeffs = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    SymTensor::new(n, ell, coeffs)
}

/// `⟨T, u₁ ⊗ … ⊗ u_ℓ⟩` for symmetric T.
pub fn decoupled_eval(t: &SymTensor, factors: &[DVector<f64>]) -> Result<f64> {
    check_len("decoupled_eval factors", t.ell, factors.len())?;
    for f in factors {
        check_len("decoupled_eval factor length", t.n, f.len())?;
    }
    let refs: Vec<&DVector<f64>> = factors.iter().collect();
    let prod = tensor_product(&refs);
    let dense = t.expand();
    Ok(dense.data.iter().zip(prod.iter()).map(|(a, b)| a * b).sum())
}

/// `E[(α₀ + Σ αᵢζᵢ)^{m+1} ∏ ζᵢ]` over independent Rademacher signs, by exhaustive enumeration.
pub fn rademacher_moment(alpha: &[f64]) -> Result<f64> {
    let m = alpha.len().checked_sub(1).ok_or(Error::EmptySamples)?;
    if m > 24 {
        return Err(Error::Overflow("2^m sign patterns"));
    }
    let mut total = 0.0;
    for mask in 0u32..(1 << m) {
        let mut s = alpha[0];
        let mut sign = 1.0;
        for i in 0..m {
            let z = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            s += alpha[i + 1] * z;
            sign *= z;
        }
        total += sign * s.powi(m as i32 + 1);
    }
    Ok(total / (1u64 << m) as f64)
}

/// `Σ_{ζ₂..ζ_ℓ ∈ {±1}} (∏ζᵢ) ⟨T, (x + z₁ + Σ ζᵢ zᵢ)^{⊗ℓ}⟩`.
pub fn signed_decoupling_sum(t: &SymTensor, x: &DVector<f64>, z: &[DVector<f64>]) -> Result<f64> {
    check_len("signed_decoupling_sum z count", t.ell, z.len())?;
    let free = t.ell - 1;
    let base = x + &z[0];
    let mut total = 0.0;
    for mask in 0u32..(1 << free) {
        let mut y = base.clone();
        let mut sign = 1.0;
        for (i, zi) in z.iter().skip(1).enumerate() {
            if mask >> i & 1 == 1 {
                y -= zi;
                sign = -sign;
            } else {
                y += zi;
            }
        }
        total += sign * t.eval(&y)?;
    }
    Ok(total)
}
