//! Dense linear-algebra plumbing shared by the geometries and problem families.
//!
//! Every domain lives in a Euclidean space with the Frobenius pairing. The
//! [`Space`] trait gives the solver the handful of vector-space operations it
//! needs without caring whether an element is a vector, a symmetric matrix or
//! a block-diagonal rectangular matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Linear-space operations over an embedding space with the Frobenius pairing.
pub trait Space: Clone + Send + Sync + std::fmt::Debug + PartialEq {
    fn zeros_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale_mut(&mut self, a: f64);
    fn dot(&self, other: &Self) -> f64;
    fn all_finite(&self) -> bool;
    /// Number of scalar coordinates.
    fn dim(&self) -> usize;

    fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale_mut(a);
        out
    }

    fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    fn norm_fro(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Space for DVector<f64> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.zip_apply(x, |s, v| *s += a * v);
    }
    fn scale_mut(&mut self, a: f64) {
        *self *= a;
    }
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn dim(&self) -> usize {
        self.len()
    }
}

impl Space for DMatrix<f64> {
    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.zip_apply(x, |s, v| *s += a * v);
    }
    fn scale_mut(&mut self, a: f64) {
        *self *= a;
    }
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn dim(&self) -> usize {
        self.len()
    }
}

/// Block-diagonal rectangular matrix stored as its diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag(pub Vec<DMatrix<f64>>);

impl BlockDiag {
    pub fn zeros(rows: &[usize], cols: &[usize]) -> Self {
        BlockDiag(
            rows.iter()
                .zip(cols)
                .map(|(&r, &c)| DMatrix::zeros(r, c))
                .collect(),
        )
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.0
    }

    pub fn shape_matches(&self, other: &BlockDiag) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

impl Space for BlockDiag {
    fn zeros_like(&self) -> Self {
        BlockDiag(self.0.iter().map(|b| b.zeros_like()).collect())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            s.axpy(a, v);
        }
    }
    fn scale_mut(&mut self, a: f64) {
        for b in &mut self.0 {
            *b *= a;
        }
    }
    fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }
    fn all_finite(&self) -> bool {
        self.0.iter().all(|b| b.all_finite())
    }
    fn dim(&self) -> usize {
        self.0.iter().map(|b| b.len()).sum()
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in non-ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// Convergence threshold handed to nalgebra's symmetric eigensolver.
const DECOMP_EPS: f64 = 5.0 * f64::EPSILON;
const JACOBI_SWEEPS: usize = 60;

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.all_finite() {
            return Err(Error::Decomposition("non-finite matrix entries".into()));
        }
        let sym = symmetrize(m);
        let eig = sym
            .try_symmetric_eigen(DECOMP_EPS, 10_000)
            .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
        let n = m.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(SymEigen { vectors, values })
    }

    /// `W · Diag(f(λ)) · Wᵀ`
    pub fn assemble_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let vals: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        assemble_sym(&self.vectors, &vals)
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }
}

/// `W · Diag(d) · Wᵀ`, exactly symmetrized.
pub fn assemble_sym(w: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut scaled = w.clone();
    for (j, &v) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v);
    }
    symmetrize(&(scaled * w.transpose()))
}

/// Thin SVD with signed "singular" values: the matrix equals `U · Diag(s) · Vᵀ`.
///
/// Values produced by a decomposition are nonnegative; prox outputs reuse the
/// type with signed values so the factors carry forward unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SignedSvd {
    /// One-sided Jacobi SVD. nalgebra's bidiagonal SVD loses accuracy in the
    /// singular vectors of nearly rank-deficient inputs (relative
    /// reconstruction errors up to ~1e-1 on 2×2 blocks), which Jacobi avoids.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.all_finite() {
            return Err(Error::Decomposition("non-finite matrix entries".into()));
        }
        if m.nrows() < m.ncols() {
            let t = Self::new(&m.transpose())?;
            return Ok(SignedSvd {
                u: t.v,
                s: t.s,
                v: t.u,
            });
        }
        let (rows, cols) = m.shape();
        let mut w = m.clone();
        let mut v = DMatrix::<f64>::identity(cols, cols);
        let tol = rows.max(1) as f64 * f64::EPSILON;
        // columns below this norm are rounding noise: they cannot be made
        // orthogonal to relative precision and are treated as zero
        let floor = m.norm() * tol;
        let mut converged = cols < 2;
        for _ in 0..JACOBI_SWEEPS {
            let mut rotated = false;
            for p in 0..cols {
                for q in p + 1..cols {
                    let alpha = w.column(p).norm_squared();
                    let beta = w.column(q).norm_squared();
                    let gamma = w.column(p).dot(&w.column(q));
                    if gamma == 0.0
                        || alpha.min(beta).sqrt() <= floor
                        || gamma.abs() <= tol * (alpha * beta).sqrt()
                    {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                    let c = 1.0 / t.hypot(1.0);
                    let s = c * t;
                    rotate_columns(&mut w, p, q, c, s);
                    rotate_columns(&mut v, p, q, c, s);
                }
            }
            if !rotated {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Decomposition("Jacobi SVD did not converge".into()));
        }
        let sigma: Vec<f64> = (0..cols).map(|j| w.column(j).norm()).collect();
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        let mut u = DMatrix::zeros(rows, cols);
        let mut vs = DMatrix::zeros(cols, cols);
        let mut s = DVector::zeros(cols);
        let mut missing = Vec::new();
        for (dst, &src) in order.iter().enumerate() {
            s[dst] = sigma[src];
            vs.set_column(dst, &v.column(src));
            if sigma[src] > floor && sigma[src] > 0.0 {
                u.set_column(dst, &(w.column(src) / sigma[src]));
            } else {
                missing.push(dst);
            }
        }
        complete_orthonormal(&mut u, &missing);
        Ok(SignedSvd { u, s, v: vs })
    }

    /// Factors of the zero `rows × cols` matrix.
    pub fn zero(rows: usize, cols: usize) -> Self {
        let r = rows.min(cols);
        SignedSvd {
            u: DMatrix::identity(rows, r),
            s: DVector::zeros(r),
            v: DMatrix::identity(cols, r),
        }
    }

    pub fn assemble_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (j, &val) in self.s.iter().enumerate() {
            scaled.column_mut(j).scale_mut(f(val));
        }
        scaled * self.v.transpose()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        self.assemble_with(|s| s)
    }
}

/// Columns `p, q` of `m` ← `(c·m_p − s·m_q, s·m_p + c·m_q)`.
fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (a, b) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column: the coordinate axis with the largest residual after
/// (twice-applied) Gram–Schmidt.
fn complete_orthonormal(u: &mut DMatrix<f64>, missing: &[usize]) {
    let n = u.nrows();
    for &j in missing {
        u.column_mut(j).fill(0.0);
        let mut best = DVector::zeros(n);
        let mut best_norm = -1.0;
        for axis in 0..n {
            let mut e = DVector::zeros(n);
            e[axis] = 1.0;
            for _ in 0..2 {
                for k in 0..u.ncols() {
                    let d = u.column(k).dot(&e);
                    e.axpy(-d, &u.column(k), 1.0);
                }
            }
            let norm = e.norm();
            if norm > best_norm {
                best_norm = norm;
                best = e;
            }
        }
        u.set_column(j, &(best / best_norm));
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().sum()
}

/// Symmetric eigenvalues in non-ascending order (no vectors).
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(SymEigen::new(m)?.values.iter().copied().collect())
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Haar-ish random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, n, n);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Matrix with `k` orthonormal columns.
pub fn random_orthonormal_columns<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    k: usize,
) -> DMatrix<f64> {
    random_orthogonal(rng, n).columns(0, k).into_owned()
}

/// Arithmetic-operation models used by the cost counters.
pub mod flops {
    /// Dense product of a `p×q` and a `q×r` matrix.
    pub const fn matmul(p: usize, q: usize, r: usize) -> u64 {
        (p * q * r) as u64
    }

    /// Symmetric eigendecomposition with vectors.
    pub const fn sym_eigen(n: usize) -> u64 {
        (9 * n * n * n) as u64
    }

    /// Thin SVD of a `p×q` matrix with both factor sets.
    pub const fn svd(p: usize, q: usize) -> u64 {
        let (big, small) = if p >= q { (p, q) } else { (q, p) };
        (4 * big * small * small + 8 * small * small * small) as u64
    }
}
