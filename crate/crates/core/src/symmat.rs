//! Symmetric matrix primitives.
//!
//! [`SymMat`] stores the upper triangle only, so symmetry holds by
//! construction. [`SpdMat`] is a symmetric matrix that passed the
//! eigenvalue-based definiteness check in [`assert_pd`].

use std::sync::RwLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Eigenvalue tolerances, all relative to the largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// PD requires every eigenvalue `> pd * lambda_max`.
    pub pd: f64,
    /// PSD requires every eigenvalue `>= -psd * lambda_max`.
    pub psd: f64,
    /// Reconstruction tolerance for square roots and round trips.
    pub rec: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pd: 1e-12,
            psd: 1e-10,
            rec: 1e-8,
        }
    }
}

static TOLERANCES: RwLock<Tolerances> = RwLock::new(Tolerances {
    pd: 1e-12,
    psd: 1e-10,
    rec: 1e-8,
});

/// Current process-wide tolerances.
pub fn tolerances() -> Tolerances {
    *TOLERANCES.read().unwrap_or_else(|e| e.into_inner())
}

pub fn set_tolerances(tol: Tolerances) {
    *TOLERANCES.write().unwrap_or_else(|e| e.into_inner()) = tol;
}

#[inline]
fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - (i * i - i) / 2 + (j - i)
}

/// A real symmetric `d x d` matrix held as its upper triangle (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    upper: Vec<f64>,
}

impl SymMat {
    pub fn from_upper(dim: usize, upper: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let expected = dim * (dim + 1) / 2;
        if upper.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: upper.len(),
            });
        }
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        Ok(Self { dim, upper })
    }

    /// Builds from `f(i, j)` evaluated on `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                upper.push(f(i, j));
            }
        }
        Self { dim, upper }
    }

    /// Takes the symmetric part `(M + M^T) / 2` of a square matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let s = Self::from_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        Self::from_upper(s.dim, s.upper)
    }

    /// Like [`SymMat::from_matrix`] but rejects inputs whose asymmetry exceeds
    /// `rel_tol` relative to the largest entry.
    pub fn from_matrix_checked(m: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                    return Err(Error::Parse(format!(
                        "matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Self::from_matrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_fn(dim, |_, _| 0.0)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[upper_index(self.dim, i, j)]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            upper: self.upper.iter().map(|v| c * v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |x, y| x - y)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(x, y)| f(*x, *y))
                .collect(),
        })
    }

    /// `||self - other||_F / ||other||_F`; falls back to the absolute error
    /// when `other` is zero.
    pub fn rel_frobenius_err(&self, other: &Self) -> f64 {
        let diff = self.sub(other).map(|m| m.frobenius_norm()).unwrap_or(f64::INFINITY);
        let denom = other.frobenius_norm();
        if denom > 0.0 {
            diff / denom
        } else {
            diff
        }
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    pub fn eigen(&self) -> (Vec<f64>, DMatrix<f64>) {
        sorted_eigen(self.to_matrix())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().0
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = m.nrows();
    if d == 1 {
        return (vec![m[(0, 0)]], DMatrix::identity(1, 1));
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(d, d, |i, c| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// `Q diag(f(lambda)) Q^T` for a symmetric eigendecomposition.
pub(crate) fn spectral_map(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mapped = DVector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * mapped[j]);
    let out = &scaled * vectors.transpose();
    symmetrize(&out)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Psd,
    Pd,
}

/// A symmetric matrix known to be PSD (or PD) under the current tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMat {
    base: SymMat,
    kind: Definiteness,
}

impl SpdMat {
    pub fn identity(dim: usize) -> Self {
        Self {
            base: SymMat::identity(dim),
            kind: Definiteness::Pd,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            base: SymMat::zeros(dim),
            kind: Definiteness::Psd,
        }
    }

    /// Classifies `m`, failing unless it is PD.
    pub fn new_pd(m: SymMat) -> Result<Self> {
        let s = assert_pd(&m)?;
        if s.is_pd() {
            Ok(s)
        } else {
            Err(Error::NotPd {
                min_eigenvalue: s.base.eigenvalues()[0],
            })
        }
    }

    pub fn new_psd(m: SymMat) -> Result<Self> {
        assert_pd(&m)
    }

    pub fn from_matrix_pd(m: &DMatrix<f64>) -> Result<Self> {
        Self::new_pd(SymMat::from_matrix(m)?)
    }

    pub fn from_matrix_psd(m: &DMatrix<f64>) -> Result<Self> {
        Self::new_psd(SymMat::from_matrix(m)?)
    }

    #[inline]
    pub fn as_sym(&self) -> &SymMat {
        &self.base
    }

    pub fn into_sym(self) -> SymMat {
        self.base
    }

    #[inline]
    pub fn kind(&self) -> Definiteness {
        self.kind
    }

    #[inline]
    pub fn is_pd(&self) -> bool {
        self.kind == Definiteness::Pd
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.base.to_matrix()
    }

    pub fn is_zero(&self) -> bool {
        self.base.upper.iter().all(|&v| v == 0.0)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if c < 0.0 || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("scale factor {c} must be finite and >= 0")));
        }
        let kind = if c > 0.0 { self.kind } else { Definiteness::Psd };
        Ok(Self {
            base: self.base.scale(c),
            kind,
        })
    }

    /// Symmetric inverse; requires PD.
    pub fn inverse(&self) -> Result<Self> {
        let (values, vectors) = self.base.eigen();
        if !self.is_pd() || values[0] <= 0.0 {
            return Err(Error::NotPd {
                min_eigenvalue: values[0],
            });
        }
        Ok(Self {
            base: SymMat::from_matrix(&spectral_map(&values, &vectors, |v| 1.0 / v))?,
            kind: Definiteness::Pd,
        })
    }

    /// Symmetric inverse square root; requires PD.
    pub fn inv_sqrt(&self) -> Result<Self> {
        let (values, vectors) = self.base.eigen();
        if !self.is_pd() || values[0] <= 0.0 {
            return Err(Error::NotPd {
                min_eigenvalue: values[0],
            });
        }
        Ok(Self {
            base: SymMat::from_matrix(&spectral_map(&values, &vectors, |v| 1.0 / v.sqrt()))?,
            kind: Definiteness::Pd,
        })
    }

    pub fn ln_det(&self) -> f64 {
        self.base.eigenvalues().iter().map(|v| v.ln()).sum()
    }
}

/// Classifies `m` as PD or PSD. Eigenvalues in `[-psd * lambda_max, 0)` are
/// clipped to zero; anything lower is rejected.
pub fn assert_pd(m: &SymMat) -> Result<SpdMat> {
    assert_pd_with(m, &tolerances())
}

pub fn assert_pd_with(m: &SymMat, tol: &Tolerances) -> Result<SpdMat> {
    let (values, vectors) = m.eigen();
    let lmin = values[0];
    let lmax = values[values.len() - 1];
    let scale = lmax.max(0.0);
    if lmax < 0.0 || lmin < -tol.psd * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: lmin,
            threshold: -tol.psd * scale,
        });
    }
    if lmin > tol.pd * scale {
        return Ok(SpdMat {
            base: m.clone(),
            kind: Definiteness::Pd,
        });
    }
    let base = if lmin < 0.0 {
        SymMat::from_matrix(&spectral_map(&values, &vectors, |v| v.max(0.0)))?
    } else {
        m.clone()
    };
    Ok(SpdMat {
        base,
        kind: Definiteness::Psd,
    })
}

/// Symmetric square root `S` with `S S = P`.
pub fn sym_sqrt(p: &SpdMat) -> SpdMat {
    let (values, vectors) = p.base.eigen();
    let root = spectral_map(&values, &vectors, |v| v.max(0.0).sqrt());
    SpdMat {
        base: SymMat::from_fn(p.dim(), |i, j| 0.5 * (root[(i, j)] + root[(j, i)])),
        kind: p.kind,
    }
}

/// `P^{1/2} R P^{1/2}`.
pub fn conjugate(r: &SymMat, p: &SpdMat) -> Result<SymMat> {
    check_dim(r.dim(), p.dim())?;
    let root = sym_sqrt(p).to_matrix();
    conjugate_by_root(r, &root)
}

/// Conjugation with a precomputed symmetric root.
pub(crate) fn conjugate_by_root(r: &SymMat, root: &DMatrix<f64>) -> Result<SymMat> {
    check_dim(r.dim(), root.nrows())?;
    SymMat::from_matrix(&(root * r.to_matrix() * root))
}

/// Exponential trace `exp(tr(M))`.
pub fn etr(m: &DMatrix<f64>) -> f64 {
    m.trace().exp()
}

/// Argument of the multivariate gamma function `Gamma_d(beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiGammaArg {
    beta: f64,
    dim: usize,
}

impl MultiGammaArg {
    pub fn new(beta: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let bound = (dim as f64 - 1.0) / 2.0;
        if !(beta > bound) || !beta.is_finite() {
            return Err(Error::Domain(format!(
                "multivariate gamma needs beta > {bound}, got {beta}"
            )));
        }
        Ok(Self { beta, dim })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `ln Gamma_d(beta) = d(d-1)/4 ln(pi) + sum_j ln Gamma(beta - (j-1)/2)`.
pub fn ln_multivariate_gamma(arg: MultiGammaArg) -> f64 {
    let d = arg.dim as f64;
    let mut acc = d * (d - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 0..arg.dim {
        acc += ln_gamma(arg.beta - j as f64 / 2.0);
    }
    acc
}

pub fn multivariate_gamma(arg: MultiGammaArg) -> f64 {
    ln_multivariate_gamma(arg).exp()
}
