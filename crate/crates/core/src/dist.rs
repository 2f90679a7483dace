//! Matrix-variate normal, (noncentral) Wishart, matrix-variate Beta type II
//! and scalar noncentral chi-square distributions.
//!
//! Noncentrality is carried as the symmetric PSD matrix `Delta = Sigma Theta`;
//! the (generally non-symmetric) `Theta = Sigma^{-1} Delta` is derived on
//! demand.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{par_draws, try_par_draws, RngStream, DEFAULT_QUOTA};
use crate::symmat::{assert_pd, check_dim, sorted_eigen, spectral_map, sym_sqrt, SpdMat, SymMat};

fn is_integer_at_least(x: f64, min: usize) -> bool {
    x.fract() == 0.0 && x >= min as f64
}

/// Parameters of `N_{nu x d}(M, I_nu (x) Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormalParams {
    mean: DMatrix<f64>,
    scale: SpdMat,
}

impl MatrixNormalParams {
    pub fn new(mean: DMatrix<f64>, scale: SpdMat) -> Result<Self> {
        check_dim(scale.dim(), mean.ncols())?;
        if mean.nrows() == 0 {
            return Err(Error::InvalidParameter("matrix normal needs at least one row".into()));
        }
        if !scale.is_pd() {
            return Err(Error::NotPd {
                min_eigenvalue: scale.as_sym().eigenvalues()[0],
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean entry".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn centered(rows: usize, scale: SpdMat) -> Result<Self> {
        let d = scale.dim();
        Self::new(DMatrix::zeros(rows, d), scale)
    }

    pub fn rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &SpdMat {
        &self.scale
    }
}

/// Matrix normal sampler with the scale root cached.
#[derive(Debug, Clone)]
pub struct MatrixNormalSampler {
    mean: DMatrix<f64>,
    root: DMatrix<f64>,
}

impl MatrixNormalSampler {
    pub fn new(params: &MatrixNormalParams) -> Self {
        Self {
            mean: params.mean.clone(),
            root: sym_sqrt(&params.scale).to_matrix(),
        }
    }

    /// `M + Z Sigma^{1/2}` with `Z` iid standard normal.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let z = standard_normal_matrix(rng, self.mean.nrows(), self.mean.ncols());
        &self.mean + z * &self.root
    }
}

pub fn sample_matrix_normal<R: Rng + ?Sized>(params: &MatrixNormalParams, rng: &mut R) -> DMatrix<f64> {
    MatrixNormalSampler::new(params).draw(rng)
}

pub(crate) fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `W_d(nu, Sigma, Theta)` with `Theta = Sigma^{-1} Delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    dof: f64,
    scale: SpdMat,
    noncentrality: SpdMat,
}

impl WishartParams {
    pub fn new(dof: f64, scale: SpdMat, noncentrality: SpdMat) -> Result<Self> {
        let d = scale.dim();
        check_dim(d, noncentrality.dim())?;
        if !scale.is_pd() {
            return Err(Error::NotPd {
                min_eigenvalue: scale.as_sym().eigenvalues()[0],
            });
        }
        if !(dof > d as f64 - 1.0) || !dof.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Wishart dof must exceed d - 1 = {}, got {dof}",
                d - 1
            )));
        }
        Ok(Self {
            dof,
            scale,
            noncentrality,
        })
    }

    pub fn central(dof: f64, scale: SpdMat) -> Result<Self> {
        let d = scale.dim();
        Self::new(dof, scale, SpdMat::zeros(d))
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn scale(&self) -> &SpdMat {
        &self.scale
    }

    /// The symmetric form `Delta = Sigma Theta`.
    pub fn noncentrality(&self) -> &SpdMat {
        &self.noncentrality
    }

    pub fn is_central(&self) -> bool {
        self.noncentrality.is_zero()
    }

    /// `Theta = Sigma^{-1} Delta`.
    pub fn theta(&self) -> DMatrix<f64> {
        let inv = self.scale.inverse().expect("scale validated PD");
        inv.to_matrix() * self.noncentrality.to_matrix()
    }
}

/// `nu Sigma + Delta`.
pub fn wishart_mean(params: &WishartParams) -> SymMat {
    params
        .scale
        .as_sym()
        .scale(params.dof)
        .add(params.noncentrality.as_sym())
        .expect("dimensions validated")
}

/// `ln E[etr(T X)]`; errors when `Sigma^{-1} - 2T` is not PD.
pub fn ln_wishart_mgf(params: &WishartParams, t: &SymMat) -> Result<f64> {
    let d = params.dim();
    check_dim(d, t.dim())?;
    let sigma = params.scale.to_matrix();
    let root = sym_sqrt(&params.scale).to_matrix();
    // I - 2TSigma is similar to the symmetric I - 2 S T S (S = Sigma^{1/2}),
    // which is PD iff Sigma^{-1} - 2T is.
    let sym = DMatrix::identity(d, d) - 2.0 * &root * t.to_matrix() * &root;
    let (values, _) = sorted_eigen(crate::symmat::symmetrize(&sym));
    let lmax = values[d - 1].abs().max(1.0);
    if values[0] <= crate::symmat::tolerances().pd * lmax {
        return Err(Error::OutsideDomain);
    }
    let ln_det: f64 = values.iter().map(|v| v.ln()).sum();

    let trace_term = if params.is_central() {
        0.0
    } else {
        let tm = t.to_matrix();
        let k = DMatrix::identity(d, d) - 2.0 * &tm * &sigma;
        let theta = params.theta();
        let solved = k.lu().solve(&theta).ok_or(Error::OutsideDomain)?;
        (&tm * &sigma * solved).trace()
    };
    Ok(trace_term - 0.5 * params.dof * ln_det)
}

/// `etr{T Sigma (I - 2 T Sigma)^{-1} Theta} / |I - 2 T Sigma|^{nu/2}`.
pub fn wishart_mgf(params: &WishartParams, t: &SymMat) -> Result<f64> {
    ln_wishart_mgf(params, t).map(f64::exp)
}

/// Cached sampler for one [`WishartParams`].
///
/// Central laws use the Bartlett decomposition and accept any real
/// `nu > d - 1`; noncentral laws use `N^T N` with `N ~ N(M, I (x) Sigma)` and
/// `M = [Delta^{1/2}; 0]`, which needs an integer `nu >= d`.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    dof: f64,
    dim: usize,
    root: DMatrix<f64>,
    mean_rows: Option<DMatrix<f64>>,
    chi: Vec<ChiSquared<f64>>,
}

impl WishartSampler {
    pub fn new(params: &WishartParams) -> Result<Self> {
        if params.is_central() {
            Self::bartlett(params)
        } else {
            Self::outer_product(params)
        }
    }

    /// Forces the Bartlett path; requires a central law.
    pub fn bartlett(params: &WishartParams) -> Result<Self> {
        if !params.is_central() {
            return Err(Error::InvalidParameter(
                "Bartlett decomposition only samples central Wisharts".into(),
            ));
        }
        let d = params.dim();
        let chi = (0..d)
            .map(|j| ChiSquared::new(params.dof - j as f64))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(Self {
            dof: params.dof,
            dim: d,
            root: sym_sqrt(&params.scale).to_matrix(),
            mean_rows: None,
            chi,
        })
    }

    /// Forces the matrix-normal outer-product path.
    pub fn outer_product(params: &WishartParams) -> Result<Self> {
        let d = params.dim();
        if !is_integer_at_least(params.dof, d) {
            return Err(Error::UnsupportedDof { dof: params.dof, dim: d });
        }
        let nu = params.dof as usize;
        let delta_root = sym_sqrt(&params.noncentrality).to_matrix();
        let mut m = DMatrix::zeros(nu, d);
        m.view_mut((0, 0), (d, d)).copy_from(&delta_root);
        Ok(Self {
            dof: params.dof,
            dim: d,
            root: sym_sqrt(&params.scale).to_matrix(),
            mean_rows: Some(m),
            chi: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// One draw as a dense symmetric matrix.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match &self.mean_rows {
            None => {
                let t = self.bartlett_factor(rng);
                let tt = &t * t.transpose();
                crate::symmat::symmetrize(&(&self.root * tt * &self.root))
            }
            Some(m) => {
                let z = standard_normal_matrix(rng, m.nrows(), self.dim);
                let n = m + z * &self.root;
                crate::symmat::symmetrize(&(n.transpose() * n))
            }
        }
    }

    /// Lower-triangular `T` with `T_jj^2 ~ chi2(nu - j + 1)` and standard
    /// normal entries below the diagonal.
    fn bartlett_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim;
        let mut t = DMatrix::zeros(d, d);
        for i in 0..d {
            t[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                t[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        t
    }
}

/// `N^T N` with `N = [Delta^{1/2}; 0] + Z Sigma^{1/2}` for a noncentrality
/// given as a dense symmetric matrix; tiny negative eigenvalues of `delta`
/// are clipped.
pub(crate) fn draw_outer_product<R: Rng + ?Sized>(
    rows: usize,
    scale_root: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let d = scale_root.nrows();
    let (values, vectors) = sorted_eigen(delta.clone());
    let delta_root = spectral_map(&values, &vectors, |v| v.max(0.0).sqrt());
    let mut n = standard_normal_matrix(rng, rows, d) * scale_root;
    let mut top = n.view_mut((0, 0), (d, d));
    top += &delta_root;
    crate::symmat::symmetrize(&(n.transpose() * n))
}

/// One Wishart draw, validated PSD.
pub fn sample_wishart<R: Rng + ?Sized>(params: &WishartParams, rng: &mut R) -> Result<SpdMat> {
    let x = WishartSampler::new(params)?.draw(rng);
    assert_pd(&SymMat::from_matrix(&x)?)
}

/// `n` Wishart draws partitioned over child streams of `stream`.
pub fn sample_wishart_many(params: &WishartParams, n: usize, stream: RngStream) -> Result<Vec<DMatrix<f64>>> {
    let sampler = WishartSampler::new(params)?;
    Ok(par_draws(n, stream, DEFAULT_QUOTA, |rng| sampler.draw(rng)))
}

/// `B_d(nu1/2, nu2/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaIIParams {
    dof1: f64,
    dof2: f64,
    dim: usize,
}

impl BetaIIParams {
    pub fn new(dof1: f64, dof2: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let bound = dim as f64 - 1.0;
        if !(dof1 > bound && dof2 > bound) || !dof1.is_finite() || !dof2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Beta II dofs must exceed d - 1 = {bound}, got ({dof1}, {dof2})"
            )));
        }
        Ok(Self { dof1, dof2, dim })
    }

    pub fn dof1(&self) -> f64 {
        self.dof1
    }

    pub fn dof2(&self) -> f64 {
        self.dof2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Draws `S2^{-1/2} S1 S2^{-1/2}` for independent `S1 ~ W(nu1, I)`,
/// `S2 ~ W(nu2, I)`.
#[derive(Debug, Clone)]
pub struct BetaIISampler {
    first: WishartSampler,
    second: WishartSampler,
}

impl BetaIISampler {
    pub fn new(params: &BetaIIParams) -> Result<Self> {
        let id = SpdMat::identity(params.dim);
        Ok(Self {
            first: WishartSampler::bartlett(&WishartParams::central(params.dof1, id.clone())?)?,
            second: WishartSampler::bartlett(&WishartParams::central(params.dof2, id)?)?,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let s1 = self.first.draw(rng);
        let s2 = self.second.draw(rng);
        let (values, vectors) = sorted_eigen(s2);
        let inv_root = spectral_map(&values, &vectors, |v| 1.0 / v.sqrt());
        crate::symmat::symmetrize(&(&inv_root * s1 * &inv_root))
    }

    /// Eigenvalues of one draw, sorted descending.
    pub fn draw_eigenvalues<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.draw(rng);
        let (mut values, _) = sorted_eigen(b);
        values.reverse();
        values
    }
}

pub fn sample_beta2<R: Rng + ?Sized>(params: &BetaIIParams, rng: &mut R) -> Result<SpdMat> {
    let b = BetaIISampler::new(params)?.draw(rng);
    assert_pd(&SymMat::from_matrix(&b)?)
}

/// One draw from `chi2_dof(noncen)` as a Poisson(noncen/2) mixture of
/// central chi-squares with `dof + 2K` degrees of freedom.
pub fn sample_noncentral_chisq<R: Rng + ?Sized>(dof: f64, noncen: f64, rng: &mut R) -> Result<f64> {
    NoncentralChiSq::new(dof, noncen).map(|d| d.draw(rng))
}

#[derive(Debug, Clone)]
pub struct NoncentralChiSq {
    dof: f64,
    poisson: Option<Poisson<f64>>,
}

impl NoncentralChiSq {
    pub fn new(dof: f64, noncen: f64) -> Result<Self> {
        if !(dof > 0.0) || !dof.is_finite() {
            return Err(Error::InvalidParameter(format!("chi-square dof must be > 0, got {dof}")));
        }
        if !(noncen >= 0.0) || !noncen.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noncentrality must be >= 0, got {noncen}"
            )));
        }
        let poisson = if noncen > 0.0 {
            Some(Poisson::new(noncen / 2.0).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { dof, poisson })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let extra = self.poisson.as_ref().map_or(0.0, |p| p.sample(rng));
        ChiSquared::new(self.dof + 2.0 * extra)
            .expect("dof validated positive")
            .sample(rng)
    }
}

pub fn sample_noncentral_chisq_many(dof: f64, noncen: f64, n: usize, stream: RngStream) -> Result<Vec<f64>> {
    let dist = NoncentralChiSq::new(dof, noncen)?;
    try_par_draws(n, stream, DEFAULT_QUOTA, |rng| Ok::<_, Error>(dist.draw(rng)))
}
