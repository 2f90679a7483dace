//! Balanced two-factor multivariate factorial designs.
//!
//! Model: `Y_ijk = mu + alpha_i + beta_j + (alpha beta)_ij + eps_ijk` with
//! `eps_ijk ~ N_d(0, Sigma)`. Effects are fixed vectors (zero-mean
//! constrained) or zero-mean normal with covariances `Sigma_alpha`,
//! `Sigma_beta`, `Sigma_alphabeta`. In either case the statistic
//! `(V_{S^-1})^{-1/2} S_{S^-1} (V_{S^-1})^{-1/2}` built from a factor's SOP
//! matrix and the error SOP is matrix-variate Beta II under that factor's
//! null.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::dist::standard_normal_matrix;
use crate::error::{Error, Result};
use crate::symmat::{check_dim, conjugate, sorted_eigen, sym_sqrt, SpdMat, SymMat};

/// A balanced `a x b x n` layout of `d`-dimensional responses.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    a: usize,
    b: usize,
    n: usize,
    d: usize,
    /// Flattened `[i][j][k][c]`.
    responses: Vec<f64>,
    a_labels: Vec<String>,
    b_labels: Vec<String>,
}

impl DesignTable {
    pub fn new(a: usize, b: usize, n: usize, d: usize, responses: Vec<f64>) -> Result<Self> {
        let a_labels = (1..=a).map(|i| i.to_string()).collect();
        let b_labels = (1..=b).map(|j| j.to_string()).collect();
        Self::with_labels(a, b, n, d, responses, a_labels, b_labels)
    }

    pub fn with_labels(
        a: usize,
        b: usize,
        n: usize,
        d: usize,
        responses: Vec<f64>,
        a_labels: Vec<String>,
        b_labels: Vec<String>,
    ) -> Result<Self> {
        if a == 0 || b == 0 || n == 0 || d == 0 {
            return Err(Error::UnbalancedDesign(format!(
                "every size must be positive (a={a}, b={b}, n={n}, d={d})"
            )));
        }
        let expected = a * b * n * d;
        if responses.len() != expected {
            return Err(Error::UnbalancedDesign(format!(
                "expected {expected} values for a={a}, b={b}, n={n}, d={d}, got {}",
                responses.len()
            )));
        }
        if a_labels.len() != a || b_labels.len() != b {
            return Err(Error::UnbalancedDesign("label count does not match levels".into()));
        }
        if let Some(pos) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite response at flat index {pos}")));
        }
        Ok(Self {
            a,
            b,
            n,
            d,
            responses,
            a_labels,
            b_labels,
        })
    }

    /// Builds from nested cells `cells[i][j][k]`, each a `d`-vector.
    pub fn from_cells(cells: &[Vec<Vec<Vec<f64>>>]) -> Result<Self> {
        let a = cells.len();
        let b = cells.first().map_or(0, |r| r.len());
        let n = cells.first().and_then(|r| r.first()).map_or(0, |c| c.len());
        let d = cells
            .first()
            .and_then(|r| r.first())
            .and_then(|c| c.first())
            .map_or(0, |y| y.len());
        let mut flat = Vec::with_capacity(a * b * n * d);
        for (i, row) in cells.iter().enumerate() {
            if row.len() != b {
                return Err(Error::UnbalancedDesign(format!("level {i} of A has {} B-levels", row.len())));
            }
            for (j, cell) in row.iter().enumerate() {
                if cell.len() != n {
                    return Err(Error::UnbalancedDesign(format!(
                        "cell ({i}, {j}) has {} replicates, expected {n}",
                        cell.len()
                    )));
                }
                for y in cell {
                    if y.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            found: y.len(),
                        });
                    }
                    flat.extend_from_slice(y);
                }
            }
        }
        Self::new(a, b, n, d, flat)
    }

    pub fn levels_a(&self) -> usize {
        self.a
    }

    pub fn levels_b(&self) -> usize {
        self.b
    }

    pub fn reps(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn a_labels(&self) -> &[String] {
        &self.a_labels
    }

    pub fn b_labels(&self) -> &[String] {
        &self.b_labels
    }

    #[inline]
    pub fn response(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let start = (((i * self.b) + j) * self.n + k) * self.d;
        &self.responses[start..start + self.d]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Response component `c` as a `d = 1` table.
    pub fn component(&self, c: usize) -> Result<Self> {
        if c >= self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: c + 1,
            });
        }
        let values = self.responses.chunks(self.d).map(|y| y[c]).collect();
        Self::with_labels(
            self.a,
            self.b,
            self.n,
            1,
            values,
            self.a_labels.clone(),
            self.b_labels.clone(),
        )
    }
}

/// Degrees of freedom `(a-1, b-1, (a-1)(b-1), ab(n-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dofs {
    pub a: usize,
    pub b: usize,
    pub ab: usize,
    pub e: usize,
}

impl Dofs {
    pub fn for_factor(&self, f: Factor) -> usize {
        match f {
            Factor::A => self.a,
            Factor::B => self.b,
            Factor::AB => self.ab,
        }
    }
}

pub fn dof_map(a: usize, b: usize, n: usize) -> Result<Dofs> {
    if a < 2 || b < 2 || n < 2 {
        return Err(Error::DegenerateDesign(format!(
            "need a, b, n >= 2 (got a={a}, b={b}, n={n})"
        )));
    }
    Ok(Dofs {
        a: a - 1,
        b: b - 1,
        ab: (a - 1) * (b - 1),
        e: a * b * (n - 1),
    })
}

/// Rejects designs whose Beta II statistics would be singular, i.e. any
/// factor or error dof below `d`.
pub fn validate_dofs(dofs: &Dofs, d: usize) -> Result<()> {
    for (name, v) in [("A", dofs.a), ("B", dofs.b), ("AB", dofs.ab), ("error", dofs.e)] {
        if v < d {
            return Err(Error::DegenerateDesign(format!(
                "{name} has {v} degrees of freedom but the response dimension is {d}; \
                 the Beta II statistic needs at least d"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    A,
    B,
    AB,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::A, Factor::B, Factor::AB];

    pub fn name(self) -> &'static str {
        match self {
            Factor::A => "A",
            Factor::B => "B",
            Factor::AB => "AB",
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            Factor::A => 0,
            Factor::B => 1,
            Factor::AB => 2,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SopDecomposition {
    pub sop_a: SymMat,
    pub sop_b: SymMat,
    pub sop_ab: SymMat,
    pub sop_e: SymMat,
    pub sop_total: SymMat,
}

impl SopDecomposition {
    pub fn for_factor(&self, f: Factor) -> &SymMat {
        match f {
            Factor::A => &self.sop_a,
            Factor::B => &self.sop_b,
            Factor::AB => &self.sop_ab,
        }
    }

    /// `||A + B + AB + E - total||_F / ||total||_F`.
    pub fn additivity_error(&self) -> f64 {
        let sum = self
            .sop_a
            .add(&self.sop_b)
            .and_then(|m| m.add(&self.sop_ab))
            .and_then(|m| m.add(&self.sop_e))
            .expect("same dimension");
        sum.rel_frobenius_err(&self.sop_total)
    }
}

/// Number of eigenvalues above `rel_tol * scale`.
pub fn numerical_rank(m: &SymMat, scale: f64, rel_tol: f64) -> usize {
    m.eigenvalues().iter().filter(|&&v| v > rel_tol * scale).count()
}

fn outer_acc(acc: &mut DMatrix<f64>, v: &DVector<f64>, w: f64) {
    let d = v.len();
    for r in 0..d {
        for c in r..d {
            acc[(r, c)] += w * v[r] * v[c];
        }
    }
}

fn upper_to_sym(acc: &DMatrix<f64>) -> SymMat {
    SymMat::from_fn(acc.nrows(), |i, j| acc[(i, j)])
}

/// SOP decomposition of a balanced table. Means are formed first and the
/// outer products accumulated from centred quantities.
pub fn compute_sop(table: &DesignTable) -> Result<SopDecomposition> {
    let (a, b, n, d) = (table.a, table.b, table.n, table.d);
    if n < 2 {
        return Err(Error::DegenerateDesign(format!(
            "n = {n} replicates per cell leaves no error degrees of freedom"
        )));
    }
    let mut cell = vec![DVector::<f64>::zeros(d); a * b];
    for i in 0..a {
        for j in 0..b {
            let m = &mut cell[i * b + j];
            for k in 0..n {
                for (c, y) in table.response(i, j, k).iter().enumerate() {
                    m[c] += y;
                }
            }
            *m /= n as f64;
        }
    }
    let mut row = vec![DVector::<f64>::zeros(d); a];
    let mut col = vec![DVector::<f64>::zeros(d); b];
    let mut grand = DVector::<f64>::zeros(d);
    for i in 0..a {
        for j in 0..b {
            row[i] += &cell[i * b + j];
            col[j] += &cell[i * b + j];
            grand += &cell[i * b + j];
        }
    }
    row.iter_mut().for_each(|r| *r /= b as f64);
    col.iter_mut().for_each(|c| *c /= a as f64);
    grand /= (a * b) as f64;

    let mut sa = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    let mut sab = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    let mut st = DMatrix::zeros(d, d);
    for r in &row {
        outer_acc(&mut sa, &(r - &grand), (b * n) as f64);
    }
    for c in &col {
        outer_acc(&mut sb, &(c - &grand), (a * n) as f64);
    }
    let mut dev = DVector::zeros(d);
    for i in 0..a {
        for j in 0..b {
            let m = &cell[i * b + j];
            let inter = m - &row[i] - &col[j] + &grand;
            outer_acc(&mut sab, &inter, n as f64);
            for k in 0..n {
                let y = table.response(i, j, k);
                for c in 0..d {
                    dev[c] = y[c] - m[c];
                }
                outer_acc(&mut se, &dev, 1.0);
                for c in 0..d {
                    dev[c] = y[c] - grand[c];
                }
                outer_acc(&mut st, &dev, 1.0);
            }
        }
    }
    Ok(SopDecomposition {
        sop_a: upper_to_sym(&sa),
        sop_b: upper_to_sym(&sb),
        sop_ab: upper_to_sym(&sab),
        sop_e: upper_to_sym(&se),
        sop_total: upper_to_sym(&st),
    })
}

/// Eigenvalues (descending) of
/// `(V_{Sigma^-1})^{-1/2} S_{Sigma^-1} (V_{Sigma^-1})^{-1/2}`.
///
/// They coincide with the eigenvalues of `S V^{-1}`, whatever PD `sigma` is
/// supplied.
pub fn test_statistic_eigs(numerator: &SymMat, sop_e: &SymMat, sigma: &SpdMat) -> Result<Vec<f64>> {
    check_dim(numerator.dim(), sop_e.dim())?;
    check_dim(numerator.dim(), sigma.dim())?;
    let sigma_inv = sigma.inverse()?;
    let s = conjugate(numerator, &sigma_inv)?;
    let v = conjugate(sop_e, &sigma_inv)?;
    // Rescale to a unit diagonal: another congruence, so the spectrum is
    // unchanged, but responses on very different scales stay well conditioned.
    let diag = v.diagonal();
    if diag.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::SingularErrorMatrix);
    }
    let w: Vec<f64> = diag.iter().map(|x| x.sqrt().recip()).collect();
    let s = SymMat::from_fn(s.dim(), |i, j| s.get(i, j) * w[i] * w[j]);
    let v = SymMat::from_fn(v.dim(), |i, j| v.get(i, j) * w[i] * w[j]);
    let v = match SpdMat::new_pd(v) {
        Ok(v) => v,
        Err(_) => return Err(Error::SingularErrorMatrix),
    };
    let v_inv_root = v.inv_sqrt()?;
    let stat = crate::symmat::conjugate_by_root(&s, &v_inv_root.to_matrix())?;
    let (mut values, _) = sorted_eigen(stat.to_matrix());
    values.reverse();
    for v in &mut values {
        // round-off below zero on a PSD matrix
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticFunctional {
    Wilks,
    Pillai,
    #[default]
    HotellingLawley,
    Roy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Lower,
    Upper,
}

impl StatisticFunctional {
    pub const ALL: [StatisticFunctional; 4] = [
        StatisticFunctional::Wilks,
        StatisticFunctional::Pillai,
        StatisticFunctional::HotellingLawley,
        StatisticFunctional::Roy,
    ];

    /// Wilks rejects for small values, the others for large ones.
    pub fn tail(self) -> Tail {
        match self {
            StatisticFunctional::Wilks => Tail::Lower,
            _ => Tail::Upper,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StatisticFunctional::Wilks => "wilks",
            StatisticFunctional::Pillai => "pillai",
            StatisticFunctional::HotellingLawley => "hotelling-lawley",
            StatisticFunctional::Roy => "roy",
        }
    }
}

impl fmt::Display for StatisticFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatisticFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "wilks" => Ok(Self::Wilks),
            "pillai" => Ok(Self::Pillai),
            "hotelling-lawley" | "hotelling" | "lawley-hotelling" => Ok(Self::HotellingLawley),
            "roy" => Ok(Self::Roy),
            other => Err(Error::InvalidParameter(format!("unknown statistic functional `{other}`"))),
        }
    }
}

pub fn scalar_statistic(eigs: &[f64], functional: StatisticFunctional) -> f64 {
    match functional {
        StatisticFunctional::Wilks => eigs.iter().map(|l| 1.0 / (1.0 + l)).product(),
        StatisticFunctional::Pillai => eigs.iter().map(|l| l / (1.0 + l)).sum(),
        StatisticFunctional::HotellingLawley => eigs.iter().sum(),
        StatisticFunctional::Roy => eigs.iter().copied().fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FTest {
    pub f: f64,
    pub p: f64,
    pub dof1: usize,
    pub dof2: usize,
}

/// Variance-component F test for one factor of a `d = 1` table.
pub fn univariate_f_test(table: &DesignTable, which: Factor) -> Result<FTest> {
    if table.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: table.dim(),
        });
    }
    let dofs = dof_map(table.a, table.b, table.n)?;
    let sop = compute_sop(table)?;
    f_test_from_sop(&sop, &dofs, which)
}

pub fn f_test_from_sop(sop: &SopDecomposition, dofs: &Dofs, which: Factor) -> Result<FTest> {
    let num = sop.for_factor(which).get(0, 0);
    let den = sop.sop_e.get(0, 0);
    if !(den > 0.0) {
        return Err(Error::DegenerateDesign("error sum of squares is zero".into()));
    }
    let (dof1, dof2) = (dofs.for_factor(which), dofs.e);
    let f = (num / dof1 as f64) / (den / dof2 as f64);
    let dist = FisherSnedecor::new(dof1 as f64, dof2 as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p = if f <= 0.0 { 1.0 } else { dist.sf(f) };
    Ok(FTest { f, p, dof1, dof2 })
}

/// How a factor's effects are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectMode {
    None,
    /// iid `N_d(0, cov)` effects; a zero covariance is allowed.
    Random(SpdMat),
    /// Explicit effect vectors: `a` (or `b`) of them for main effects,
    /// `a * b` in row-major `(i, j)` order for the interaction.
    Fixed(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub a: usize,
    pub b: usize,
    pub n: usize,
    pub error_scale: SpdMat,
    pub effect_a: EffectMode,
    pub effect_b: EffectMode,
    pub effect_ab: EffectMode,
}

const FIXED_TOL: f64 = 1e-12;

fn check_zero_mean<'a>(vs: impl Iterator<Item = &'a DVector<f64>>, what: &str, scale: f64) -> Result<()> {
    let mut acc: Option<DVector<f64>> = None;
    let mut count = 0usize;
    for v in vs {
        acc = Some(match acc {
            None => v.clone(),
            Some(s) => s + v,
        });
        count += 1;
    }
    if let Some(s) = acc {
        let avg = s / count as f64;
        if avg.amax() > FIXED_TOL * scale.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "fixed {what} effects must average to zero (max |mean| = {:e})",
                avg.amax()
            )));
        }
    }
    Ok(())
}

impl SimulationSpec {
    /// No effects at all.
    pub fn null(a: usize, b: usize, n: usize, error_scale: SpdMat) -> Self {
        Self {
            a,
            b,
            n,
            error_scale,
            effect_a: EffectMode::None,
            effect_b: EffectMode::None,
            effect_ab: EffectMode::None,
        }
    }

    pub fn dim(&self) -> usize {
        self.error_scale.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.a == 0 || self.b == 0 || self.n == 0 {
            return Err(Error::InvalidParameter("a, b and n must be positive".into()));
        }
        if !self.error_scale.is_pd() {
            return Err(Error::InvalidParameter("error scale must be positive definite".into()));
        }
        let checks: [(&EffectMode, usize, &str); 3] = [
            (&self.effect_a, self.a, "A"),
            (&self.effect_b, self.b, "B"),
            (&self.effect_ab, self.a * self.b, "AB"),
        ];
        for (mode, count, name) in checks {
            match mode {
                EffectMode::None => {}
                EffectMode::Random(cov) => check_dim(d, cov.dim())?,
                EffectMode::Fixed(vs) => {
                    if vs.len() != count {
                        return Err(Error::InvalidParameter(format!(
                            "fixed {name} effects: expected {count} vectors, got {}",
                            vs.len()
                        )));
                    }
                    for v in vs {
                        check_dim(d, v.len())?;
                    }
                    let scale = vs.iter().map(|v| v.amax()).fold(0.0, f64::max);
                    if name == "AB" {
                        for i in 0..self.a {
                            check_zero_mean(vs[i * self.b..(i + 1) * self.b].iter(), "AB row", scale)?;
                        }
                        for j in 0..self.b {
                            check_zero_mean((0..self.a).map(|i| &vs[i * self.b + j]), "AB column", scale)?;
                        }
                    } else {
                        check_zero_mean(vs.iter(), name, scale)?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct EffectDraw {
    root: Option<DMatrix<f64>>,
}

impl EffectDraw {
    fn new(mode: &EffectMode) -> Self {
        match mode {
            EffectMode::Random(cov) => Self {
                root: Some(sym_sqrt(cov).to_matrix()),
            },
            _ => Self { root: None },
        }
    }

    /// `count` effect vectors as rows of a matrix.
    fn draw<R: Rng + ?Sized>(&self, mode: &EffectMode, count: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
        match (mode, &self.root) {
            (EffectMode::Random(_), Some(root)) => standard_normal_matrix(rng, count, d) * root,
            (EffectMode::Fixed(vs), _) => DMatrix::from_fn(count, d, |r, c| vs[r][c]),
            _ => DMatrix::zeros(count, d),
        }
    }
}

/// Draws one table from the model with `mu = 0`.
pub fn simulate_design<R: Rng + ?Sized>(spec: &SimulationSpec, rng: &mut R) -> Result<DesignTable> {
    spec.validate()?;
    Simulator::new(spec).map(|s| s.draw(rng))
}

/// Reusable simulator with the covariance roots cached.
pub struct Simulator {
    spec: SimulationSpec,
    noise_root: DMatrix<f64>,
    eff: [EffectDraw; 3],
}

impl Simulator {
    pub fn new(spec: &SimulationSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            noise_root: sym_sqrt(&spec.error_scale).to_matrix(),
            eff: [
                EffectDraw::new(&spec.effect_a),
                EffectDraw::new(&spec.effect_b),
                EffectDraw::new(&spec.effect_ab),
            ],
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DesignTable {
        let s = &self.spec;
        let (a, b, n, d) = (s.a, s.b, s.n, s.dim());
        let alpha = self.eff[0].draw(&s.effect_a, a, d, rng);
        let beta = self.eff[1].draw(&s.effect_b, b, d, rng);
        let inter = self.eff[2].draw(&s.effect_ab, a * b, d, rng);
        let noise = standard_normal_matrix(rng, a * b * n, d) * &self.noise_root;
        let mut flat = Vec::with_capacity(a * b * n * d);
        for i in 0..a {
            for j in 0..b {
                for k in 0..n {
                    let row = (i * b + j) * n + k;
                    for c in 0..d {
                        flat.push(alpha[(i, c)] + beta[(j, c)] + inter[(i * b + j, c)] + noise[(row, c)]);
                    }
                }
            }
        }
        DesignTable::new(a, b, n, d, flat).expect("sizes consistent by construction")
    }
}

/// Eigenvalue lists for the three factors with `Sigma = sigma`.
pub fn factor_eigs(sop: &SopDecomposition, sigma: &SpdMat) -> Result<[Vec<f64>; 3]> {
    Ok([
        test_statistic_eigs(&sop.sop_a, &sop.sop_e, sigma)?,
        test_statistic_eigs(&sop.sop_b, &sop.sop_e, sigma)?,
        test_statistic_eigs(&sop.sop_ab, &sop.sop_e, sigma)?,
    ])
}
