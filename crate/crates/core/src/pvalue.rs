//! Monte Carlo p-values under the matrix-variate Beta II null, and
//! null-calibration runs over simulated designs.

use rayon::prelude::*;
use serde::Serialize;

use crate::dist::{BetaIIParams, BetaIISampler};
use crate::error::{Error, Result};
use crate::manova::{
    compute_sop, dof_map, f_test_from_sop, factor_eigs, scalar_statistic, validate_dofs, Dofs, Factor,
    SimulationSpec, Simulator, StatisticFunctional, Tail,
};
use crate::rng::{par_draws, RngStream, DEFAULT_QUOTA};
use crate::stats::{ks_pvalue_one_sample, ks_uniform};
use crate::symmat::SpdMat;

pub const DEFAULT_N_MC: usize = 10_000;
/// Below this many draws a p-value is flagged as unreliable.
pub const MIN_REPORTED_N_MC: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub functional: StatisticFunctional,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_mc: DEFAULT_N_MC,
            seed: 0,
            functional: StatisticFunctional::default(),
        }
    }
}

impl McConfig {
    pub fn is_reportable(&self) -> bool {
        self.n_mc >= MIN_REPORTED_N_MC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValueEstimate {
    /// `(1 + n_extreme) / (1 + n_mc)`.
    pub p_hat: f64,
    /// `sqrt(p_hat (1 - p_hat) / n_mc)`.
    pub mc_se: f64,
    pub n_mc: usize,
    pub n_extreme: usize,
    /// Raw proportion `n_extreme / n_mc`.
    pub p_raw: f64,
}

impl PValueEstimate {
    pub fn from_counts(n_extreme: usize, n_mc: usize) -> Self {
        let p_hat = (1 + n_extreme) as f64 / (1 + n_mc) as f64;
        let mc_se = if n_mc > 0 {
            (p_hat * (1.0 - p_hat) / n_mc as f64).sqrt()
        } else {
            0.0
        };
        let p_raw = if n_mc > 0 { n_extreme as f64 / n_mc as f64 } else { 1.0 };
        Self {
            p_hat,
            mc_se,
            n_mc,
            n_extreme,
            p_raw,
        }
    }
}

/// Stream for the null draw set of a `(dof1, dof2, d)` triple. Factors whose
/// triples coincide share one draw set; all others get independent ones.
pub fn null_stream(seed: u64, dof1: f64, dof2: f64, d: usize) -> RngStream {
    RngStream::new(seed, 0)
        .derive(dof1.to_bits())
        .derive(dof2.to_bits())
        .derive(d as u64)
}

/// Eigenvalue lists of `n_mc` draws from `B_d(dof1/2, dof2/2)`.
#[derive(Debug, Clone)]
pub struct NullDraws {
    eigs: Vec<Vec<f64>>,
}

impl NullDraws {
    pub fn generate(params: &BetaIIParams, n_mc: usize, stream: RngStream) -> Result<Self> {
        let sampler = BetaIISampler::new(params)?;
        let eigs = par_draws(n_mc, stream, DEFAULT_QUOTA, |rng| sampler.draw_eigenvalues(rng));
        Ok(Self { eigs })
    }

    pub fn len(&self) -> usize {
        self.eigs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigs.is_empty()
    }

    pub fn eigenvalues(&self) -> &[Vec<f64>] {
        &self.eigs
    }

    pub fn statistics(&self, functional: StatisticFunctional) -> Vec<f64> {
        self.eigs.iter().map(|e| scalar_statistic(e, functional)).collect()
    }

    /// Add-one p-value; ties count as extreme.
    pub fn p_value(&self, observed: f64, functional: StatisticFunctional) -> PValueEstimate {
        let tail = functional.tail();
        let n_extreme = self
            .eigs
            .iter()
            .filter(|e| {
                let s = scalar_statistic(e, functional);
                match tail {
                    Tail::Upper => s >= observed,
                    Tail::Lower => s <= observed,
                }
            })
            .count();
        PValueEstimate::from_counts(n_extreme, self.eigs.len())
    }
}

pub fn mc_pvalue(observed: f64, dof1: f64, dof2: f64, d: usize, cfg: &McConfig) -> Result<PValueEstimate> {
    let params = BetaIIParams::new(dof1, dof2, d)?;
    if cfg.n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be positive".into()));
    }
    let draws = NullDraws::generate(&params, cfg.n_mc, null_stream(cfg.seed, dof1, dof2, d))?;
    Ok(draws.p_value(observed, cfg.functional))
}

/// Null draw sets for the three factor tests of one design.
pub fn factor_null_draws(dofs: &Dofs, d: usize, n_mc: usize, seed: u64) -> Result<[NullDraws; 3]> {
    let gen = |f: Factor| {
        let dof1 = dofs.for_factor(f) as f64;
        let dof2 = dofs.e as f64;
        NullDraws::generate(&BetaIIParams::new(dof1, dof2, d)?, n_mc, null_stream(seed, dof1, dof2, d))
    };
    Ok([gen(Factor::A)?, gen(Factor::B)?, gen(Factor::AB)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "functional")]
pub enum CalibrationMethod {
    BetaII(StatisticFunctional),
    /// Univariate F test, `d = 1` only.
    FTest,
}

pub const CALIBRATION_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationEntry {
    pub factor: Factor,
    pub method: CalibrationMethod,
    pub n: usize,
    /// Rejection rates at [`CALIBRATION_LEVELS`].
    pub rejection_rates: [f64; 3],
    pub ks: f64,
    pub ks_pvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CalibrationSummary {
    pub n_datasets: usize,
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationSummary {
    pub fn entry(&self, factor: Factor, method: CalibrationMethod) -> Option<&CalibrationEntry> {
        self.entries.iter().find(|e| e.factor == factor && e.method == method)
    }
}

fn summarize(factor: Factor, method: CalibrationMethod, ps: &[f64]) -> CalibrationEntry {
    let n = ps.len();
    let rate = |level: f64| ps.iter().filter(|&&p| p <= level).count() as f64 / n as f64;
    let ks = ks_uniform(ps);
    CalibrationEntry {
        factor,
        method,
        n,
        rejection_rates: CALIBRATION_LEVELS.map(rate),
        ks,
        ks_pvalue: ks_pvalue_one_sample(ks, n),
    }
}

/// Simulates `n_datasets` tables from `spec` and tests all three factors on
/// each, with every functional (plus the univariate F test when `d = 1`).
/// Dataset `k` uses `stream.derive(k)` for the data and a Monte Carlo seed
/// derived from `cfg.seed` and `k` for its null draws.
pub fn null_calibration(
    spec: &SimulationSpec,
    n_datasets: usize,
    cfg: &McConfig,
    stream: RngStream,
) -> Result<CalibrationSummary> {
    if n_datasets == 0 {
        return Ok(CalibrationSummary::default());
    }
    let d = spec.dim();
    let dofs = dof_map(spec.a, spec.b, spec.n)?;
    validate_dofs(&dofs, d)?;
    let sim = Simulator::new(spec)?;
    let identity = SpdMat::identity(d);
    let methods: Vec<CalibrationMethod> = StatisticFunctional::ALL
        .iter()
        .map(|&f| CalibrationMethod::BetaII(f))
        .chain((d == 1).then_some(CalibrationMethod::FTest))
        .collect();

    // per dataset: [factor][method] p-values
    let per_dataset: Vec<Result<Vec<Vec<f64>>>> = (0..n_datasets as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.derive(k).rng();
            let table = sim.draw(&mut rng);
            let sop = compute_sop(&table)?;
            let eigs = factor_eigs(&sop, &identity)?;
            let mc_seed = RngStream::new(cfg.seed, k).derive(0x6e75_6c6c).stream_index;
            let nulls = factor_null_draws(&dofs, d, cfg.n_mc, mc_seed)?;
            let mut out = Vec::with_capacity(3);
            for (fi, factor) in Factor::ALL.iter().enumerate() {
                let mut ps = Vec::with_capacity(methods.len());
                for m in &methods {
                    ps.push(match m {
                        CalibrationMethod::BetaII(func) => {
                            nulls[fi].p_value(scalar_statistic(&eigs[fi], *func), *func).p_hat
                        }
                        CalibrationMethod::FTest => f_test_from_sop(&sop, &dofs, *factor)?.p,
                    });
                }
                out.push(ps);
            }
            Ok(out)
        })
        .collect();

    let mut collected = Vec::with_capacity(n_datasets);
    for r in per_dataset {
        collected.push(r?);
    }
    let mut entries = Vec::new();
    for (fi, factor) in Factor::ALL.iter().enumerate() {
        for (mi, m) in methods.iter().enumerate() {
            let ps: Vec<f64> = collected.iter().map(|ds| ds[fi][mi]).collect();
            entries.push(summarize(*factor, *m, &ps));
        }
    }
    Ok(CalibrationSummary { n_datasets, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manova::EffectMode;
    use crate::stats::ks_uniform;
    use crate::symmat::SymMat;

    fn cfg(n_mc: usize, seed: u64, functional: StatisticFunctional) -> McConfig {
        McConfig { n_mc, seed, functional }
    }

    #[test]
    fn minimal_statistic_gives_p_one() {
        let p = mc_pvalue(0.0, 4.0, 20.0, 2, &cfg(2000, 1, StatisticFunctional::HotellingLawley)).unwrap();
        assert_eq!(p.n_extreme, 2000);
        assert_eq!(p.p_hat, 1.0);
        assert_eq!(p.mc_se, 0.0);
    }

    #[test]
    fn saturated_tail() {
        let p = mc_pvalue(1e12, 4.0, 20.0, 2, &cfg(2000, 1, StatisticFunctional::Roy)).unwrap();
        assert_eq!(p.n_extreme, 0);
        assert_eq!(p.p_hat, 1.0 / 2001.0);
        assert_eq!(p.p_raw, 0.0);
        // wilks is lower-tailed: 0 is below every draw
        let p = mc_pvalue(0.0, 4.0, 20.0, 2, &cfg(2000, 1, StatisticFunctional::Wilks)).unwrap();
        assert_eq!(p.n_extreme, 0);
    }

    #[test]
    fn se_formula() {
        let p = PValueEstimate::from_counts(99, 999);
        assert_eq!(p.p_hat, 0.1);
        assert!((p.mc_se - (0.1f64 * 0.9 / 999.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_observed() {
        let params = BetaIIParams::new(4.0, 30.0, 2).unwrap();
        let draws = NullDraws::generate(&params, 3000, RngStream::new(50, 0)).unwrap();
        for f in StatisticFunctional::ALL {
            let stats = draws.statistics(f);
            let mut grid: Vec<f64> = stats.iter().step_by(97).copied().collect();
            grid.sort_by(f64::total_cmp);
            let ps: Vec<f64> = grid.iter().map(|&o| draws.p_value(o, f).p_hat).collect();
            for w in ps.windows(2) {
                match f.tail() {
                    Tail::Upper => assert!(w[1] <= w[0]),
                    Tail::Lower => assert!(w[1] >= w[0]),
                }
            }
            for p in ps {
                assert!((1.0 / 3001.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let c = cfg(5000, 9, StatisticFunctional::Pillai);
        let a = mc_pvalue(0.3, 4.0, 40.0, 2, &c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_pvalue(0.3, 4.0, 40.0, 2, &c).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn self_calibration() {
        // observed statistics drawn from the null itself
        let params = BetaIIParams::new(4.0, 120.0, 2).unwrap();
        let observed = NullDraws::generate(&params, 500, RngStream::new(51, 7)).unwrap();
        let f = StatisticFunctional::HotellingLawley;
        let ps: Vec<f64> = observed
            .statistics(f)
            .iter()
            .enumerate()
            .map(|(k, &o)| mc_pvalue(o, 4.0, 120.0, 2, &cfg(2000, 1000 + k as u64, f)).unwrap().p_hat)
            .collect();
        let ks = ks_uniform(&ps);
        assert!(ks < 0.06, "KS {ks}");
    }

    #[test]
    fn calibration_empty() {
        let spec = SimulationSpec::null(5, 6, 5, SpdMat::identity(2));
        let s = null_calibration(&spec, 0, &McConfig::default(), RngStream::new(1, 0)).unwrap();
        assert_eq!(s.n_datasets, 0);
        assert!(s.entries.is_empty());
    }

    #[test]
    fn calibration_power_for_strong_effect() {
        let mut spec = SimulationSpec::null(5, 6, 5, SpdMat::identity(2));
        spec.effect_a = EffectMode::Random(SpdMat::new_pd(SymMat::identity(2).scale(10.0)).unwrap());
        let s = null_calibration(&spec, 200, &cfg(1000, 3, StatisticFunctional::HotellingLawley), RngStream::new(52, 0))
            .unwrap();
        let e = s
            .entry(Factor::A, CalibrationMethod::BetaII(StatisticFunctional::HotellingLawley))
            .unwrap();
        assert!(e.rejection_rates[1] >= 0.99, "{:?}", e);
    }

    #[test]
    fn calibration_rejects_invalid_dimension() {
        let spec = SimulationSpec::null(2, 6, 5, SpdMat::identity(2));
        assert!(null_calibration(&spec, 5, &McConfig::default(), RngStream::new(1, 0)).is_err());
    }
}
