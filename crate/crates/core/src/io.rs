//! CSV ingestion, balanced subsampling, matrix/parameter files and report
//! rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manova::{
    compute_sop, dof_map, f_test_from_sop, scalar_statistic, test_statistic_eigs, validate_dofs, DesignTable, FTest,
    Factor, StatisticFunctional,
};
use crate::pvalue::{factor_null_draws, McConfig, PValueEstimate, MIN_REPORTED_N_MC};
use crate::rng::RngStream;
use crate::symmat::{SpdMat, SymMat};

pub const FACTOR_A_COLUMN: &str = "factor_a";
pub const FACTOR_B_COLUMN: &str = "factor_b";

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub a_label: String,
    pub b_label: String,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub response_names: Vec<String>,
    pub rows: Vec<RawRow>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.response_names.len()
    }
}

/// Reads a long-format CSV with `factor_a`, `factor_b` and the named response
/// columns. Row numbers in errors count data rows from 1.
pub fn load_design_csv(path: impl AsRef<Path>, responses: &[String]) -> Result<RawDataset> {
    let path = path.as_ref();
    if responses.is_empty() {
        return Err(Error::InvalidParameter("at least one response column is required".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ia = find(FACTOR_A_COLUMN)?;
    let ib = find(FACTOR_B_COLUMN)?;
    let ir = responses.iter().map(|r| find(r)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut response = Vec::with_capacity(ir.len());
        for (&i, name) in ir.iter().zip(responses) {
            let raw = field(i);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => response.push(v),
                _ => {
                    return Err(Error::UnparseableValue {
                        row,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        rows.push(RawRow {
            a_label: field(ia).to_string(),
            b_label: field(ib).to_string(),
            response,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(RawDataset {
        response_names: responses.to_vec(),
        rows,
    })
}

fn row_order(x: &RawRow, y: &RawRow) -> std::cmp::Ordering {
    x.a_label
        .cmp(&y.a_label)
        .then_with(|| x.b_label.cmp(&y.b_label))
        .then_with(|| {
            x.response
                .iter()
                .zip(&y.response)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

/// Draws `n_per_cell` rows per cell without replacement. Levels are sorted
/// lexicographically and rows are sorted by all fields first, so the result
/// depends only on the multiset of rows and the seed.
pub fn subsample_balanced(data: &RawDataset, n_per_cell: usize, seed: u64) -> Result<DesignTable> {
    if n_per_cell == 0 {
        return Err(Error::InvalidParameter("n_per_cell must be positive".into()));
    }
    let d = data.dim();
    let mut sorted: Vec<&RawRow> = data.rows.iter().collect();
    sorted.sort_by(|x, y| row_order(x, y));

    let mut cells: BTreeMap<(&str, &str), Vec<&RawRow>> = BTreeMap::new();
    for r in &sorted {
        cells.entry((r.a_label.as_str(), r.b_label.as_str())).or_default().push(r);
    }
    let mut a_labels: Vec<&str> = sorted.iter().map(|r| r.a_label.as_str()).collect();
    a_labels.dedup();
    let mut b_labels: Vec<&str> = sorted.iter().map(|r| r.b_label.as_str()).collect();
    b_labels.sort_unstable();
    b_labels.dedup();

    let base = RngStream::new(seed, 0);
    let mut flat = Vec::with_capacity(a_labels.len() * b_labels.len() * n_per_cell * d);
    for (i, a) in a_labels.iter().enumerate() {
        for (j, b) in b_labels.iter().enumerate() {
            let cell = cells.get(&(*a, *b)).map_or(&[][..], |v| v.as_slice());
            if cell.len() < n_per_cell {
                return Err(Error::InsufficientCell {
                    a_label: a.to_string(),
                    b_label: b.to_string(),
                    count: cell.len(),
                    required: n_per_cell,
                });
            }
            let mut rng = base.derive((i * b_labels.len() + j) as u64).rng();
            let mut picked = sample(&mut rng, cell.len(), n_per_cell).into_vec();
            picked.sort_unstable();
            for k in picked {
                flat.extend_from_slice(&cell[k].response);
            }
        }
    }
    DesignTable::with_labels(
        a_labels.len(),
        b_labels.len(),
        n_per_cell,
        d,
        flat,
        a_labels.iter().map(|s| s.to_string()).collect(),
        b_labels.iter().map(|s| s.to_string()).collect(),
    )
}

/// Meaningful lines of a text file: comments (`#`) stripped, blanks skipped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((k + 1, l))
    })
}

fn parse_reals(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse(format!("line {lineno}: `{t}` is not a finite number"))),
        })
        .collect()
}

fn parse_count(line: &str, lineno: usize) -> Result<usize> {
    line.parse::<usize>()
        .map_err(|_| Error::Parse(format!("line {lineno}: expected a positive integer, found `{line}`")))
}

fn read_rows<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {rows} matrix rows, found {r}")))?;
        let vals = parse_reals(line, lineno)?;
        if vals.len() != cols {
            return Err(Error::Parse(format!("line {lineno}: expected {cols} values, found {}", vals.len())));
        }
        for (c, v) in vals.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Parses a symmetric matrix: a line with `d`, then `d` rows of `d` reals.
pub fn parse_matrix(text: &str) -> Result<SymMat> {
    let mut lines = content_lines(text);
    let (lineno, first) = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let d = parse_count(first, lineno)?;
    if d == 0 {
        return Err(Error::Parse("matrix dimension must be positive".into()));
    }
    let m = read_rows(&mut lines, d, d)?;
    if let Some((lineno, _)) = lines.next() {
        return Err(Error::Parse(format!("line {lineno}: unexpected content after matrix")));
    }
    SymMat::from_matrix_checked(&m, SYMMETRY_TOL)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<SymMat> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Sampler parameters: `key value` scalar lines, and matrix blocks opened by a
/// bare `key` line followed by a size line (`d` for a symmetric matrix,
/// `rows cols` otherwise) and the rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamsFile {
    pub scalars: BTreeMap<String, f64>,
    pub matrices: BTreeMap<String, DMatrix<f64>>,
}

impl ParamsFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut lines = content_lines(text);
        while let Some((lineno, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            let key = parts.next().expect("non-empty line").to_string();
            let rest: Vec<&str> = parts.collect();
            if out.scalars.contains_key(&key) || out.matrices.contains_key(&key) {
                return Err(Error::Parse(format!("line {lineno}: duplicate key `{key}`")));
            }
            match rest.as_slice() {
                [] => {
                    let (sl, size) = lines
                        .next()
                        .ok_or_else(|| Error::Parse(format!("line {lineno}: `{key}` has no size line")))?;
                    let dims: Vec<usize> = size
                        .split_whitespace()
                        .map(|t| parse_count(t, sl))
                        .collect::<Result<_>>()?;
                    let (r, c) = match dims.as_slice() {
                        [d] => (*d, *d),
                        [r, c] => (*r, *c),
                        _ => return Err(Error::Parse(format!("line {sl}: expected `d` or `rows cols`"))),
                    };
                    if r == 0 || c == 0 {
                        return Err(Error::Parse(format!("line {sl}: matrix sizes must be positive")));
                    }
                    out.matrices.insert(key, read_rows(&mut lines, r, c)?);
                }
                [v] => {
                    out.scalars.insert(key, parse_reals(v, lineno)?[0]);
                }
                _ => return Err(Error::Parse(format!("line {lineno}: expected `key` or `key value`"))),
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        self.scalars
            .get(key)
            .copied()
            .ok_or_else(|| Error::Parse(format!("missing parameter `{key}`")))
    }

    pub fn count(&self, key: &str) -> Result<usize> {
        let v = self.scalar(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(Error::Parse(format!("parameter `{key}` must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    }

    pub fn matrix(&self, key: &str) -> Option<&DMatrix<f64>> {
        self.matrices.get(key)
    }

    pub fn symmetric(&self, key: &str) -> Result<Option<SymMat>> {
        self.matrix(key)
            .map(|m| SymMat::from_matrix_checked(m, SYMMETRY_TOL))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: Factor,
    pub observed: f64,
    /// Descending eigenvalues of the Beta II statistic matrix.
    pub eigenvalues: Vec<f64>,
    pub dof1: usize,
    pub dof2: usize,
    pub p: PValueEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub functional: StatisticFunctional,
    pub n_mc: usize,
    pub seed: u64,
    pub a: usize,
    pub b: usize,
    pub n: usize,
    pub d: usize,
}

/// Per-response univariate F tests for A, B and AB; `None` where the test is
/// undefined (zero error sum of squares).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnivariateRow {
    pub response: String,
    pub tests: [Option<FTest>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub entries: Vec<ReportEntry>,
    pub config: ConfigEcho,
    pub responses: Vec<String>,
    pub univariate: Vec<UnivariateRow>,
    pub warnings: Vec<String>,
}

impl ReportTable {
    pub fn entry(&self, f: Factor) -> &ReportEntry {
        self.entries.iter().find(|e| e.name == f).expect("all three factors present")
    }

    /// Replaces the default `y1, y2, ...` response names.
    pub fn with_response_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.config.d {
            return Err(Error::DimensionMismatch {
                expected: self.config.d,
                found: names.len(),
            });
        }
        for (row, name) in self.univariate.iter_mut().zip(names) {
            row.response = name.clone();
        }
        self.responses = names.to_vec();
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width text report; p-values shown to four decimals. `verbose`
    /// adds the raw proportions and Monte Carlo standard errors.
    pub fn render_text(&self, verbose: bool) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Balanced design: a = {}, b = {}, n = {} per cell (N = {}), d = {}",
            c.a,
            c.b,
            c.n,
            c.a * c.b * c.n,
            c.d
        );
        let _ = writeln!(
            s,
            "Statistic: {}   Monte Carlo draws: {}   seed: {}",
            c.functional, c.n_mc, c.seed
        );
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s.push('\n');

        let mut rows: Vec<(String, [String; 3])> = Vec::new();
        let label = if c.d == 1 {
            format!("Beta Type II test on {}", self.responses[0])
        } else {
            format!("Beta Type II MANOVA on ({})", self.responses.join(", "))
        };
        rows.push((label, Factor::ALL.map(|f| format!("{:.4}", self.entry(f).p.p_hat))));
        for u in &self.univariate {
            let cells = [0, 1, 2].map(|k| u.tests[k].map_or_else(|| "-".to_string(), |t| format!("{:.4}", t.p)));
            rows.push((format!("Variance-component F test on {}", u.response), cells));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let _ = writeln!(s, "{:<width$}  {:>8} {:>8} {:>8}", "Test", "p_A", "p_B", "p_AB");
        for (name, cells) in &rows {
            let _ = writeln!(s, "{name:<width$}  {:>8} {:>8} {:>8}", cells[0], cells[1], cells[2]);
        }

        s.push('\n');
        let _ = writeln!(s, "{:<6}{:>14}{:>10}{:>10}", "Factor", "observed", "dof1", "dof2");
        for e in &self.entries {
            let _ = writeln!(s, "{:<6}{:>14.6}{:>10}{:>10}", e.name.name(), e.observed, e.dof1, e.dof2);
        }
        if verbose {
            s.push('\n');
            let _ = writeln!(s, "{:<6}{:>12}{:>12}{:>12}{:>10}", "Factor", "p_hat", "p_raw", "mc_se", "extreme");
            for e in &self.entries {
                let _ = writeln!(
                    s,
                    "{:<6}{:>12.6}{:>12.6}{:>12.6}{:>10}",
                    e.name.name(),
                    e.p.p_hat,
                    e.p.p_raw,
                    e.p.mc_se,
                    e.p.n_extreme
                );
                let eig: Vec<String> = e.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
                let _ = writeln!(s, "      eigenvalues: {}", eig.join(" "));
            }
        }
        s
    }
}

/// Eigenvalues of one factor's statistic; an identically zero numerator
/// gives zeros even when the error SOP is singular (constant data).
fn observed_eigs(numerator: &SymMat, sop_e: &SymMat, sigma: &SpdMat) -> Result<Vec<f64>> {
    match test_statistic_eigs(numerator, sop_e, sigma) {
        Err(Error::SingularErrorMatrix) if numerator.frobenius_norm() == 0.0 => Ok(vec![0.0; numerator.dim()]),
        other => other,
    }
}

/// Full test battery on one table: SOPs, eigenvalues, scalar statistics and
/// Monte Carlo p-values, plus univariate F tests per response.
pub fn run_report(table: &DesignTable, cfg: &McConfig, sigma: Option<&SpdMat>) -> Result<ReportTable> {
    let d = table.dim();
    let dofs = dof_map(table.levels_a(), table.levels_b(), table.reps())?;
    validate_dofs(&dofs, d)?;
    if cfg.n_mc == 0 {
        return Err(Error::InvalidParameter("n_mc must be positive".into()));
    }
    let identity;
    let sigma = match sigma {
        Some(s) => {
            if s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.dim(),
                });
            }
            s
        }
        None => {
            identity = SpdMat::identity(d);
            &identity
        }
    };
    let sop = compute_sop(table)?;
    let nulls = factor_null_draws(&dofs, d, cfg.n_mc, cfg.seed)?;

    let mut entries = Vec::with_capacity(3);
    for (fi, f) in Factor::ALL.into_iter().enumerate() {
        let eigenvalues = observed_eigs(sop.for_factor(f), &sop.sop_e, sigma)?;
        let observed = scalar_statistic(&eigenvalues, cfg.functional);
        entries.push(ReportEntry {
            name: f,
            observed,
            eigenvalues,
            dof1: dofs.for_factor(f),
            dof2: dofs.e,
            p: nulls[fi].p_value(observed, cfg.functional),
        });
    }

    let mut univariate = Vec::with_capacity(d);
    for c in 0..d {
        let comp = if d == 1 { table.clone() } else { table.component(c)? };
        let csop = compute_sop(&comp)?;
        let tests = Factor::ALL.map(|f| f_test_from_sop(&csop, &dofs, f).ok());
        univariate.push(UnivariateRow {
            response: format!("y{}", c + 1),
            tests,
        });
    }

    let mut warnings = Vec::new();
    if cfg.n_mc < MIN_REPORTED_N_MC {
        warnings.push(format!(
            "only {} Monte Carlo draws; p-values below {MIN_REPORTED_N_MC} draws are unreliable",
            cfg.n_mc
        ));
    }
    Ok(ReportTable {
        entries,
        config: ConfigEcho {
            functional: cfg.functional,
            n_mc: cfg.n_mc,
            seed: cfg.seed,
            a: table.levels_a(),
            b: table.levels_b(),
            n: table.reps(),
            d,
        },
        responses: (1..=d).map(|c| format!("y{c}")).collect(),
        univariate,
        warnings,
    })
}
