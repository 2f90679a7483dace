use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use wishmix::closure::{default_probes, mixture_marginal_params, random_spec, verify_closure, VerifyConfig};
use wishmix::dist::{
    BetaIIParams, BetaIISampler, MatrixNormalParams, MatrixNormalSampler, NoncentralChiSq, WishartParams,
    WishartSampler,
};
use wishmix::io::{load_design_csv, load_matrix, run_report, subsample_balanced, ParamsFile};
use wishmix::manova::{SimulationSpec, StatisticFunctional};
use wishmix::pvalue::{null_calibration, CalibrationMethod, McConfig, DEFAULT_N_MC};
use wishmix::rng::{par_draws, RngStream, DEFAULT_QUOTA};
use wishmix::symmat::{assert_pd, SpdMat};
use wishmix::{Error, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(name = "wishmix", version, about = "Exact random-effects MANOVA and noncentral Wishart mixture tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Balanced two-factor random-effects MANOVA on a long-format CSV.
    Manova(ManovaArgs),
    /// Check the mixture closure law on randomised specs.
    Verify(VerifyArgs),
    /// Draw samples from a distribution and write them as CSV.
    Sample(SampleArgs),
    /// Null calibration of the test battery on simulated designs.
    Calibrate(CalibrateArgs),
}

#[derive(clap::Args)]
struct ManovaArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated response columns; their count is the dimension d.
    #[arg(long, value_delimiter = ',', required = true)]
    responses: Vec<String>,
    #[arg(long)]
    n_per_cell: usize,
    #[arg(long, default_value_t = 0)]
    subsample_seed: u64,
    #[arg(long, default_value_t = DEFAULT_N_MC)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    mc_seed: u64,
    #[arg(long, default_value = "hotelling-lawley")]
    functional: StatisticFunctional,
    /// Matrix file used to standardise the statistic; p-values do not depend on it.
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Also write the full-precision report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Show raw proportions, standard errors and eigenvalues.
    #[arg(long)]
    verbose: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    dof: f64,
    #[arg(long, default_value_t = 200_000)]
    n_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use a central mixing law.
    #[arg(long)]
    central: bool,
    /// Number of randomised specs.
    #[arg(long, default_value_t = 10)]
    specs: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    MatrixNormal,
    Wishart,
    Beta2,
    Chisq,
}

#[derive(clap::Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    dist: Dist,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to a file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CalibrateArgs {
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    datasets: usize,
    #[arg(long, default_value_t = 2000)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Outcome {
    Done,
    VerificationFailed,
}

fn manova(args: ManovaArgs) -> Result<Outcome> {
    let data = load_design_csv(&args.input, &args.responses)?;
    let table = subsample_balanced(&data, args.n_per_cell, args.subsample_seed)?;
    let sigma = args.sigma.as_ref().map(|p| load_matrix(p).and_then(|m| assert_pd(&m))).transpose()?;
    if let Some(s) = &sigma {
        if !s.is_pd() {
            return Err(Error::InvalidParameter("--sigma must be positive definite".into()));
        }
    }
    let cfg = McConfig {
        n_mc: args.n_mc,
        seed: args.mc_seed,
        functional: args.functional,
    };
    let report = run_report(&table, &cfg, sigma.as_ref())?.with_response_names(&args.responses)?;
    print!("{}", report.render_text(args.verbose));
    if let Some(path) = args.json {
        std::fs::write(path, report.to_json()? + "\n")?;
    }
    Ok(Outcome::Done)
}

fn verify(args: VerifyArgs) -> Result<Outcome> {
    let cfg = VerifyConfig::default();
    let mut reports = Vec::with_capacity(args.specs);
    let mut all_pass = true;
    for k in 0..args.specs {
        let stream = RngStream::new(args.seed, k as u64);
        let spec = random_spec(args.dim, args.dof, args.central, &mut stream.derive(0).rng())?;
        let probes = default_probes(&mixture_marginal_params(&spec)?);
        let report = verify_closure(&spec, args.n_draws, &probes, stream, &cfg)?;
        println!("spec {k}");
        println!("{report}");
        println!();
        all_pass &= report.pass;
        reports.push(report);
    }
    println!("overall          {}", if all_pass { "PASS" } else { "FAIL" });
    if let Some(path) = args.json {
        std::fs::write(path, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(if all_pass { Outcome::Done } else { Outcome::VerificationFailed })
}

fn sym_or_zero(p: &ParamsFile, key: &str, d: usize) -> Result<SpdMat> {
    match p.symmetric(key)? {
        Some(m) => assert_pd(&m),
        None => Ok(SpdMat::zeros(d)),
    }
}

fn required_pd(p: &ParamsFile, key: &str) -> Result<SpdMat> {
    let m = p
        .symmetric(key)?
        .ok_or_else(|| Error::Parse(format!("missing matrix `{key}`")))?;
    let s = assert_pd(&m)?;
    if !s.is_pd() {
        return Err(Error::InvalidParameter(format!("`{key}` must be positive definite")));
    }
    Ok(s)
}

fn upper_header(d: usize) -> Vec<String> {
    let mut h = Vec::new();
    for i in 1..=d {
        for j in i..=d {
            h.push(format!("x{i}_{j}"));
        }
    }
    h
}

fn upper_values(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn sample(args: SampleArgs) -> Result<Outcome> {
    let p = ParamsFile::load(&args.params)?;
    let stream = RngStream::new(args.seed, 0);
    let (header, rows): (Vec<String>, Vec<Vec<f64>>) = match args.dist {
        Dist::MatrixNormal => {
            let sigma = required_pd(&p, "sigma")?;
            let d = sigma.dim();
            let mean = match p.matrix("mean") {
                Some(m) => m.clone(),
                None => DMatrix::zeros(p.count("rows")?, d),
            };
            let params = MatrixNormalParams::new(mean, sigma)?;
            let s = MatrixNormalSampler::new(&params);
            let header = (1..=params.rows())
                .flat_map(|r| (1..=d).map(move |c| format!("x{r}_{c}")))
                .collect();
            let rows = par_draws(args.n, stream, DEFAULT_QUOTA, |rng| {
                let m = s.draw(rng);
                m.transpose().iter().copied().collect()
            });
            (header, rows)
        }
        Dist::Wishart => {
            let sigma = required_pd(&p, "sigma")?;
            let d = sigma.dim();
            let params = WishartParams::new(p.scalar("dof")?, sigma, sym_or_zero(&p, "delta", d)?)?;
            let s = WishartSampler::new(&params)?;
            let rows = par_draws(args.n, stream, DEFAULT_QUOTA, |rng| upper_values(&s.draw(rng)));
            (upper_header(d), rows)
        }
        Dist::Beta2 => {
            let d = p.count("dim")?;
            let params = BetaIIParams::new(p.scalar("dof1")?, p.scalar("dof2")?, d)?;
            let s = BetaIISampler::new(&params)?;
            let rows = par_draws(args.n, stream, DEFAULT_QUOTA, |rng| upper_values(&s.draw(rng)));
            (upper_header(d), rows)
        }
        Dist::Chisq => {
            let noncen = p.scalars.get("noncen").copied().unwrap_or(0.0);
            let s = NoncentralChiSq::new(p.scalar("dof")?, noncen)?;
            let rows = par_draws(args.n, stream, DEFAULT_QUOTA, |rng| vec![s.draw(rng)]);
            (vec!["x".to_string()], rows)
        }
    };
    let sink: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&header)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(Outcome::Done)
}

fn calibrate(args: CalibrateArgs) -> Result<Outcome> {
    let spec = SimulationSpec::null(args.a, args.b, args.n, SpdMat::identity(args.dim));
    let cfg = McConfig {
        n_mc: args.n_mc,
        seed: args.seed,
        functional: StatisticFunctional::default(),
    };
    let summary = null_calibration(&spec, args.datasets, &cfg, RngStream::new(args.seed, 1))?;
    println!(
        "Null calibration: a = {}, b = {}, n = {}, d = {}, {} datasets, {} Monte Carlo draws",
        args.a, args.b, args.n, args.dim, summary.n_datasets, args.n_mc
    );
    println!(
        "{:<7}{:<18}{:>9}{:>9}{:>9}{:>9}{:>10}",
        "Factor", "Method", "1%", "5%", "10%", "KS", "KS p"
    );
    for e in &summary.entries {
        let method = match e.method {
            CalibrationMethod::BetaII(f) => f.to_string(),
            CalibrationMethod::FTest => "F".to_string(),
        };
        println!(
            "{:<7}{:<18}{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>10.4}",
            e.factor.name(),
            method,
            e.rejection_rates[0],
            e.rejection_rates[1],
            e.rejection_rates[2],
            e.ks,
            e.ks_pvalue
        );
    }
    if let Some(path) = args.json {
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Manova(a) => manova(a),
        Command::Verify(a) => verify(a),
        Command::Sample(a) => sample(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => {
            eprintln!("error: verification failed");
            ExitCode::from(EXIT_VERIFICATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
