//! Command-line front end: `test`, `weights`, `mle`, `quantile` and
//! `simulate`.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::chibar::{
    chibar_pvalue, chibar_quantile, estimate_weights, weights_by_subsets, ChiBarWeights, Dims,
    DEFAULT_WEIGHT_REPS,
};
use crate::divergence::{statistic_s, statistic_t, DivergenceSpec, Family, Lambda, TestOutcome};
use crate::error::{Error, Result};
use crate::estimate::{fit_table, FitOptions, ZeroCellPolicy};
use crate::loglinear::ThetaParams;
use crate::simulate::{run_study, Scenario, SimulationConfig};
use crate::tables::ContingencyTable;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "lrorder", version, about = "Tests of homogeneity against likelihood-ratio ordering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit both models, estimate weights and report every statistic.
    Test(TestArgs),
    /// Estimate chi-bar weights for a table and write them as JSON.
    Weights(WeightsArgs),
    /// Report the two maximum likelihood fits.
    Mle(MleArgs),
    /// Upper quantile of the chi-bar distribution.
    Quantile(QuantileArgs),
    /// Size and power study; writes CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    MonteCarlo,
    Subsets,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV table, one row per treatment.
    #[arg(long)]
    pub input: PathBuf,
    /// Add 0.5 to every cell before fitting.
    #[arg(long)]
    pub zero_cell_correction: bool,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma separated lambda values; `2/3` is kept exact.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = DEFAULT_WEIGHT_REPS)]
    pub weights_reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse weights written by `weights`.
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    /// Level of the reported critical value.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, alias = "reps", default_value_t = DEFAULT_WEIGHT_REPS)]
    pub weights_reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Method::MonteCarlo)]
    pub method: Method,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantileArgs {
    /// Weights JSON; otherwise they are estimated from `--input`.
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub zero_cell_correction: bool,
    #[arg(long, default_value_t = DEFAULT_WEIGHT_REPS)]
    pub weights_reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Preset scenarios 1 to 4, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<usize>,
    /// Custom row sizes such as `5,5,10`; may be repeated.
    #[arg(long)]
    pub sizes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = crate::simulate::default_deltas())]
    pub delta: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long, default_value_t = crate::simulate::DEFAULT_WEIGHT_REPS)]
    pub weight_reps: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Response categories of the truth.
    #[arg(long, default_value_t = 3)]
    pub cols: usize,
    /// Worker threads; the output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub cols: usize,
    pub total: u64,
}

impl InputInfo {
    fn new(path: &Path, text: &str, table: &ContingencyTable) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        let sha256 = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            path: path.display().to_string(),
            sha256,
            rows: table.rows(),
            cols: table.cols(),
            total: table.total(),
        }
    }
}

/// Everything needed to reproduce one analysis.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub version: String,
    pub input: Option<InputInfo>,
    pub zero_cells: ZeroCellPolicy,
    pub seed: u64,
    pub weights_reps: u64,
    pub theta_hat: ThetaParams,
    pub theta_tilde: ThetaParams,
    pub p_bar: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub weights: ChiBarWeights,
    pub outcomes: Vec<TestOutcome>,
    pub alpha: f64,
    /// `None` when every weight sits on the point mass at zero.
    pub quantile: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub lambdas: Vec<Lambda>,
    pub weights_reps: u64,
    pub seed: u64,
    pub zero_cells: ZeroCellPolicy,
    pub alpha: f64,
    /// Precomputed weights; estimated from the table otherwise.
    pub weights: Option<ChiBarWeights>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            lambdas: Lambda::default_grid(),
            weights_reps: DEFAULT_WEIGHT_REPS,
            seed: 0,
            zero_cells: ZeroCellPolicy::Refuse,
            alpha: 0.05,
            weights: None,
        }
    }
}

fn policy(correction: bool) -> ZeroCellPolicy {
    if correction {
        ZeroCellPolicy::ContinuityCorrection
    } else {
        ZeroCellPolicy::Refuse
    }
}

/// The full analysis of one table.
pub fn analyze(table: &ContingencyTable, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let fit_opts = FitOptions { zero_cells: opts.zero_cells, ..Default::default() };
    let fitted = fit_table(table, &fit_opts)?;
    let weights = match &opts.weights {
        Some(w) => {
            let want = Dims { rows: table.rows(), cols: table.cols() };
            if w.dims != want {
                return Err(Error::Config(format!(
                    "weights are for a {}x{} table, input is {}x{}",
                    w.dims.rows, w.dims.cols, want.rows, want.cols
                )));
            }
            w.clone()
        }
        None => estimate_weights(
            fitted.hat.row_fractions(),
            &fitted.hat.conditional()[0],
            opts.weights_reps,
            opts.seed,
        )?,
    };
    let tilde = fitted.fit.fitted.joint();
    let hat = fitted.hat.joint();
    let mut outcomes = Vec::with_capacity(2 * opts.lambdas.len());
    for family in [Family::T, Family::S] {
        for l in &opts.lambdas {
            let spec = DivergenceSpec::Power(*l);
            let statistic = match family {
                Family::T => statistic_t(&fitted.p_bar, tilde, hat, fitted.n, &spec)?,
                Family::S => statistic_s(tilde, hat, fitted.n, &spec)?,
            };
            outcomes.push(TestOutcome {
                family,
                lambda: l.value(),
                lambda_label: l.to_string(),
                statistic,
                p_value: chibar_pvalue(statistic, &weights),
                weights_ref: weights.reference(),
            });
        }
    }
    let quantile = match chibar_quantile(opts.alpha, &weights) {
        Ok(q) => Some(q),
        Err(Error::NonIdentifiable) => None,
        Err(e) => return Err(e),
    };
    Ok(AnalysisReport {
        version: VERSION.to_string(),
        input: None,
        zero_cells: opts.zero_cells,
        seed: weights.seed,
        weights_reps: weights.reps,
        theta_hat: fitted.theta_hat.clone(),
        theta_tilde: fitted.fit.theta.clone(),
        p_bar: fitted.p_bar.clone(),
        p_hat: hat.to_vec(),
        p_tilde: tilde.to_vec(),
        active_set: fitted.fit.active_set.clone(),
        kkt_residual: fitted.fit.kkt_residual,
        weights,
        outcomes,
        alpha: opts.alpha,
        quantile,
    })
}

impl AnalysisReport {
    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if let Some(i) = &self.input {
            let _ = writeln!(out, "input      {} ({}x{}, n = {})", i.path, i.rows, i.cols, i.total);
        }
        let w: Vec<String> = self.weights.w.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, "weights    [{}] ({})", w.join(", "), self.weights.reference());
        match self.quantile {
            Some(q) => {
                let _ = writeln!(out, "critical   {q:.4} at alpha = {}", self.alpha);
            }
            None => {
                let _ = writeln!(out, "critical   undefined at alpha = {}", self.alpha);
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6} {:>8} {:>12} {:>10}", "family", "lambda", "statistic", "p_value");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{:<6} {:>8} {:>12.4} {:>10.4}",
                o.family.to_string(),
                o.lambda_label,
                o.statistic,
                o.p_value
            );
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MleReport {
    pub version: String,
    pub input: Option<InputInfo>,
    pub zero_cells: ZeroCellPolicy,
    pub theta_hat: ThetaParams,
    pub theta_tilde: ThetaParams,
    pub p_hat: Vec<f64>,
    pub p_tilde: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

pub fn mle_report(table: &ContingencyTable, zero_cells: ZeroCellPolicy) -> Result<MleReport> {
    let fitted = fit_table(table, &FitOptions { zero_cells, ..Default::default() })?;
    let fit = fitted.fit;
    Ok(MleReport {
        version: VERSION.to_string(),
        input: None,
        zero_cells,
        theta_hat: fitted.theta_hat,
        theta_tilde: fit.theta,
        p_hat: fitted.hat.joint().to_vec(),
        p_tilde: fit.fitted.joint().to_vec(),
        multipliers: fit.multipliers,
        active_set: fit.active_set,
        kkt_residual: fit.kkt_residual,
        iterations: fit.iterations,
        converged: fit.converged,
        log_likelihood: fit.log_likelihood,
    })
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Json(_)
        | Error::EmptyRow { .. }
        | Error::EmptyColumn { .. }
        | Error::NegativeCount { .. }
        | Error::ZeroCell { .. }
        | Error::Dimension(_)
        | Error::LengthMismatch { .. } => 2,
        Error::NonConvergence(_)
        | Error::NotPositiveDefinite
        | Error::Degenerate { .. }
        | Error::NonIdentifiable
        | Error::InfiniteDivergence
        | Error::OverflowGuard { .. } => 3,
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidPhi(_)
        | Error::NegativeDelta(_)
        | Error::MissingBaseline(_)
        | Error::DimensionTooLarge { .. } => 4,
    }
}

fn read_table(path: &Path) -> Result<(ContingencyTable, InputInfo)> {
    let text = std::fs::read_to_string(path)?;
    let table = ContingencyTable::parse_csv(&text)?;
    let info = InputInfo::new(path, &text, &table);
    Ok((table, info))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn lambdas(arg: &Option<String>) -> Result<Vec<Lambda>> {
    match arg {
        Some(s) => Lambda::parse_list(s),
        None => Ok(Lambda::default_grid()),
    }
}

fn table_weights(table: &ContingencyTable, zero_cells: ZeroCellPolicy, reps: u64, seed: u64, method: Method) -> Result<ChiBarWeights> {
    let fitted = fit_table(table, &FitOptions { zero_cells, ..Default::default() })?;
    let (nu, pi) = (fitted.hat.row_fractions(), &fitted.hat.conditional()[0]);
    match method {
        Method::MonteCarlo => estimate_weights(nu, pi, reps, seed),
        Method::Subsets => weights_by_subsets(nu, pi, reps, seed),
    }
}

pub fn cmd_test(args: &TestArgs) -> Result<AnalysisReport> {
    let (table, info) = read_table(&args.input.input)?;
    let weights = match &args.weights_file {
        Some(p) => Some(ChiBarWeights::from_json(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let opts = AnalysisOptions {
        lambdas: lambdas(&args.lambda)?,
        weights_reps: args.weights_reps,
        seed: args.seed,
        zero_cells: policy(args.input.zero_cell_correction),
        alpha: args.alpha,
        weights,
    };
    let mut report = analyze(&table, &opts)?;
    report.input = Some(info);
    Ok(report)
}

pub fn cmd_weights(args: &WeightsArgs) -> Result<ChiBarWeights> {
    let (table, _) = read_table(&args.input.input)?;
    table_weights(&table, policy(args.input.zero_cell_correction), args.weights_reps, args.seed, args.method)
}

pub fn cmd_mle(args: &MleArgs) -> Result<MleReport> {
    let (table, info) = read_table(&args.input.input)?;
    let mut report = mle_report(&table, policy(args.input.zero_cell_correction))?;
    report.input = Some(info);
    Ok(report)
}

pub fn cmd_quantile(args: &QuantileArgs) -> Result<Option<f64>> {
    let weights = match (&args.weights_file, &args.input) {
        (Some(p), _) => ChiBarWeights::from_json(&std::fs::read_to_string(p)?)?,
        (None, Some(input)) => {
            let (table, _) = read_table(input)?;
            table_weights(
                &table,
                policy(args.zero_cell_correction),
                args.weights_reps,
                args.seed,
                Method::MonteCarlo,
            )?
        }
        (None, None) => return Err(Error::Config("quantile needs --weights-file or --input".into())),
    };
    match chibar_quantile(args.alpha, &weights) {
        Ok(q) => Ok(Some(q)),
        Err(Error::NonIdentifiable) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let mut scenarios = args.scenario.iter().map(|&s| Scenario::preset(s)).collect::<Result<Vec<_>>>()?;
    for s in &args.sizes {
        let sizes = s
            .split(',')
            .map(|t| t.trim().parse::<u64>().map_err(|_| Error::Config(format!("bad size list {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        scenarios.push(Scenario::custom(sizes));
    }
    if scenarios.is_empty() {
        return Err(Error::Config("give at least one --scenario or --sizes".into()));
    }
    let mut config = SimulationConfig::new(scenarios);
    config.deltas = args.delta.clone();
    config.lambdas = lambdas(&args.lambda)?;
    config.reps = args.reps;
    config.weight_reps = args.weight_reps;
    config.alpha = args.alpha;
    config.seed = args.seed;
    config.cols = args.cols;
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let config = simulation_config(args)?;
    let report = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run_study(&config))?,
        None => run_study(&config)?,
    };
    Ok(report.to_csv())
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    crate::json::to_string_pretty(value)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Test(a) => {
            let report = cmd_test(a)?;
            let text = match a.format {
                Format::Json => json(&report)?,
                Format::Table => report.to_table(),
            };
            emit(a.out.as_deref(), &text)
        }
        Command::Weights(a) => emit(a.out.as_deref(), &cmd_weights(a)?.to_json()?),
        Command::Mle(a) => emit(a.out.as_deref(), &json(&cmd_mle(a)?)?),
        Command::Quantile(a) => {
            let text = match cmd_quantile(a)? {
                Some(q) => format!("{q}\n"),
                None => "undefined\n".to_string(),
            };
            emit(None, &text)
        }
        Command::Simulate(a) => emit(a.out.as_deref(), &cmd_simulate(a)?),
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
