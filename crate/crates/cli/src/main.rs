//! `enfp`: fit effect-size priors, tabulate h-curves, compute false-positive
//! bounds, keep spending ledgers and run simulation checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "enfp", version, about = "Expected-number-of-false-positives accounting for trial populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an effect-size prior to trial records and write it as JSON.
    Fit(FitArgs),
    /// Tabulate or plot h(z) = Pr[effect > 0 | z] under a fitted prior.
    Hcurve(HcurveArgs),
    /// Compute tau-hat or omega-hat for a set of trials.
    Bounds {
        #[command(subcommand)]
        mode: BoundsMode,
    },
    /// Create, update and inspect an error-spending ledger.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Simulate a trial population and check the bounds against realized false positives.
    Simulate(SimulateArgs),
    /// Write a synthetic record corpus with exact and censored rows.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RecordFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct RecordsInput {
    /// Trial records (CSV or JSON).
    records: PathBuf,
    /// Overrides detection by file extension.
    #[arg(long, value_enum)]
    format: Option<RecordFormat>,
    /// p-value threshold for censored rows without an explicit bound.
    #[arg(long, default_value_t = 0.05)]
    censor_p: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: RecordsInput,
    /// Where to write the model JSON.
    #[arg(short, long)]
    output: PathBuf,
    /// Bootstrap replicates for a 95% interval on rho-hat; 0 disables.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Where to write the bootstrap result (intervals and h bands) as JSON.
    #[arg(long, requires = "bootstrap")]
    bootstrap_output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    df: Option<usize>,
    /// Penalty constant c0.
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    grid_low: Option<f64>,
    #[arg(long)]
    grid_high: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct ExecArgs {
    /// Run on one thread even when the parallel build is available.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct HcurveArgs {
    /// Model JSON written by `fit`.
    model: PathBuf,
    /// Print h at a single z and exit.
    #[arg(long, allow_hyphen_values = true)]
    at: Option<f64>,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// Bootstrap JSON from `fit --bootstrap-output`; its z grid replaces --from/--to/--step.
    #[arg(long)]
    bands: Option<PathBuf>,
    /// CSV output path; CSV goes to stdout when neither --csv nor --svg is given.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum BoundsMode {
    /// tau-hat from per-trial alpha levels and endpoint structure.
    Frequentist(FreqBoundsArgs),
    /// omega-hat from positive trials and a fitted prior.
    Bayes(BayesBoundsArgs),
    /// Spent amounts recorded in a ledger, recomputed from its entries.
    Ledger { path: PathBuf },
}

#[derive(Args, Debug)]
struct FreqBoundsArgs {
    #[arg(long)]
    rho: f64,
    /// Comma-separated alpha levels of single-endpoint trials.
    #[arg(long, value_delimiter = ',', conflicts_with = "records")]
    alphas: Vec<f64>,
    /// Trial records; alpha comes from nominal_alpha and strata are reported separately.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Per-stratum rho as name=value; strata without one use --rho.
    #[arg(long = "stratum-rho", value_parser = parse_pair)]
    stratum_rho: Vec<(String, f64)>,
}

#[derive(Args, Debug)]
struct BayesBoundsArgs {
    /// Comma-separated h-values of single-endpoint positive trials.
    #[arg(long = "h", value_delimiter = ',', conflicts_with = "records")]
    h_values: Vec<f64>,
    /// Trial records; the positives under each trial's policy contribute.
    #[arg(long, requires = "model")]
    records: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Type A trials use the endpoint with the largest z instead of endpoint 1.
    #[arg(long)]
    tightest: bool,
}

#[derive(Subcommand, Debug)]
enum LedgerAction {
    /// Create a new ledger file.
    Init(LedgerInitArgs),
    /// Frequentist: charge a planned trial if the budget allows it.
    Propose(LedgerProposeArgs),
    /// Record trial outcomes from a records file.
    Record(LedgerRecordArgs),
    /// Record a trial accepted outside its rejection rule.
    Adjust(LedgerAdjustArgs),
    /// Show spent and remaining budget.
    Status {
        path: PathBuf,
        /// Print the status as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct LedgerInitArgs {
    path: PathBuf,
    #[arg(long, value_enum)]
    mode: LedgerModeArg,
    /// tau0 or omega0.
    #[arg(long)]
    budget: f64,
    /// Frequentist rho-hat.
    #[arg(long)]
    rho: Option<f64>,
    /// Bayes: model JSON whose hash the ledger pins.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "stratum-budget", value_parser = parse_pair)]
    stratum_budget: Vec<(String, f64)>,
    #[arg(long = "stratum-rho", value_parser = parse_pair)]
    stratum_rho: Vec<(String, f64)>,
    #[arg(long)]
    tightest: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LedgerModeArg {
    Frequentist,
    Bayes,
}

#[derive(Args, Debug)]
struct Stamp {
    /// Omit the wall-clock timestamp so the file is reproducible.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args, Debug)]
struct LedgerProposeArgs {
    path: PathBuf,
    #[arg(long)]
    trial_id: String,
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[arg(long, default_value = "B")]
    failure: String,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    stratum: Option<String>,
    /// Propose the same trial this many times with ids <trial-id>-1, -2, ...; stops at the first rejection.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[command(flatten)]
    stamp: Stamp,
}

#[derive(Args, Debug)]
struct LedgerRecordArgs {
    path: PathBuf,
    #[command(flatten)]
    input: RecordsInput,
    /// Required for bayes ledgers.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    stamp: Stamp,
}

#[derive(Args, Debug)]
struct LedgerAdjustArgs {
    path: PathBuf,
    #[command(flatten)]
    input: RecordsInput,
    #[arg(long)]
    trial_id: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    note: String,
    #[command(flatten)]
    stamp: Stamp,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file (TOML or JSON).
    scenario: PathBuf,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_trials: Option<usize>,
    /// rho used for tau-hat; defaults to the scenario's true rho.
    #[arg(long)]
    rho: Option<f64>,
    /// Prior used for h-values in omega-hat; defaults to the scenario's true prior.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 1221)]
    n_exact: usize,
    #[arg(long, default_value_t = 172)]
    n_censored: usize,
}

fn parse_pair(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let value = value.trim().parse::<f64>().map_err(|e| format!("{value:?}: {e}"))?;
    Ok((name.trim().to_string(), value))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
