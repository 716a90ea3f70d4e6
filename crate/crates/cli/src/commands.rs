use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use enfp_core::bayes::{omega_hat, EndpointSelection, PositiveTrialResult};
use enfp_core::frequentist::{tau_hat_mixed, tau_hat_stratified, FreqBoundInput, FreqTrial};
use enfp_core::gmodel::{bootstrap, fit_g, rho_from_g, uniform_grid, BootstrapResult, FitConfig, PriorModel};
use enfp_core::ledger::{Decision, EntryPayload, FileLedger, LedgerHeader, LedgerStatus, DEFAULT_STRATUM};
use enfp_core::posterior::{default_z_grid, h_curve, h_probability, resolve_policy};
use enfp_core::records::{self, observations, CsvOptions};
use enfp_core::sim::{validate_bounds, ScenarioConfig};
use enfp_core::synth::{generate, SynthConfig};
use enfp_core::trial::{classify_rejection, FailureRegion, Outcome, TrialRecord};
use enfp_core::Execution;

use crate::{
    BayesBoundsArgs, BoundsMode, Command, ExecArgs, FitArgs, FreqBoundsArgs, HcurveArgs, LedgerAction,
    LedgerModeArg, RecordFormat, RecordsInput, SimulateArgs, Stamp, SynthArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NonConvergence(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::NonConvergence(m) => write!(f, "fit did not converge: {m}"),
        }
    }
}

impl From<enfp_core::Error> for CliError {
    fn from(e: enfp_core::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Six significant digits, trailing zeros dropped.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..=5).contains(&mag) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn execution(e: &ExecArgs) -> Execution {
    if e.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn timestamp(s: &Stamp) -> Option<u64> {
    (!s.no_timestamp).then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_records(input: &RecordsInput) -> Result<Vec<TrialRecord>> {
    let path = &input.records;
    let file = File::open(path).map_err(io_err(path))?;
    let json = match input.format {
        Some(RecordFormat::Json) => true,
        Some(RecordFormat::Csv) => false,
        None => is_json(path),
    };
    let trials = if json {
        records::read_json(BufReader::new(file))?
    } else {
        records::read_csv(BufReader::new(file), &CsvOptions { censor_p: input.censor_p })?
    };
    Ok(trials)
}

fn read_model(path: &Path) -> Result<PriorModel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    PriorModel::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Hcurve(a) => hcurve(a),
        Command::Bounds { mode } => match mode {
            BoundsMode::Frequentist(a) => bounds_frequentist(a),
            BoundsMode::Bayes(a) => bounds_bayes(a),
            BoundsMode::Ledger { path } => bounds_ledger(&path),
        },
        Command::Ledger { action } => ledger(action),
        Command::Simulate(a) => simulate(a),
        Command::Synth(a) => synth(a),
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let trials = read_records(&a.input)?;
    let obs = observations(&trials);
    let mut cfg = FitConfig::default();
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.df {
        cfg.basis_df = v;
    }
    if let Some(v) = a.c0 {
        cfg.penalty_c0 = v;
    }
    if let Some(v) = a.grid_low {
        cfg.grid_low = v;
    }
    if let Some(v) = a.grid_high {
        cfg.grid_high = v;
    }
    if let Some(v) = a.grid_step {
        cfg.grid_step = v;
    }
    if let Some(v) = a.max_iterations {
        cfg.max_iterations = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = fit_g(&obs, &cfg)?;
    write_file(&a.output, &model.to_json()?)?;
    println!(
        "observations {} ({} exact, {} censored)",
        obs.len(),
        obs.exact_z.len(),
        obs.censored.len()
    );
    println!("rho_hat {}", sig(rho_from_g(&model)));
    let d = &model.diagnostics;
    println!(
        "converged {} after {} iterations, gradient norm {}",
        model.converged,
        d.iterations,
        sig(d.gradient_norm)
    );
    if let Some(ll) = model.log_likelihood {
        println!("log likelihood {}", sig(ll));
    }
    println!("model written to {}", a.output.display());
    if !model.converged {
        return Err(CliError::NonConvergence(d.message.clone()));
    }
    if a.bootstrap > 0 {
        let boot = bootstrap(&obs, &cfg, a.bootstrap, &default_z_grid(), execution(&a.exec))?;
        println!(
            "rho_hat 95% interval [{}, {}] from {} replicates ({} refits failed)",
            sig(boot.rho_ci.0),
            sig(boot.rho_ci.1),
            boot.replicates,
            boot.failures
        );
        if let Some(path) = &a.bootstrap_output {
            let json = serde_json::to_string_pretty(&boot).map_err(|e| CliError::Data(e.to_string()))?;
            write_file(path, &json)?;
            println!("bootstrap written to {}", path.display());
        }
    }
    Ok(())
}

fn hcurve(a: HcurveArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    if let Some(z) = a.at {
        println!("{}", sig(h_probability(&model, z).h));
        return Ok(());
    }
    let curve = match &a.bands {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let boot: BootstrapResult =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            h_curve(&model, &boot.z_grid)?.with_bands(boot.h_low, boot.h_high)?
        }
        None => {
            if !(a.step > 0.0 && a.to > a.from) {
                return Err(CliError::Usage(format!(
                    "need --from < --to and --step > 0, got {} {} {}",
                    a.from, a.to, a.step
                )));
            }
            h_curve(&model, &uniform_grid(a.from, a.to, a.step))?
        }
    };
    if let Some(path) = &a.svg {
        write_file(path, &curve.to_svg())?;
    }
    match &a.csv {
        Some(path) => {
            let file = File::create(path).map_err(io_err(path))?;
            curve.write_csv(BufWriter::new(file))?;
        }
        None if a.svg.is_none() => curve.write_csv(io::stdout().lock())?,
        None => {}
    }
    Ok(())
}

fn bounds_frequentist(a: FreqBoundsArgs) -> Result<()> {
    let overrides: BTreeMap<String, f64> = a.stratum_rho.into_iter().collect();
    if let Some(path) = &a.records {
        let trials = read_records(&RecordsInput { records: path.clone(), format: None, censor_p: 0.05 })?;
        let mut by_stratum: BTreeMap<String, Vec<FreqTrial>> = BTreeMap::new();
        for t in &trials {
            let alpha = t.policy.nominal_alpha.ok_or_else(|| {
                CliError::Data(format!("trial {} has no nominal_alpha; frequentist bounds need one", t.trial_id))
            })?;
            let key = t.stratum.clone().unwrap_or_else(|| DEFAULT_STRATUM.into());
            by_stratum.entry(key).or_default().push(FreqTrial::new(t.m as u32, t.failure_type, alpha));
        }
        if by_stratum.is_empty() {
            return Err(CliError::Data(format!("{}: no trials", path.display())));
        }
        let rho: BTreeMap<String, f64> =
            by_stratum.keys().map(|k| (k.clone(), overrides.get(k).copied().unwrap_or(a.rho))).collect();
        let out = tau_hat_stratified(&by_stratum, &rho)?;
        if out.per_stratum.len() > 1 {
            for (name, tau) in &out.per_stratum {
                println!("stratum {name}: tau_hat {} (rho {}, {} trials)", sig(*tau), sig(rho[name]), by_stratum[name].len());
            }
        }
        println!("tau_hat {}", sig(out.total));
        return Ok(());
    }
    if a.alphas.is_empty() {
        return Err(CliError::Usage("give --alphas or --records".into()));
    }
    let trials = a.alphas.iter().map(|&x| FreqTrial::new(1, FailureRegion::B, x)).collect();
    println!("tau_hat {}", sig(tau_hat_mixed(&FreqBoundInput { rho_hat: a.rho, trials })?));
    Ok(())
}

fn bounds_bayes(a: BayesBoundsArgs) -> Result<()> {
    let selection = if a.tightest { EndpointSelection::Tightest } else { EndpointSelection::default() };
    if !a.h_values.is_empty() {
        let positives: Vec<PositiveTrialResult> = a
            .h_values
            .iter()
            .enumerate()
            .map(|(i, &h)| PositiveTrialResult {
                trial_id: format!("h{}", i + 1),
                m: 1,
                failure_type: FailureRegion::B,
                // z is unknown when only h is given.
                z_values: vec![f64::NAN],
                h_values: vec![h],
                stratum: None,
            })
            .collect();
        for p in &positives {
            p.validate()?;
        }
        println!("omega_hat {}", sig(omega_hat(&positives, selection)?));
        return Ok(());
    }
    let (Some(records_path), Some(model_path)) = (&a.records, &a.model) else {
        return Err(CliError::Usage("give --h or --records with --model".into()));
    };
    let model = read_model(model_path)?;
    let trials = read_records(&RecordsInput { records: records_path.clone(), format: None, censor_p: 0.05 })?;
    let mut by_stratum: BTreeMap<String, Vec<PositiveTrialResult>> = BTreeMap::new();
    let mut unclassified = 0;
    for t in &trials {
        let resolved = TrialRecord { policy: resolve_policy(&t.policy, t.m, &model)?, ..t.clone() };
        match classify_rejection(&resolved) {
            Ok(Outcome::Positive) => {
                let key = t.stratum.clone().unwrap_or_else(|| DEFAULT_STRATUM.into());
                by_stratum.entry(key).or_default().push(PositiveTrialResult::from_record(&resolved, &model)?);
            }
            Ok(Outcome::Negative) => {}
            Err(_) => unclassified += 1,
        }
    }
    let mut total = 0.0;
    let mut positives = 0;
    for (name, list) in &by_stratum {
        let omega = omega_hat(list, selection)?;
        if by_stratum.len() > 1 {
            println!("stratum {name}: omega_hat {} ({} positives)", sig(omega), list.len());
        }
        total += omega;
        positives += list.len();
    }
    println!("omega_hat {} ({} positives of {} trials)", sig(total), positives, trials.len());
    if unclassified > 0 {
        println!("{unclassified} trials without observed z were not classified");
    }
    Ok(())
}

fn bounds_ledger(path: &Path) -> Result<()> {
    let ledger = FileLedger::open(path)?;
    let status = ledger.status();
    print_status(&status);
    if status.mode == enfp_core::ledger::LedgerMode::Bayes {
        for name in status.strata.keys() {
            let omega = ledger.ledger().recomputed_omega(Some(name))?;
            println!("stratum {name}: recomputed omega_hat {}", sig(omega));
        }
    }
    Ok(())
}

fn print_status(s: &LedgerStatus) {
    println!(
        "mode {}  budget {}  spent {}  remaining {}  trials {}  entries {}",
        s.mode,
        sig(s.budget),
        sig(s.spent),
        sig(s.remaining),
        s.n_trials,
        s.entries
    );
    if let Some(r) = s.remaining_total_error {
        println!("remaining total error {}", sig(r));
    }
    if s.adjustment_fraction > 0.0 {
        println!("adjustment fraction {}", sig(s.adjustment_fraction));
    }
    if s.over_budget {
        println!("OVER BUDGET");
    }
    let only_default = s.strata.len() == 1 && s.strata.contains_key(DEFAULT_STRATUM);
    if !only_default {
        for (name, st) in &s.strata {
            println!(
                "stratum {name}: budget {}  spent {}  remaining {}  trials {}{}",
                sig(st.budget),
                sig(st.spent),
                sig(st.remaining),
                st.n_trials,
                if st.over_budget { "  OVER BUDGET" } else { "" }
            );
        }
    }
}

fn ledger(action: LedgerAction) -> Result<()> {
    match action {
        LedgerAction::Init(a) => {
            let mut header = match a.mode {
                LedgerModeArg::Frequentist => {
                    let rho = a.rho.ok_or_else(|| CliError::Usage("frequentist ledgers need --rho".into()))?;
                    LedgerHeader::frequentist(a.budget, rho)
                }
                LedgerModeArg::Bayes => {
                    let path = a.model.as_ref().ok_or_else(|| CliError::Usage("bayes ledgers need --model".into()))?;
                    LedgerHeader::bayes(a.budget, &read_model(path)?)
                }
            };
            header.stratum_budgets.extend(a.stratum_budget);
            header.stratum_rho.extend(a.stratum_rho);
            if a.tightest {
                header.selection = EndpointSelection::Tightest;
            }
            let ledger = FileLedger::create(&a.path, header)?;
            println!("created {}", a.path.display());
            print_status(&ledger.status());
        }
        LedgerAction::Propose(a) => {
            let failure: FailureRegion = a.failure.parse().map_err(|e: enfp_core::Error| CliError::Usage(e.to_string()))?;
            let mut ledger = FileLedger::open(&a.path)?;
            let key = a.stratum.clone().unwrap_or_else(|| DEFAULT_STRATUM.into());
            let budget = ledger.ledger().header().budget_for(&key);
            let mut accepted = 0;
            for k in 1..=a.repeat.max(1) {
                let id = if a.repeat > 1 { format!("{}-{k}", a.trial_id) } else { a.trial_id.clone() };
                match ledger.propose(&id, a.m, failure, a.alpha, a.stratum.clone(), timestamp(&a.stamp))? {
                    Decision::Accepted { projected, .. } => {
                        accepted += 1;
                        if a.repeat == 1 {
                            println!("accepted {id}: spent {} of {}", sig(projected), sig(budget));
                        }
                    }
                    Decision::Rejected { projected } => {
                        println!("rejected {id}: tau_hat would be {} > budget {}", sig(projected), sig(budget));
                        break;
                    }
                }
            }
            if a.repeat > 1 {
                println!("accepted {accepted} of {} proposals", a.repeat);
            }
            print_status(&ledger.status());
        }
        LedgerAction::Record(a) => {
            let mut ledger = FileLedger::open(&a.path)?;
            let model = a.model.as_deref().map(read_model).transpose()?;
            let trials = read_records(&a.input)?;
            // Apply the batch to a copy first so a bad record leaves the file untouched.
            let mut probe = ledger.ledger().clone();
            for t in &trials {
                probe.record_outcome(t, model.as_ref(), None)?;
            }
            for t in &trials {
                let entry = ledger.record_outcome(t, model.as_ref(), timestamp(&a.stamp))?;
                if let EntryPayload::Outcome { outcome, .. } = &entry.payload {
                    println!("{}: {:?}, spend {}", entry.trial_id, outcome, sig(entry.spend_delta));
                }
            }
            print_status(&ledger.status());
        }
        LedgerAction::Adjust(a) => {
            let mut ledger = FileLedger::open(&a.path)?;
            let model = read_model(&a.model)?;
            let trials = read_records(&a.input)?;
            let t = trials
                .iter()
                .find(|t| t.trial_id == a.trial_id)
                .ok_or_else(|| CliError::Data(format!("trial {} not in {}", a.trial_id, a.input.records.display())))?;
            let entry = ledger.record_adjustment(t, &model, &a.note, timestamp(&a.stamp))?;
            println!("adjusted {}: spend {}", entry.trial_id, sig(entry.spend_delta));
            print_status(&ledger.status());
        }
        LedgerAction::Status { path, json } => {
            let status = FileLedger::open(&path)?.status();
            if json {
                println!("{}", serde_json::to_string_pretty(&status).map_err(|e| CliError::Data(e.to_string()))?);
            } else {
                print_status(&status);
            }
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::from_path(&a.scenario)?;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_trials {
        cfg.n_trials = n;
    }
    cfg.validate()?;
    let model = a.model.as_deref().map(read_model).transpose()?;
    let report = validate_bounds(&cfg, a.rho, model.as_ref(), execution(&a.exec))?;
    print!("{}", report.to_table());
    if let Some(path) = &a.output {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(path, &json)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig { seed: a.seed, n_exact: a.n_exact, n_censored: a.n_censored, ..SynthConfig::default() };
    let trials = generate(&cfg)?;
    let file = File::create(&a.output).map_err(io_err(&a.output))?;
    if is_json(&a.output) {
        records::write_json(BufWriter::new(file), &trials)?;
    } else {
        let mut w = BufWriter::new(file);
        records::write_csv(&mut w, &trials)?;
        w.flush().map_err(io_err(&a.output))?;
    }
    let rho: f64 = cfg.prior.theta.iter().zip(&cfg.prior.mass).filter(|(t, _)| **t <= 0.0).map(|(_, g)| g).sum();
    println!(
        "wrote {} records ({} exact, {} censored) to {}; generating rho {}",
        trials.len(),
        cfg.n_exact,
        cfg.n_censored,
        a.output.display(),
        sig(rho)
    );
    Ok(())
}
