use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bugsize_core::dataio::{self, FitReport};
use bugsize_core::diagnostics::{self, ParameterSummary};
use bugsize_core::sampler::{self, FitContext};
use bugsize_core::simulate::{self, Protocol};
use bugsize_core::{
    ChainSet, ModelConfig, Parameter, PosteriorReport, ReliabilityTable, SamplerConfig,
};
use clap::{Args, Parser, Subcommand};

const OUT_ENV: &str = "BUGSIZE_OUT_DIR";

/// Estimate remaining bugs and release reliability from testing data.
#[derive(Parser, Debug)]
#[command(name = "bugsize", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic campaign with known ground truth.
    Simulate(SimulateArgs),
    /// Run the sampler on a campaign and write draws plus a report.
    Fit(FitArgs),
    /// Print convergence diagnostics and export traces for plotting.
    Diagnose(DiagnoseArgs),
    /// Compute the reliability curve Pr(R < epsilon) from saved draws.
    Reliability(ReliabilityArgs),
    /// Summarize saved draws into a report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 30)]
    missions: usize,
    #[arg(long, default_value_t = 8)]
    phases: usize,
    #[arg(long, default_value_t = 100)]
    true_bugs: usize,
    #[arg(long, default_value_t = 400)]
    max_bugs: usize,
    #[arg(long, default_value_t = 0)]
    t_min: u64,
    #[arg(long, default_value_t = 50)]
    t_max: u64,
    #[arg(long, default_value_t = 1.5)]
    nu: f64,
    #[arg(long, default_value_t = 50.0)]
    dispersion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for campaign.csv and truth.json.
    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Campaign CSV with columns mission,phase,test_cases,bugs_detected.
    #[arg(long)]
    campaign: PathBuf,
    #[arg(long, default_value_t = 3)]
    chains: usize,
    #[arg(long, default_value_t = 50_000)]
    iters: usize,
    /// Defaults to half of --iters.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 1.5)]
    nu: f64,
    #[arg(long, default_value_t = 400)]
    max_bugs: usize,
    #[arg(long, default_value_t = 50.0)]
    dispersion: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of chains running at once.
    #[arg(long)]
    threads: Option<usize>,
    /// 1-based candidates to record (default: 1, 2, M-2, M-1, M).
    #[arg(long, value_delimiter = ',')]
    track: Option<Vec<usize>>,
    /// Also write every candidate's state per kept draw to states.csv.
    #[arg(long)]
    full_state: bool,
    #[arg(long, value_delimiter = ',', default_value = "100,120,140,160,180,200")]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 1.1)]
    rhat_warn: f64,
    /// Exit with status 2 when any R-hat exceeds --rhat-warn.
    #[arg(long)]
    strict: bool,
    #[arg(long, env = OUT_ENV, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    draws: PathBuf,
    /// Parameters to report, e.g. psi,N,S[400] (default: all).
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<String>>,
    /// Directory for per-parameter trace CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.1)]
    rhat_warn: f64,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct ReliabilityArgs {
    #[arg(long)]
    draws: PathBuf,
    /// Strictly increasing thresholds.
    #[arg(long, value_delimiter = ',', default_value = "100,120,140,160,180,200")]
    epsilon: Vec<f64>,
    /// Curve CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,120,140,160,180,200")]
    epsilon: Vec<f64>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Done,
    Unconverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Reliability(args) => reliability(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Unconverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn simulate(args: SimulateArgs) -> Result<Outcome> {
    let model = ModelConfig {
        max_bugs: args.max_bugs,
        nu: args.nu,
        dispersion: args.dispersion,
        ..ModelConfig::default()
    };
    let protocol = Protocol {
        missions: args.missions,
        phases: args.phases,
        true_bugs: args.true_bugs,
        t_min: args.t_min,
        t_max: args.t_max,
    };
    let mut rng = simulate::generator_rng(args.seed);
    let (campaign, truth) = simulate::generate_campaign(&model, &protocol, &mut rng)?;
    ensure_dir(&args.out)?;
    dataio::write_campaign(&campaign, args.out.join("campaign.csv"))?;
    dataio::write_json(&truth, args.out.join("truth.json"))?;
    println!(
        "{} missions x {} phases, {} true bugs, {} detected",
        campaign.missions(),
        campaign.phases(),
        truth.true_bugs,
        truth.detected
    );
    println!("wrote {}", args.out.display());
    Ok(Outcome::Done)
}

fn fit(args: FitArgs) -> Result<Outcome> {
    let campaign = dataio::read_campaign(&args.campaign)?;
    let model = ModelConfig {
        max_bugs: args.max_bugs,
        nu: args.nu,
        dispersion: args.dispersion,
        ..ModelConfig::default()
    };
    let sampler = SamplerConfig {
        chains: args.chains,
        iterations: args.iters,
        burn_in: args.burn_in.unwrap_or(args.iters / 2),
        seed: args.seed,
        thin: args.thin,
        threads: args.threads,
        tracked: args.track,
        keep_full_state: args.full_state,
    };
    let ctx = FitContext::new(&campaign, &model)?;
    let set = sampler::run_all_with(&ctx, &sampler)?;
    let posterior = diagnostics::summarize(&set)?;

    let mut fit_report = FitReport::new(&set, posterior);
    fit_report.campaign = Some((&campaign).into());
    fit_report.model = Some(model);
    fit_report.sampler = Some(sampler);
    fit_report.reliability = Some(ReliabilityTable::compute(&set, &args.epsilon)?);

    ensure_dir(&args.out)?;
    dataio::write_draws(&set, args.out.join("draws.csv"))?;
    if args.full_state {
        dataio::write_states(&set, args.out.join("states.csv"))?;
    }
    dataio::write_report(&fit_report, args.out.join("report.json"))?;

    println!(
        "campaign: {} missions x {} phases, {} bugs detected",
        campaign.missions(),
        campaign.phases(),
        campaign.n_detected()
    );
    print_summary(&set, &fit_report);
    println!("wrote {}", args.out.display());
    Ok(convergence(
        &fit_report.posterior,
        args.rhat_warn,
        args.strict,
    ))
}

fn print_summary(set: &ChainSet, report: &FitReport) {
    println!(
        "chains: {} x {} kept draws",
        set.chains.len(),
        set.chains.first().map_or(0, |c| c.len())
    );
    let posterior = &report.posterior;
    if let Some(n) = posterior.get(Parameter::N) {
        println!(
            "N    mean {:.4}  95% CI ({}, {})",
            n.mean, n.interval.lower, n.interval.upper
        );
    }
    if let Some(psi) = posterior.get(Parameter::Psi) {
        println!("psi  mean {:.4}  sd {:.4}", psi.mean, psi.sd);
    }
    if let Some(r) = posterior.get(Parameter::R) {
        println!("R    mean {:.4}", r.mean);
    }
    match posterior.worst_rhat() {
        Some((p, v)) => println!("worst R-hat: {v:.4} ({p})"),
        None => println!("worst R-hat: n/a (single chain)"),
    }
    if let Some(table) = &report.reliability {
        print_curve(&table.curve());
    }
}

fn print_curve(curve: &[(f64, f64)]) {
    println!("{:>10}  {:>11}", "epsilon", "Pr(R < eps)");
    for (eps, p) in curve {
        println!("{eps:>10}  {p:>11.6}");
    }
}

fn convergence(posterior: &PosteriorReport, threshold: f64, strict: bool) -> Outcome {
    let flagged: Vec<String> = posterior
        .parameters
        .iter()
        .filter_map(|s| {
            s.rhat
                .filter(|r| r.value > threshold || r.value.is_nan())
                .map(|r| (s.parameter, r.value))
        })
        .map(|(p, v)| format!("{p} ({v:.4})"))
        .collect();
    if flagged.is_empty() {
        return Outcome::Done;
    }
    eprintln!(
        "warning: R-hat above {threshold} for {}; run longer chains",
        flagged.join(", ")
    );
    if strict {
        Outcome::Unconverged
    } else {
        Outcome::Done
    }
}

fn trace_file_name(parameter: Parameter) -> String {
    let name: String = parameter
        .to_string()
        .chars()
        .filter_map(|c| match c {
            '[' => Some('_'),
            ']' => None,
            c => Some(c),
        })
        .collect();
    format!("trace_{name}.csv")
}

fn diagnose(args: DiagnoseArgs) -> Result<Outcome> {
    let set = dataio::read_draws(&args.draws)?;
    if set.chains.len() < 2 {
        bail!("need ≥2 chains for R-hat, found {}", set.chains.len());
    }
    let names = match args.params {
        Some(names) => names,
        None => set.parameter_names(),
    };
    let mut parameters = Vec::with_capacity(names.len());
    for name in &names {
        let at = set.position(name.trim())?;
        parameters.push(set.parameters[at]);
    }
    let posterior = diagnostics::summarize_only(&set, &parameters)?;

    println!(
        "{:<14} {:>12} {:>10} {:>9} {:>9} {:>11}",
        "parameter", "mean", "sd", "R-hat", "upper", "ESS"
    );
    for s in &posterior.parameters {
        print_row(s);
    }

    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        for p in &parameters {
            let records = diagnostics::trace_export(&set, &p.to_string())?;
            dataio::write_trace(&records, dir.join(trace_file_name(*p)))?;
        }
        println!("traces written to {}", dir.display());
    }
    Ok(convergence(&posterior, args.rhat_warn, args.strict))
}

fn print_row(s: &ParameterSummary) {
    let (rhat, upper) = s.rhat.map_or(("-".into(), "-".into()), |r| {
        (format!("{:.4}", r.value), format!("{:.4}", r.upper))
    });
    let ess = s.ess.map_or("-".into(), |e| format!("{e:.1}"));
    println!(
        "{:<14} {:>12.4} {:>10.4} {:>9} {:>9} {:>11}",
        s.parameter.to_string(),
        s.mean,
        s.sd,
        rhat,
        upper,
        ess
    );
}

fn reliability(args: ReliabilityArgs) -> Result<Outcome> {
    let set = dataio::read_draws(&args.draws)?;
    let curve = bugsize_core::reliability::reliability_curve(&set, &args.epsilon)?;
    print_curve(&curve);
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        dataio::write_curve(&curve, path)?;
    }
    Ok(Outcome::Done)
}

fn report(args: ReportArgs) -> Result<Outcome> {
    let set = dataio::read_draws(&args.draws)?;
    let posterior = diagnostics::summarize(&set)?;
    let mut fit_report = FitReport::new(&set, posterior);
    fit_report.reliability = Some(ReliabilityTable::compute(&set, &args.epsilon)?);
    print_summary(&set, &fit_report);
    if let Some(path) = &args.out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        dataio::write_report(&fit_report, path)?;
    }
    Ok(Outcome::Done)
}
