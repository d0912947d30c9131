mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pbce::bounds::{
    cme_asymptotic_mse, convergence_slope, crb_omega, mismatch_gap, pbce_asymptotic_mse, BoundInputs, CbarSource,
};
use pbce::sim::{run_sweep, run_sweep_with_workers, write_results, EstimatorTag, SweepAxis, SweepRecord};
use pbce::validation::{run_suite, Check};
use serde::Serialize;

use config::{parse_estimators, parse_values, Overrides, RunConfig};

/// Parametric Bayesian channel estimation experiments.
#[derive(Parser)]
#[command(name = "pbce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo sweep from a config file and write CSV.
    Sweep(SweepArgs),
    /// Print the CRB and the asymptotic MSE expressions.
    Bounds(BoundsArgs),
    /// Run the fast self-check suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_axis)]
    axis: Option<SweepAxis>,
    /// `start:step:stop` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true, value_parser = value_list)]
    values: Option<List<f64>>,
    /// Comma-separated estimator tags.
    #[arg(long, value_parser = estimator_list)]
    estimators: Option<List<EstimatorTag>>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; the flag wins over the environment, which wins over the file.
    #[arg(long, env = "PBCE_WORKERS")]
    workers: Option<usize>,
}

/// A comma-separated (or range) argument parsed as one value.
#[derive(Clone)]
struct List<T>(Vec<T>);

fn value_list(s: &str) -> Result<List<f64>, String> {
    parse_values(s).map(List)
}

fn estimator_list(s: &str) -> Result<List<EstimatorTag>, String> {
    parse_estimators(s).map(List)
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: pbce::Error| e.to_string())
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n_rx: usize,
    /// Coherence length.
    #[arg(long, default_value_t = 1)]
    t: usize,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    snr_db: f64,
    /// Comma-separated gain variances; a single path with rho = N_R by default.
    #[arg(long, value_parser = value_list)]
    rhos: Option<List<f64>>,
    /// Use E[1/alpha_bar] = T/((T-1) rho) for C_bar instead of alpha_bar = rho.
    #[arg(long)]
    inverse_moment: bool,
    /// Mismatch factor of the believed noise variance.
    #[arg(long, allow_hyphen_values = true)]
    mismatch_eps: Option<f64>,
    /// Fit the log-log slope of the bound gap over the noise-variance grid.
    #[arg(long)]
    slope: bool,
    #[arg(long, value_parser = value_list, default_value = "1e-1,1e-2,1e-3,1e-4")]
    grid: List<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Inject a fault into one check to confirm that it can fail.
    #[arg(long, value_parser = parse_check)]
    perturb: Option<Check>,
    #[arg(long)]
    json: bool,
}

fn parse_check(s: &str) -> Result<Check, String> {
    s.parse().map_err(|e: pbce::Error| e.to_string())
}

enum Failure {
    Config(String),
    Runtime(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Validation(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) | Failure::Validation(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Bounds(a) => bounds(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[derive(Serialize)]
struct GapSlope {
    estimator: EstimatorTag,
    reference: EstimatorTag,
    slope: f64,
    r_squared: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    records: &'a [SweepRecord],
    slopes: Vec<GapSlope>,
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(Failure::Config)?;
    cfg.apply(&Overrides {
        trials: args.trials,
        seed: args.seed,
        axis: args.axis,
        values: args.values.map(|l| l.0),
        estimators: args.estimators.map(|l| l.0),
        output: args.output,
        workers: args.workers,
    });
    let spec = cfg.sweep_spec().map_err(Failure::Config)?;
    if cfg.output.workers == Some(0) {
        return Err(Failure::Config("workers must be at least 1".into()));
    }
    let out = cfg.output.path.clone().unwrap_or_else(|| PathBuf::from("results.csv"));
    let records = match cfg.output.workers {
        Some(w) => run_sweep_with_workers(&spec, w),
        None => run_sweep(&spec),
    }
    .map_err(|e| Failure::Runtime(e.to_string()))?;

    for &v in &spec.axis_values {
        let line: Vec<String> = records
            .iter()
            .filter(|r| r.axis_value == v)
            .map(|r| {
                let fail = if r.failures > 0 { format!(" ({} failed)", r.failures) } else { String::new() };
                format!("{} {:.2} dB{fail}", r.estimator, r.nmse_db)
            })
            .collect();
        println!("{} = {v}: {}", spec.axis, line.join(", "));
    }
    write_results(&records, &out).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("wrote {}", out.display());

    if let Some(path) = &cfg.output.summary {
        let mut slopes = Vec::new();
        if spec.axis == SweepAxis::SnrDb && spec.estimators.contains(&EstimatorTag::BoundCmeAb) {
            for &est in &spec.estimators {
                if est == EstimatorTag::BoundCmeAb {
                    continue;
                }
                match pbce::sim::empirical_gap_slope(&records, est, EstimatorTag::BoundCmeAb) {
                    Ok(fit) => slopes.push(GapSlope {
                        estimator: est,
                        reference: EstimatorTag::BoundCmeAb,
                        slope: fit.slope,
                        r_squared: fit.r_squared,
                    }),
                    Err(e) => log::warn!("no gap slope for {est}: {e}"),
                }
            }
        }
        let json = serde_json::to_string_pretty(&Summary { records: &records, slopes })
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<(), Failure> {
    let rhos = args.rhos.as_ref().map_or_else(|| vec![args.n_rx as f64], |l| l.0.clone());
    let cbar = || if args.inverse_moment { CbarSource::InverseMoment } else { CbarSource::MeanSubstitution };
    let s2 = 10f64.powf(-args.snr_db / 10.0);
    let config = |e: pbce::Error| Failure::Config(e.to_string());
    let inputs = BoundInputs::new(args.n_rx, &rhos, s2, args.t, cbar()).map_err(config)?;
    let crb = crb_omega(args.n_rx, args.t, s2).map_err(config)?;
    let cme = cme_asymptotic_mse(&inputs);
    let pbce = pbce_asymptotic_mse(&inputs);
    let n = args.n_rx as f64;
    println!("n_rx {}  T {}  snr_db {}  noise_var {s2:e}  rhos {rhos:?}", args.n_rx, args.t, args.snr_db);
    println!("{:<16} {:>14} {:>12}", "quantity", "value", "nmse_db");
    println!("{:<16} {:>14.6e} {:>12}", "crb_omega", crb, "");
    println!("{:<16} {:>14.6e} {:>12.3}", "cme_ab", cme, 10.0 * (cme / n).log10());
    println!("{:<16} {:>14.6e} {:>12.3}", "pbce_ab", pbce, 10.0 * (pbce / n).log10());
    println!("{:<16} {:>14.6e} {:>12}", "gap", pbce - cme, "");
    if let Some(eps) = args.mismatch_eps {
        let g = mismatch_gap(&inputs, eps).map_err(config)?;
        println!("{:<16} {:>14.6e} {:>12}", "mismatch_gap", g.exact, "");
        println!("{:<16} {:>14.6e} {:>12}", "mismatch_lead", g.leading, "");
    }
    if args.slope {
        let at = |s2: f64| BoundInputs::new(args.n_rx, &rhos, s2, args.t, cbar());
        for &g in &args.grid.0 {
            at(g).map_err(config)?;
        }
        let fit = convergence_slope(
            |s2| cme_asymptotic_mse(&at(s2).unwrap()),
            |s2| pbce_asymptotic_mse(&at(s2).unwrap()),
            &args.grid.0,
        )
        .map_err(config)?;
        println!("{:<16} {:>14.6} {:>12}", "gap_slope", fit.slope, "");
        println!("{:<16} {:>14.6} {:>12}", "gap_slope_r2", fit.r_squared, "");
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let outcomes = run_suite(args.perturb);
    if args.json {
        let json = serde_json::to_string_pretty(&outcomes).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("{json}");
    } else {
        for o in &outcomes {
            let verdict = if o.passed { "pass" } else { "FAIL" };
            println!("{verdict:<5} {:<20} worst {:.3e} (tolerance {:.1e})  {}", o.check, o.worst, o.tolerance, o.detail);
        }
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.check.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}
