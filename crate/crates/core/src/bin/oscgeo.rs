use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oscgeo::pipeline::{self, PipelineConfig, OUT_DIR_ENV};
use oscgeo::simulate::{observe, simulate_sde, write_price_csv, DriftSpec};
use oscgeo::Error;

/// Oscillator estimation and trajectory-geometry pipeline.
#[derive(Parser)]
#[command(name = "oscgeo", version, about)]
struct Cli {
    /// Run the verification battery instead of a pipeline run.
    #[arg(long, global = true, default_value_t = false)]
    selfcheck: bool,

    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a price CSV, fit, filter and emit all artifacts.
    Run(RunArgs),
    /// Run the built-in verification battery and write selfcheck.json.
    Selfcheck(SelfcheckArgs),
    /// Write a synthetic oscillator price CSV for end-to-end testing.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Input CSV with header `date,price`.
    #[arg(long)]
    input: Option<String>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: Option<String>,
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Time step between consecutive rows.
    #[arg(long)]
    dt: Option<f64>,
    /// Fraction of initial filtered steps to discard.
    #[arg(long)]
    burn_in_fraction: Option<f64>,
    /// Iteration budget for the likelihood search.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Simplex-spread convergence tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of optimizer starts.
    #[arg(long)]
    multi_start: Option<usize>,
    #[arg(long)]
    init_sigma1: Option<f64>,
    #[arg(long)]
    init_sigma2: Option<f64>,
    #[arg(long)]
    init_sigma_eps: Option<f64>,
    #[arg(long)]
    init_theta0: Option<f64>,
    #[arg(long)]
    init_theta1: Option<f64>,
    #[arg(long)]
    init_theta2: Option<f64>,
    #[arg(long)]
    init_theta3: Option<f64>,
    /// Fixed geodesic tolerance (default: median-based).
    #[arg(long)]
    geodesic_tol: Option<f64>,
    /// Median fraction defining the default geodesic tolerance.
    #[arg(long)]
    geodesic_median_fraction: Option<f64>,
    /// Seed for multi-start perturbations.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct SelfcheckArgs {
    /// Output directory for selfcheck.json and scratch files.
    #[arg(long)]
    out_dir: Option<String>,
    /// Geodesic tolerance knob passed into the battery.
    #[arg(long)]
    geodesic_tol: Option<f64>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SimulateArgs {
    /// Destination CSV path.
    #[arg(long)]
    output: String,
    /// Drift: "damped" (-x1 - 0.5 x2), "harmonic" (-x1), "vdp" (van der Pol).
    #[arg(long, default_value = "damped")]
    drift: String,
    #[arg(long, default_value_t = 0.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0.05)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.001)]
    sigma_eps: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    x1_0: f64,
    #[arg(long, default_value_t = 0.0)]
    x2_0: f64,
    /// First synthetic calendar date, YYYY-MM-DD.
    #[arg(long, default_value = "1990-01-01")]
    start_date: String,
    /// Base price mapped to z = 0.
    #[arg(long, default_value_t = 100.0)]
    base_price: f64,
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, Error> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &args.input {
        config.input = v.clone();
    }
    if let Some(v) = &args.out_dir {
        config.out_dir = v.clone();
    }
    if let Some(v) = args.dt {
        config.dt = v;
    }
    if let Some(v) = args.burn_in_fraction {
        config.burn_in_fraction = v;
    }
    if let Some(v) = args.max_iter {
        config.max_iter = v;
    }
    if let Some(v) = args.tol {
        config.tol = v;
    }
    if let Some(v) = args.multi_start {
        config.multi_start = v;
    }
    if let Some(v) = args.init_sigma1 {
        config.init_sigma1 = v;
    }
    if let Some(v) = args.init_sigma2 {
        config.init_sigma2 = v;
    }
    if let Some(v) = args.init_sigma_eps {
        config.init_sigma_eps = v;
    }
    if let Some(v) = args.init_theta0 {
        config.init_theta0 = v;
    }
    if let Some(v) = args.init_theta1 {
        config.init_theta1 = v;
    }
    if let Some(v) = args.init_theta2 {
        config.init_theta2 = v;
    }
    if let Some(v) = args.init_theta3 {
        config.init_theta3 = v;
    }
    if let Some(v) = args.geodesic_tol {
        config.geodesic_tol = Some(v);
    }
    if let Some(v) = args.geodesic_median_fraction {
        config.geodesic_median_fraction = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    // environment override for the output directory
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            config.out_dir = dir;
        }
    }
    Ok(config)
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let config = build_config(args)?;
    let output = pipeline::run_pipeline(&config)?;
    println!(
        "fitted: sigma1={:.6} sigma2={:.6} sigma_eps={:.6} theta=({:.6}, {:.6}, {:.6}, {:.6})",
        output.fit.params.sigma1,
        output.fit.params.sigma2,
        output.fit.params.sigma_eps,
        output.fit.params.theta0,
        output.fit.params.theta1,
        output.fit.params.theta2,
        output.fit.params.theta3,
    );
    println!(
        "log_likelihood={:.6} converged={} iterations={}",
        output.fit.log_likelihood, output.fit.converged, output.fit.iterations
    );
    println!(
        "emitted {} rows across {} years; geodesic tolerance {:.6e}",
        output.rows.len(),
        output.years.len(),
        output.geodesic_tol
    );
    for path in &output.written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> Result<bool, Error> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &args.out_dir {
        config.out_dir = dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            config.out_dir = dir;
        }
    }
    if let Some(t) = args.geodesic_tol {
        config.geodesic_tol = Some(t);
    }
    let (path, all_passed) = pipeline::emit_selfcheck(&config)?;
    println!("report: {}", path.display());
    Ok(all_passed)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let drift = match args.drift.as_str() {
        "damped" => DriftSpec::damped_oscillator(),
        "harmonic" => DriftSpec::harmonic(),
        "vdp" => DriftSpec::van_der_pol(1.0),
        other => {
            return Err(Error::invalid(format!(
                "unknown drift {other:?}, expected damped|harmonic|vdp"
            )))
        }
    };
    let path = simulate_sde(
        &drift,
        args.sigma1,
        args.sigma2,
        (args.x1_0, args.x2_0),
        args.dt,
        args.n,
        args.substeps,
        args.seed,
    )?;
    let series = observe(&path, args.sigma_eps, args.seed.wrapping_add(1000))?;

    let parts: Vec<&str> = args.start_date.split('-').collect();
    let start = if parts.len() == 3 {
        (
            parts[0].parse().map_err(|_| Error::invalid("bad start date"))?,
            parts[1].parse().map_err(|_| Error::invalid("bad start date"))?,
            parts[2].parse().map_err(|_| Error::invalid("bad start date"))?,
        )
    } else {
        return Err(Error::invalid("start date must be YYYY-MM-DD"));
    };

    let mut buf = Vec::new();
    write_price_csv(&mut buf, series.values(), start, args.base_price)?;
    if let Some(parent) = std::path::Path::new(&args.output).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.output, &buf)?;
    println!("wrote {} rows to {}", args.n, args.output);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let result: Result<bool, Error> = match &cli.command {
        Some(Command::Run(args)) => cmd_run(args).map(|_| true),
        Some(Command::Selfcheck(args)) => cmd_selfcheck(args),
        Some(Command::Simulate(args)) => cmd_simulate(args).map(|_| true),
        None if cli.selfcheck => cmd_selfcheck(&SelfcheckArgs {
            out_dir: cli.run.out_dir.clone(),
            geodesic_tol: cli.run.geodesic_tol,
            config: cli.run.config.clone(),
        }),
        None => cmd_run(&cli.run).map(|_| true),
    };

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("selfcheck reported failures");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
