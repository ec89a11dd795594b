use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mppi_bounds::complexity::HoeffdingForm;
use mppi_bounds::config::{self, ExperimentKind, SCHEMA_VERSION};
use mppi_bounds::dynamics::NoiseMode;
use mppi_bounds::{experiments, Error};

/// Path-integral control experiments and Monte-Carlo sample-complexity bounds.
#[derive(Debug, Parser)]
#[command(name = "mppi-bounds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-loop double-integrator runs (paths, summary, dispersion).
    Uav(Common),
    /// Closed-loop simple-car runs for narrow and wide steering.
    Ugv(Common),
    /// Required sample counts N1 and N2.
    Complexity(Common),
    /// Weighted-control variance and inverse mean weight over (a, T).
    VarianceSweep(Common),
    /// Observed versus permitted failure rates of both concentration bounds.
    Coverage(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, env = "MPPI_BOUNDS_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for batch sampling.
    #[arg(long)]
    threads: Option<usize>,
    /// Hoeffding exponent: eq9 or prop1.
    #[arg(long)]
    hoeffding_form: Option<HoeffdingForm>,
    /// Noise scaling: folded or diffusion.
    #[arg(long)]
    delta_mode: Option<NoiseMode>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidInput(_) | Error::Dimension(_) | Error::Assumption(_) => 2,
        _ => 3,
    }
}

fn run(kind: ExperimentKind, args: &Common) -> Result<Vec<PathBuf>, Error> {
    let mut doc = match &args.config {
        Some(path) => config::read_document(path)?,
        None => json!({"version": SCHEMA_VERSION, "kind": kind.as_str()}),
    };
    if doc.get("kind").and_then(Value::as_str) != Some(kind.as_str()) {
        return Err(Error::Config {
            path: "kind".into(),
            message: format!("subcommand expects kind `{}`", kind.as_str()),
        });
    }
    let mut overrides = json!({});
    if let Some(seed) = args.seed {
        overrides["seed"] = json!(seed);
    }
    if let Some(form) = args.hoeffding_form {
        overrides["hoeffding_form"] = json!(form);
    }
    if let Some(mode) = args.delta_mode {
        overrides["delta_mode"] = json!(mode);
    }
    config::deep_merge(&mut doc, &overrides);
    let loaded = config::resolve(&doc)?;
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    }
    let out = args.out.clone().or_else(|| loaded.config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let meta = experiments::metadata(&loaded);
    let tables = experiments::run(&loaded.config)?;
    tables.iter().map(|t| t.write(&out, &meta)).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Uav(a) => (ExperimentKind::Uav, a),
        Command::Ugv(a) => (ExperimentKind::Ugv, a),
        Command::Complexity(a) => (ExperimentKind::ComplexityTable, a),
        Command::VarianceSweep(a) => (ExperimentKind::VarianceSweep, a),
        Command::Coverage(a) => (ExperimentKind::CoverageTest, a),
    };
    match run(kind, args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
