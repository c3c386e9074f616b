use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use atlas_core::experiment::{preset, run_experiment, ExperimentConfig, PRESET_NAMES};
use atlas_core::oracle;
use atlas_core::stability::{
    eta_eff, gamma, l_det, mu_condition, nondeg_lower_bound, stability_check, RegularityBounds,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Exit code for runs where at least one seed hit a hard error.
const EXIT_SEED_ERROR: u8 = 1;
/// Exit code for invalid configuration or arguments.
const EXIT_USAGE: u8 = 2;
/// Exit code when a self-test disagrees with its oracle.
const EXIT_ORACLE_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "atlas", version, about = "Autoencoder atlases and orientability detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed experiment from a JSON config.
    Run(RunArgs),
    /// Evaluate the sign-cocycle stability bounds for given constants.
    Stability(StabilityArgs),
    /// Brute-force coboundary and finite-difference Jacobian self-tests.
    Oracle(OracleArgs),
    /// Print a built-in experiment config as JSON.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        name: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or the name of a built-in preset.
    config: String,
    #[arg(long, env = "ATLAS_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda_jac: Option<f64>,
    /// Number of seeds run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct StabilityArgs {
    #[arg(long)]
    l_e: f64,
    #[arg(long)]
    l_ep: f64,
    #[arg(long)]
    l_d: f64,
    #[arg(long)]
    l_dp: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 2)]
    d: u32,
    /// Use the on-manifold reconstruction error directly.
    #[arg(long)]
    on_manifold: bool,
    /// Minimum encoder and decoder singular values for the non-degeneracy bound.
    #[arg(long, num_args = 2, value_names = ["S_E", "S_D"])]
    singular: Option<Vec<f64>>,
    /// Perturbation size, exact gap and constant for the agreement condition.
    #[arg(long, num_args = 3, value_names = ["MU", "DELTA0", "C0"])]
    mu: Option<Vec<f64>>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn load_config(args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match preset(&args.config) {
        Some(cfg) if !std::path::Path::new(&args.config).exists() => cfg,
        _ => ExperimentConfig::load(args.config.as_ref()).with_context(|| format!("reading config {}", args.config))?,
    };
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(lambda) = args.lambda_jac {
        cfg.train.lambda_jac = lambda;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = match load_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(EXIT_USAGE));
        }
    };
    let report = run_experiment(&cfg, args.jobs)?;
    let agg = &report.aggregate;
    for s in &report.seeds {
        match &s.error {
            Some(e) => println!("seed {}: error: {e}", s.seed),
            None => println!("seed {}: {} (converged: {})", s.seed, s.verdict, s.converged),
        }
    }
    let accuracy = agg.accuracy.map_or("n/a".to_string(), |a| format!("{:.0}%", 100.0 * a));
    println!(
        "{}: {}/{} converged, accuracy {accuracy}, results in {}",
        cfg.name,
        agg.n_converged,
        agg.n_seeds,
        cfg.output_dir.display()
    );
    Ok(if report.has_errors() {
        ExitCode::from(EXIT_SEED_ERROR)
    } else {
        ExitCode::SUCCESS
    })
}

fn stability(args: StabilityArgs) -> anyhow::Result<ExitCode> {
    let b = RegularityBounds {
        l_e: args.l_e,
        l_ep: args.l_ep,
        l_d: args.l_d,
        l_dp: args.l_dp,
        eps: args.eps,
        eta: args.eta,
        delta: args.delta,
        d: args.d,
        on_manifold: args.on_manifold,
    };
    if let Err(e) = b.validate() {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let check = stability_check(&b);
    let mut out = json!({
        "bounds": b,
        "eta_eff": eta_eff(&b).ok(),
        "gamma": gamma(&b).ok(),
        "l_det": l_det(&b),
        "check": check,
    });
    if let Some(s) = args.singular {
        out["nondeg_lower_bound"] = json!(nondeg_lower_bound(s[0], s[1], args.d)?);
    }
    if let Some(m) = args.mu {
        match mu_condition(m[0], m[1], m[2]) {
            Ok(holds) => out["mu_condition"] = json!(holds),
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(EXIT_USAGE));
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: OracleArgs) -> anyhow::Result<ExitCode> {
    let summary = oracle::run_all(args.seed)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if !summary.passed() {
        eprintln!("oracle self-test failed");
        return Ok(ExitCode::from(EXIT_ORACLE_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Stability(args) => stability(args),
        Command::Oracle(args) => oracle(args),
        Command::Preset { name } => preset(&name)
            .map(|cfg| {
                print!("{}", cfg.to_json_pretty());
                ExitCode::SUCCESS
            })
            .ok_or_else(|| anyhow::anyhow!("unknown preset {name}")),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_SEED_ERROR)
    })
}
