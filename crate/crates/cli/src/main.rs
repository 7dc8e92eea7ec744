use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use landval_core::pipeline::{self, Run, RunConfig};
use landval_core::tilefetch::{SystemClock, UreqTransport};
use landval_core::Error;

#[derive(Parser)]
#[command(
    name = "landval",
    version,
    about = "Similarity-based land valuation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set pairs.tau=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Create the parcel table (synthetic or from input) and the temporal split.
    Generate,
    /// Download satellite and segmented tiles for every parcel (needs MAPS_API_KEY).
    FetchTiles,
    /// Build labeled pairs and rank features.
    BuildPairs,
    /// Fit all similarity models and the regression baseline.
    Train,
    /// Search ensemble weights on validation pairs.
    TuneEnsemble,
    /// Write AUC, coverage/MAPE and per-province reports.
    Evaluate,
    /// Value one parcel and list its contributing neighbors.
    Predict {
        #[arg(long)]
        parcel: String,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Run generate through evaluate in order.
    All,
    /// Print the resolved run directory.
    RunDir,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &cli.overrides)?,
        None => RunConfig::from_toml("", &cli.overrides)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T, Error>) -> Result<T, Error> {
    let t = Instant::now();
    let out = f()?;
    eprintln!("{name}: done in {:.1}s", t.elapsed().as_secs_f64());
    Ok(out)
}

fn execute(cli: &Cli) -> Result<(), Error> {
    let run = Run::new(load_config(cli)?)?;
    match &cli.command {
        Command::RunDir => println!("{}", run.dir.display()),
        Command::Generate => println!("{}", json(&stage("generate", || pipeline::generate(&run))?)),
        Command::FetchTiles => {
            let n = stage("fetch-tiles", || {
                pipeline::fetch_tiles(&run, UreqTransport::default(), SystemClock::default())
            })?;
            println!(
                "stored {n} tiles under {}",
                run.path(pipeline::TILES_DIR).display()
            );
        }
        Command::BuildPairs => println!(
            "{}",
            json(&stage("build-pairs", || pipeline::build_pairs(&run))?)
        ),
        Command::Train => println!(
            "{}",
            json(&stage("train", || pipeline::train(&run))?.val_auc)
        ),
        Command::TuneEnsemble => {
            let out = stage("tune-ensemble", || pipeline::tune_ensemble(&run))?;
            println!(
                "validation AUC {:.4} over {} candidates",
                out.val_auc, out.n_candidates
            );
            println!("{}", json(&out.spec.weights));
        }
        Command::Evaluate => println!("{}", json(&stage("evaluate", || pipeline::evaluate(&run))?)),
        Command::Predict { parcel, theta } => {
            let r = pipeline::predict(&run, parcel, *theta)?;
            println!("parcel: {}", r.parcel_id);
            println!("actual price: {}", r.actual_price);
            println!("theta: {}", r.theta);
            println!("candidates: {}", r.n_candidates);
            println!("covered: {}", r.covered);
            if let Some(p) = r.predicted_price {
                println!("predicted price: {p:.2}");
                println!("contributors:");
                for c in &r.contributors {
                    println!("  {}  score {:.4}  price {}", c.id, c.score, c.price);
                }
            }
        }
        Command::All => {
            stage("generate", || pipeline::generate(&run))?;
            stage("build-pairs", || pipeline::build_pairs(&run))?;
            stage("train", || pipeline::train(&run))?;
            stage("tune-ensemble", || pipeline::tune_ensemble(&run))?;
            let s = stage("evaluate", || pipeline::evaluate(&run))?;
            println!("{}", json(&s));
            println!("reports: {}", run.path(pipeline::REPORTS_DIR).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
