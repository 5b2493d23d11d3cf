//! Command-line front end: `run`, `generate-data`, `eval` and `project`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use l2i_core::data::{read_dataset_csv, write_dataset_csv};
use l2i_core::experiment::{run_dataset_config, RunSeeds};
use l2i_core::projection::dump_latent_projection;
use l2i_core::report::{run_suite, TABLE_FILE};
use l2i_core::{
    evaluate, generate_dataset, parse_config, DomainFilter, Error, ExperimentConfig, Model,
    Result, Sample, Split, Variant,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "l2i", about = "Learn-to-Ignore domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and test every configured variant and write the results table.
    Run(RunArgs),
    /// Write the dataset of one run as CSV.
    GenerateData(GenerateArgs),
    /// Score a checkpoint on a dataset CSV.
    Eval(EvalArgs),
    /// Dump a 2-D PCA projection of a checkpoint's latent vectors.
    Project(ProjectArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides experiment.master_seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (overrides experiment.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated variant list.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Destination CSV file.
    #[arg(long)]
    out: PathBuf,
    /// Run index whose data seed is used.
    #[arg(long, default_value_t = 0)]
    run: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV as written by `generate-data`.
    #[arg(long)]
    data: PathBuf,
    /// source, target or all.
    #[arg(long, default_value = "all")]
    domain: String,
    /// Only score this split (train, val, test); all rows when omitted.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Destination CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<i32> {
    let mut cfg = load_config(&args.common)?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(names) = args.variants {
        cfg.variants = names
            .iter()
            .map(|n| n.parse::<Variant>())
            .collect::<Result<_>>()?;
    }
    if let Some(runs) = args.runs {
        cfg.n_runs = runs;
    }
    cfg.validate()?;
    let report = run_suite(&cfg)?;
    let table = std::fs::read_to_string(report.output_dir.join(TABLE_FILE))?;
    print!("{table}");
    for e in &report.experiments {
        for f in &e.failures {
            eprintln!("warning: {} run {} failed: {}", e.variant, f.run, f.error);
        }
    }
    let failed = report.failed_variants();
    if !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|v| v.name()).collect();
        eprintln!("error: every run failed for {}", names.join(", "));
        return Ok(EXIT_RUNTIME);
    }
    println!("results written to {}", report.output_dir.display());
    Ok(EXIT_OK)
}

fn generate(args: GenerateArgs) -> Result<i32> {
    let cfg = load_config(&args.common)?;
    let seeds = RunSeeds::derive(cfg.master_seed, args.run);
    let samples = generate_dataset(&run_dataset_config(&cfg, &seeds))?;
    write_dataset_csv(&args.out, &samples)?;
    println!("{} samples written to {}", samples.len(), args.out.display());
    Ok(EXIT_OK)
}

fn load_samples(path: &Path, split: Option<&str>) -> Result<Vec<Sample>> {
    let samples = read_dataset_csv(path)?;
    Ok(match split {
        None => samples,
        Some(s) => {
            let split: Split = s.parse()?;
            samples.into_iter().filter(|x| x.split == split).collect()
        }
    })
}

fn eval(args: EvalArgs) -> Result<i32> {
    let model = Model::load(&args.checkpoint)?;
    let samples = load_samples(&args.data, args.split.as_deref())?;
    let filter: DomainFilter = args.domain.parse()?;
    let s = evaluate(&model, &samples, filter)?;
    println!("samples,accuracy,kappa,auroc");
    println!(
        "{},{},{},{}",
        s.n_samples,
        s.accuracy,
        s.kappa,
        s.auroc.map(|a| a.to_string()).unwrap_or_default()
    );
    Ok(EXIT_OK)
}

fn project(args: ProjectArgs) -> Result<i32> {
    let model = Model::load(&args.checkpoint)?;
    let samples = load_samples(&args.data, None)?;
    let points = dump_latent_projection(&model, &samples, &args.out)?;
    println!("{} points written to {}", points.len(), args.out.display());
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn cli_main(argv: &[String]) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::GenerateData(a) => generate(a),
        Command::Eval(a) => eval(a),
        Command::Project(a) => project(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::UnsupportedVariant(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}
