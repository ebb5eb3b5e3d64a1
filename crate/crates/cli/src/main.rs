use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stochexp::catalog::{catalog, catalog_get, Params};
use stochexp::conditions::{benes_verdict, GrowthDomain};
use stochexp::diagnostics::Classification;
use stochexp::measure_change::{girsanov_consistency, Functional, TiltConfig};
use stochexp::report::{parse_levels, run, RunConfig};
use stochexp::{EnsembleConfig, Error, TimeGrid};

#[derive(Parser)]
#[command(name = "stochexp", version, about = "True-martingale diagnostics for stochastic exponentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run conditions and Monte Carlo diagnostics and write a JSON report.
    Run(RunArgs),
    /// Evaluate the sufficient growth conditions of a model.
    Check(ModelArgs),
    /// Compare E_P[z_T f] with E_Q[f] for the standard functionals.
    Girsanov(GirsanovArgs),
    /// Catalog of reference models.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// List the catalog entries.
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Catalog model name.
    #[arg(long)]
    model: String,
    /// Model parameter override, `name=value`; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Master seed; falls back to STOCHEXP_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Localization levels, comma separated.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    checkpoints: Option<usize>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Report file; standard output otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory receiving one CSV file per dumped path.
    #[arg(long)]
    csv_paths: Option<PathBuf>,
    #[arg(long)]
    csv_count: Option<usize>,
    /// Omit wall-clock fields so identical runs give identical bytes.
    #[arg(long)]
    no_timestamp: bool,
    #[arg(long)]
    no_girsanov: bool,
}

#[derive(Args)]
struct GirsanovArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// One of terminal_identity, terminal_square, indicator, running_sup, all.
    #[arg(long, default_value = "all")]
    functional: String,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Localization level for models without the sufficient conditions.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn parse_params(raw: &[String]) -> Result<Params, Failure> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Usage(format!("expected NAME=VALUE, got `{kv}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| Failure::Usage(format!("invalid number in `{kv}`")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn model_params(args: &ModelArgs) -> Result<Params, Failure> {
    let mut p = parse_params(&args.params)?;
    if let Some(t) = args.horizon {
        p.insert("T".into(), t);
    }
    Ok(p)
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("reports serialize")));
}

fn label<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(v) => v.to_string(),
        Err(_) => String::new(),
    }
}

fn seed_or_env(seed: Option<u64>) -> Result<u64, Failure> {
    let mut c = RunConfig { seed, ..Default::default() };
    c.seed_from_env()?;
    c.seed.ok_or_else(|| Failure::Usage("a seed is required (--seed or STOCHEXP_SEED)".into()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.model {
        cfg.model = m;
    }
    cfg.params.extend(parse_params(&args.params)?);
    if let Some(t) = args.horizon {
        cfg.horizon = Some(t);
    }
    if let Some(v) = args.dt {
        cfg.dt = v;
    }
    if let Some(v) = args.paths {
        cfg.n_paths = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = &args.levels {
        cfg.levels = parse_levels(v)?;
    }
    if let Some(v) = args.checkpoints {
        cfg.checkpoints = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if args.csv_paths.is_some() {
        cfg.csv_paths = args.csv_paths;
    }
    if let Some(v) = args.csv_count {
        cfg.csv_count = v;
    }
    if args.no_timestamp {
        cfg.timestamp = false;
    }
    if args.no_girsanov {
        cfg.girsanov = false;
    }
    cfg.seed_from_env()?;

    let report = run(&cfg)?;
    let json = report.to_json();
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &json).map_err(Error::from)?;
            let est = &report.ez.terminal.estimate;
            emit(&format!(
                "{}: E z_T = {:.4} +- {:.4}, verdict {}\n",
                report.config.model,
                est.mean,
                est.se,
                label(&report.verdict.verdict.classification)
            ));
        }
        None => emit(&json),
    }
    if report.verdict.verdict.classification == Classification::Contradiction {
        eprintln!("contradiction: the sufficient conditions hold but the simulation shows a mass defect");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: ModelArgs) -> Result<ExitCode, Failure> {
    let spec = catalog_get(&args.model)?.model_with(&model_params(&args)?)?;
    print_json(&benes_verdict(&spec, &GrowthDomain::default())?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_girsanov(args: GirsanovArgs) -> Result<ExitCode, Failure> {
    let spec = catalog_get(&args.model.model)?.model_with(&model_params(&args.model)?)?;
    let standard = Functional::standard(&spec);
    let chosen: Vec<Functional> = match args.functional.as_str() {
        "all" => standard.to_vec(),
        name => vec![standard
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Failure::Usage(format!("unknown functional `{name}`")))?],
    };
    let grid = TimeGrid::new(spec.horizon, args.dt)?;
    let ens = EnsembleConfig { n_paths: args.paths, seed: seed_or_env(args.seed)?, workers: args.workers };
    print_json(&girsanov_consistency(&spec, &chosen, &grid, &ens, args.level, &TiltConfig::default())?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Listing {
    name: &'static str,
    dependence: &'static str,
    expected_verdict: String,
    expected_ez: serde_json::Value,
    description: &'static str,
}

fn cmd_catalog(json: bool) -> Result<ExitCode, Failure> {
    let rows: Vec<Listing> = catalog()
        .iter()
        .map(|e| Listing {
            name: e.name,
            dependence: e.dependence,
            expected_verdict: label(&e.expected_verdict),
            expected_ez: serde_json::to_value(e.expected_ez).unwrap_or_default(),
            description: e.description,
        })
        .collect();
    if json {
        print_json(&rows);
    } else {
        for r in &rows {
            emit(&format!("{:<30} {:<15} {:<13} {}\n", r.name, r.dependence, r.expected_verdict, r.description));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Girsanov(a) => cmd_girsanov(a),
        Command::Catalog { action: CatalogAction::List { json } } => cmd_catalog(json),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
