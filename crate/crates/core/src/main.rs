use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use polysmp::harness::{self, ExperimentConfig, Instance, OutputFormat, OUT_DIR_ENV};
use polysmp::problems::Encoding;
use polysmp::verify::{self, Suite};
use polysmp::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "smp",
    version,
    about = "Mirror Prox experiments on polynomial saddle point problems"
)]
struct Cli {
    /// Worker threads for per-seed parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solvers of an experiment config and write the result table.
    Run(RunArgs),
    /// Run the property suites and print a residual report.
    Verify {
        /// geometry, oracles, solver, problems or all
        #[arg(default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the instance of a config (from its first seed) and save it.
    Gen(GenArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to the config's output_path, under $SMP_OUT_DIR if set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "text")]
    encoding: EncodingArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Text,
    Binary,
}

/// Error plus the exit status it maps to.
struct Failure(u8, String);

fn validation(e: Error) -> Failure {
    Failure(EXIT_VALIDATION, e.to_string())
}

fn runtime(e: Error) -> Failure {
    let code = match e {
        Error::Config { .. } | Error::Argument(_) | Error::Shape(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    };
    Failure(code, e.to_string())
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(validation)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate().map_err(validation)?;
    }
    Ok(cfg)
}

fn output_path(common: &Common, cfg: &ExperimentConfig, format: OutputFormat) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| cfg.resolved_output(format))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let format = match (args.format, &args.common.out, &cfg.output_path) {
        (Some(FormatArg::Csv), ..) => OutputFormat::Csv,
        (Some(FormatArg::Json), ..) => OutputFormat::Json,
        (None, Some(p), _) | (None, None, Some(p)) => OutputFormat::from_path(p),
        (None, None, None) => OutputFormat::Csv,
    };
    let path = output_path(&args.common, &cfg, format);
    let rows = harness::run_experiment(&cfg).map_err(runtime)?;
    harness::emit_results(&rows, &path, format).map_err(runtime)?;
    let failed: Vec<_> = rows
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| (r, f)))
        .collect();
    for (r, f) in &failed {
        eprintln!("seed {} {}: {f}", r.seed, r.solver);
    }
    eprintln!("{} rows written to {}", rows.len(), path.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure(
            EXIT_RUNTIME,
            format!("{} of {} runs failed", failed.len(), rows.len()),
        ))
    }
}

fn gen(args: &GenArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let encoding = match args.encoding {
        EncodingArg::Text => Encoding::Text,
        EncodingArg::Binary => Encoding::Binary,
    };
    let path = args.common.out.clone().unwrap_or_else(|| {
        let name = format!("instance-{}.dat", cfg.seeds[0]);
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Path::new(&dir).join(name),
            _ => PathBuf::from(name),
        }
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure(EXIT_RUNTIME, format!("{}: {e}", dir.display())))?;
    }
    let inst = Instance::generate(&cfg, cfg.seeds[0]).map_err(runtime)?;
    inst.save(&path, encoding).map_err(runtime)?;
    eprintln!("instance written to {}", path.display());
    Ok(())
}

fn verify_cmd(suite: Suite, seed: u64) -> Result<(), Failure> {
    let report = verify::run(suite, seed).map_err(|e| Failure(EXIT_VERIFY, e.to_string()))?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure(
            EXIT_VERIFY,
            format!("{} checks failed", report.failures().count()),
        ))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be ≥ 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let out = match &cli.command {
        Command::Run(a) => run(a),
        Command::Gen(a) => gen(a),
        Command::Verify { suite, seed } => verify_cmd(*suite, *seed),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
