mod commands;
mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

/// Real-time detection of sharply increasing trends in epidemic time series.
#[derive(Parser, Debug)]
#[command(name = "trendwatch", version, about)]
struct Cli {
    /// TOML config with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TRENDWATCH_JOBS")]
    jobs: Option<usize>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Exact output directory, instead of a fresh one under --out-dir.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Log filter, e.g. `info` or `trendwatch=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a panel CSV and write it in canonical form.
    Ingest(IngestArgs),
    /// Download one signal from an epidata endpoint.
    Fetch(FetchArgs),
    /// Generate a synthetic panel with planted waves.
    Simulate(SimulateArgs),
    /// Rolling fits, optional fusion/aggregation, calibration and alarms.
    Detect(DetectArgs),
    /// Retrospective weekday correction and trend smoothing for one region.
    Smooth(SmoothArgs),
    /// Consensus ground-truth intervals over a penalty grid.
    Groundtruth(GroundtruthArgs),
    /// Stouffer-fused p-values per region and date.
    Fuse(FuseArgs),
    /// Learned (or baseline) region distances and nearest-neighbour graph.
    Network(NetworkArgs),
    /// Cluster regions from a distance matrix.
    Cluster(ClusterArgs),
    /// Power and delay across window sizes.
    Evaluate(EvaluateArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(trendwatch::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, e: std::io::Error) -> Self {
        CliError::Lib(trendwatch::Error::Io {
            path: path.as_ref().to_path_buf(),
            source: e,
        })
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_numeric() => 4,
            CliError::Lib(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "usage",
            4 => "numeric",
            _ => "data",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

impl From<trendwatch::Error> for CliError {
    fn from(e: trendwatch::Error) -> Self {
        CliError::Lib(e)
    }
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Ctx {
        file,
        jobs,
        out_dir: cli.out_dir,
        run_dir: cli.run_dir,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Fetch(a) => fetch(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Detect(a) => detect(&ctx, a),
        Command::Smooth(a) => smooth(&ctx, a),
        Command::Groundtruth(a) => groundtruth(&ctx, a),
        Command::Fuse(a) => fuse(&ctx, a),
        Command::Network(a) => network(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({
                "error": { "kind": e.kind(), "code": e.code(), "message": e.message() }
            });
            eprintln!("{body}");
            ExitCode::from(e.code())
        }
    }
}
