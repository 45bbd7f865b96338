mod commands;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "movefit",
    version,
    about = "Fit censored moves-to-complete distributions per level"
)]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// Initial-guess grid as N_POINTSxP_POINTS.
    #[arg(long, global = true, default_value = "16x16", value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// KS threshold for the goodness-of-fit condition.
    #[arg(long, global = true, default_value_t = 0.05)]
    pub delta_threshold: f64,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available processors).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub run_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// Decide from the file extension: .csv, .jsonl/.ndjson, .json.
    Auto,
    AttemptsCsv,
    AttemptsJsonl,
    Histograms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Recovery,
    Ramp,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Attempt telemetry (CSV or JSON lines) or aggregated histograms (JSON).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub input_format: InputFormat,
    /// Truth manifest supplying per-level move limits for attempt inputs.
    #[arg(long)]
    pub limits: Option<PathBuf>,
    /// Move limit for every level of an attempt input.
    #[arg(long, conflicts_with = "limits")]
    pub move_limit: Option<u32>,
    /// Booster attempts ending within this many moves of the limit are counted as near-limit drops.
    #[arg(long, default_value_t = 2)]
    pub booster_window: u32,
    /// Keep only attempts with this attempt index.
    #[arg(long)]
    pub attempt_index: Option<u32>,
    #[arg(long)]
    pub keep_extra_moves: bool,
    /// Skip the cleaning rules entirely.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CorrectionArgs {
    /// Map predictions to the observed scale.
    #[arg(long)]
    pub apply_correction: bool,
    /// Correction coefficients as ALPHA,BETA (default: the reference trend).
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub correction: Option<(f64, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic telemetry and its truth manifest.
    Simulate {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Number of levels for a preset.
        #[arg(long)]
        levels: Option<usize>,
        /// Booster contamination rate for the recovery preset.
        #[arg(long, default_value_t = 0.0)]
        contamination: f64,
        /// Attempt telemetry output.
        #[arg(long, required_unless_present = "histograms")]
        out: Option<PathBuf>,
        /// Cleaned per-level histograms output.
        #[arg(long)]
        histograms: Option<PathBuf>,
        /// Truth manifest output (default: beside the telemetry).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit every level of an input.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Directory for plot-ready CSV tables.
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Treat histogram counts as full-range samples over (0, 10M].
        #[arg(long)]
        untruncated: bool,
    },
    /// Score fits against their data.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        fits: PathBuf,
        /// Report output (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        correction: Option<(f64, f64)>,
    },
    /// Cross-level regressions, clusters and the sensitivity grid.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Move-limit changes for the sensitivity grid.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-5,-4,-3,-2,-1,1,2,3,4,5"
        )]
        deltas: Vec<i64>,
        #[command(flatten)]
        correction: CorrectionArgs,
    },
    /// Predicted completion under a move-limit change.
    Whatif {
        #[arg(long)]
        fits: PathBuf,
        /// Level to query (default: every level).
        #[arg(long)]
        level: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        delta: i64,
        #[command(flatten)]
        correction: CorrectionArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        input: InputArgs,
        /// Precomputed fits (default: fit at startup).
        #[arg(long)]
        fits: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Permissive CORS, for local console development.
        #[arg(long)]
        cors: bool,
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        correction: Option<(f64, f64)>,
    },
}

fn parse_grid(text: &str) -> Result<(usize, usize), String> {
    let (n, p) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got {text:?}"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("grid n points: {e}"))?;
    let p: usize = p.trim().parse().map_err(|e| format!("grid p points: {e}"))?;
    if n < 2 || p < 2 {
        return Err("grid needs at least 2 points per axis".into());
    }
    Ok((n, p))
}

fn parse_pair(text: &str) -> Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected ALPHA,BETA, got {text:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("alpha: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("beta: {e}"))?;
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(err.code())
        }
    }
}
