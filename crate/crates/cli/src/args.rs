use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Markov-chain analysis and simulation of ride-hailing dispatch on a grid.
#[derive(Debug, Parser)]
#[command(name = "ridechain", version, args_override_self = true, arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "RIDECHAIN_THREADS")]
    pub threads: Option<usize>,

    /// Flat `key = value` file of flag defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Monte-Carlo ensemble of a dispatch policy.
    Simulate(SimulateArgs),
    /// Exact chain: stationary law, γ table, mixing and limiting objective.
    Exact(ExactArgs),
    /// Path-coupling contraction check on the uniform instance.
    Couple(CoupleArgs),
    /// Mixing curve of a dispatch chain, or of the four-state lower-bound chain.
    Mixing(MixingArgs),
    /// Value iteration for the optimal dispatch rule.
    Vi(ViArgs),
    /// Trip records to a request model or replay trace.
    Ingest(IngestArgs),
    /// Exponential or inverse fit of a curve in a CSV file.
    Fit(FitArgs),
    /// Synthetic trip file in the taxi-data schema.
    Fixture(FixtureArgs),
    /// Re-run the command recorded in a manifest and compare outputs.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,

    /// Table format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InstanceArgs {
    /// Grid as ROWSxCOLS.
    #[arg(long, default_value = "2x2")]
    pub grid: String,

    /// Number of drivers m.
    #[arg(long, default_value_t = 2)]
    pub drivers: u32,

    /// Per-location capacity c.
    #[arg(long, default_value_t = 2)]
    pub capacity: u32,

    /// `uniform` (p = 1/n²), `uniform:P`, `model:FILE`, or `replay:FILE` for simulate.
    #[arg(long, default_value = "uniform")]
    pub arrivals: String,

    /// `const:W` or `distance`; ignored for model files.
    #[arg(long, default_value = "const:1")]
    pub weights: String,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,

    /// `nadap:A[:origin|:drop]`, `rand[:NESW]` or `greedy[:pooled]`.
    #[arg(long, default_value = "nadap:0.8")]
    pub policy: String,

    /// Horizon T; replay traces default to their own length.
    #[arg(long)]
    pub rounds: Option<usize>,

    #[arg(long, default_value_t = 1000)]
    pub runs: usize,

    /// Random seed; drawn and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,

    /// `adversarial`, `spread` or a file holding a state such as `2,0,0,0`.
    #[arg(long, default_value = "adversarial")]
    pub init: String,

    /// `conditional` or `realized`; `auto` picks realized for replay.
    #[arg(long, default_value = "auto")]
    pub estimator: String,

    /// `tail`, `tail:F`, `exact` or a number.
    #[arg(long, default_value = "tail")]
    pub target: String,

    /// Error values at or below this are left out of the exponential fit.
    #[arg(long, default_value_t = 0.0)]
    pub fit_floor: f64,

    /// Also write the request log of run 0.
    #[arg(long)]
    pub trace: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExactArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,

    #[arg(long, default_value = "nadap:0.8")]
    pub policy: String,

    /// Comma-separated ε values for τ(ε).
    #[arg(long, default_value = "0.25,0.1,0.01")]
    pub eps: String,

    #[arg(long, default_value_t = 1000)]
    pub t_max: usize,

    /// Start states used for d(t); larger spaces use an evenly spaced sample.
    #[arg(long, default_value_t = 2000)]
    pub starts: usize,

    /// Rounds of the exact W(t) curve from `--init` (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub curve: usize,

    #[arg(long, default_value = "adversarial")]
    pub init: String,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CoupleArgs {
    #[arg(long, default_value = "2x2")]
    pub grid: String,

    #[arg(long, default_value_t = 2)]
    pub drivers: u32,

    #[arg(long, default_value_t = 2)]
    pub capacity: u32,

    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MixingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,

    #[arg(long, default_value = "nadap:0.8")]
    pub policy: String,

    #[arg(long, default_value = "0.25,0.1,0.01")]
    pub eps: String,

    #[arg(long, default_value_t = 1000)]
    pub t_max: usize,

    #[arg(long, default_value_t = 2000)]
    pub starts: usize,

    /// Analyze the four-state chain for `N,M` instead of a dispatch chain.
    #[arg(long, value_name = "N,M")]
    pub lower_bound: Option<String>,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ViArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,

    #[arg(long, default_value_t = 0.9)]
    pub discount: f64,

    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,

    /// Largest number of decision states.
    #[arg(long, default_value_t = 100_000)]
    pub cap: usize,

    /// Episodes for the discounted-return comparison.
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,

    /// Periods per comparison episode.
    #[arg(long, default_value_t = 200)]
    pub horizon: usize,

    /// Periods of the occupancy episode.
    #[arg(long, default_value_t = 1000)]
    pub periods: usize,

    /// Policies compared against the optimum.
    #[arg(long, default_value = "nadap:0.8,rand,greedy")]
    pub baselines: String,

    #[arg(long, default_value = "adversarial")]
    pub init: String,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Model,
    Replay,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Trip CSV with the taxi-data header.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// `latmin,latmax,lonmin,lonmax`.
    #[arg(long, default_value = "40.7014,40.8024,-74.0041,-73.9552")]
    pub bbox: String,

    #[arg(long, default_value = "21x11")]
    pub grid: String,

    #[arg(long, default_value = "morning")]
    pub segment: String,

    /// `all`, a date, `A..B`, or a comma list of these.
    #[arg(long, default_value = "all")]
    pub dates: String,

    /// Keep the trips of this many randomly chosen cars.
    #[arg(long)]
    pub subsample: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_enum, default_value_t = Emit::Model)]
    pub emit: Emit,

    /// Output file; the manifest goes next to it.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Exp,
    Inverse,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Abscissa column.
    #[arg(long, default_value = "t")]
    pub x: String,

    /// Ordinate column.
    #[arg(long, default_value = "delta")]
    pub y: String,

    /// Added to every abscissa, e.g. 1 to turn round indices into T.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,

    #[arg(long, value_enum, default_value_t = FitKind::Exp)]
    pub kind: FitKind,

    /// Exponential fit ignores values at or below this.
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 1000)]
    pub trips: usize,

    #[arg(long, default_value_t = 50)]
    pub cars: usize,

    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutArgs,
}

#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,

    /// Where to write; defaults to the manifest's directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
