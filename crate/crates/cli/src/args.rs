use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qassa_core::aggregation::AggregationApproach;
use qassa_core::global_selection::DEFAULT_ARCHIVE_CAPACITY;
use qassa_core::pipeline::DEFAULT_TOP_K;
use qassa_core::workload::ConstraintMode;

use crate::bench::Sweep;
use crate::source::SourceArgs;

#[derive(Debug, Parser)]
#[command(name = "qassa", version, about = "QoS-aware service selection: generate, select, benchmark, simulate, adapt")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random instance from a QoS dataset.
    Generate(GenerateArgs),
    /// Select ranked compositions for an instance.
    Select(SelectArgs),
    /// Run a parameter sweep and write CSV/JSON reports.
    Bench(BenchArgs),
    /// Run selection through the distributed simulator.
    Distsim(DistsimArgs),
    /// Execute a composition against a fault script.
    Adapt(AdaptArgs),
    /// Summarise a bench report (JSON or row CSV) per cell.
    Report(ReportArgs),
    /// Write the synthetic QWS-like table as CSV.
    SynthQws(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Approach {
    Worst,
    Best,
    Mean,
}

impl From<Approach> for AggregationApproach {
    fn from(a: Approach) -> Self {
        match a {
            Approach::Worst => AggregationApproach::WorstCase,
            Approach::Best => AggregationApproach::BestCase,
            Approach::Mean => AggregationApproach::MeanValue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Mean,
    MeanSigma,
}

impl From<Mode> for ConstraintMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mean => ConstraintMode::Mean,
            Mode::MeanSigma => ConstraintMode::MeanPlusSigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Constraints {
    Mean,
    MeanSigma,
    /// Use the bounds stored in the instance file.
    File,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub activities: usize,
    #[arg(long)]
    pub services: usize,
    /// Number of QoS properties (a prefix of the property file).
    #[arg(long, default_value_t = 5)]
    pub properties: usize,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Mean)]
    pub constraints: Mode,
    #[arg(long, value_enum, default_value_t = Approach::Worst)]
    pub approach: Approach,
    /// Pattern weights `sequence,parallel,loop`.
    #[arg(long, default_value = "1,1,1")]
    pub mix: String,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    /// Draw dataset rows without replacement.
    #[arg(long)]
    pub unique_rows: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options shared by the commands that run selection.
#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Approach::Worst)]
    pub approach: Approach,
    #[arg(long, value_enum, default_value_t = Constraints::File)]
    pub constraints: Constraints,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Archive capacity K.
    #[arg(long, default_value_t = DEFAULT_ARCHIVE_CAPACITY)]
    pub archive: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Print JSON instead of a text summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Activity counts: `10..50:10`, `4,5,6` or `10`.
    #[arg(long, default_value = "10..50:10")]
    pub activities: Sweep,
    #[arg(long, default_value = "50..200:50")]
    pub services: Sweep,
    #[arg(long, default_value = "5")]
    pub properties: Sweep,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "worst")]
    pub approaches: Vec<Approach>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mean")]
    pub constraint_modes: Vec<Mode>,
    #[arg(long, default_value_t = 20)]
    pub repeats: u32,
    /// Run the exhaustive oracle only when the binding space is at most this.
    #[arg(long, default_value_t = 1_000_000)]
    pub oracle_max: u128,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_ARCHIVE_CAPACITY)]
    pub archive: usize,
    #[arg(long, default_value = "1,1,1")]
    pub mix: String,
    /// Also run the distributed simulator with this many helpers.
    #[arg(long)]
    pub helpers: Option<usize>,
    #[command(flatten)]
    pub source: SourceArgs,
    /// One row per run.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// One row per cell, means and medians.
    #[arg(long)]
    pub summary_csv: Option<PathBuf>,
    /// Full report including raw timing samples.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistsimArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Scenario JSON; a perfect scenario with `--helpers` helpers otherwise.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub helpers: usize,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Fault script JSON.
    #[arg(long)]
    pub faults: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `.json` report or row CSV.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2500)]
    pub rows: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
