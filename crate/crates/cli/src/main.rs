//! `mqm`: score, analyze and collect MQM annotations from the command line.
//!
//! Exit status is 0 on success, 1 for failed validation or any other
//! diagnostic, and 2 for usage errors.

mod commands;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mqm_core::analysis::{CorrelationLevel, ScoreSource};
use mqm_core::scoring::{Filter, Level};
use mqm_core::{Orientation, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "mqm", version, about = "MQM translation-quality evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Base directory for relative input paths.
    #[arg(long, global = true, env = "MQM_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// Seed for every randomized computation.
    #[arg(long, global = true, env = "MQM_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    pub format: Format,

    /// Emit long-format TSV for external plotting instead of the report.
    #[arg(long, global = true)]
    pub plot_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    /// One JSON object per line, keyed by the TSV column names.
    Jsonl,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read an MQM corpus and write it back in canonical form.
    Import {
        #[command(flatten)]
        input: CorpusArgs,
        /// Print counts instead of the corpus.
        #[arg(long)]
        summary: bool,
    },
    /// Check corpus invariants; exits 1 when any rule is violated.
    Validate {
        #[command(flatten)]
        input: CorpusArgs,
    },
    /// MQM scores at rating, segment, document or system level.
    Score {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long, default_value = "system")]
        level: Level,
        /// `all`, a severity, a category, or `severity,category`.
        #[arg(long, default_value = "all")]
        filter: Filter,
    },
    /// Per-category error contributions of human and MT outputs.
    Breakdown {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        groups: Groups,
        /// Systems reported individually.
        #[arg(long, value_delimiter = ',')]
        focus: Vec<String>,
    },
    /// Per-rater mean scores and ratios to the all-rater mean.
    RaterReport {
        #[command(flatten)]
        input: CorpusArgs,
    },
    /// Rank systems from a corpus or from a `system<TAB>score` file.
    Rank {
        #[arg(long, conflicts_with = "scores", required_unless_present = "scores")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        lenient: bool,
        /// Defaults to lower-better for corpora and higher-better for score files.
        #[arg(long)]
        orientation: Option<Orientation>,
        /// Round before ranking so that near-equal scores tie.
        #[arg(long)]
        decimals: Option<u32>,
    },
    /// Ranking stability and pair separation across Major weights.
    Sweep {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10")]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// Agreement of rating methods with a gold standard.
    Correlate {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        study: Study,
        #[arg(long, default_value = "system")]
        level: CorrelationLevel,
        /// Defaults to every attached method other than the gold one.
        #[arg(long = "candidate", value_delimiter = ',')]
        candidates: Vec<ScoreSource>,
    },
    /// Pairwise segment-level agreement with the gold standard.
    KendallLike {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        study: Study,
        #[arg(long = "candidate", value_delimiter = ',')]
        candidates: Vec<ScoreSource>,
    },
    /// Per-document mean scores of human and MT outputs.
    DocProfile {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        groups: Groups,
    },
    /// Fit the two-level Gaussian model of segment scores.
    FitGaussian {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Simulate rating projects and report the Kendall tau distribution.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 900)]
        ratings: usize,
        /// Resample real documents instead of sampling the Gaussian model.
        #[arg(long)]
        bootstrap: bool,
    },
    /// Smallest ratings-per-system budget reaching a target mean tau.
    #[command(alias = "budget")]
    MinBudget {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = 0.9)]
        target_tau: f64,
    },
    /// Evaluate automatic metrics against a gold standard.
    MetricsEval {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        study: Study,
        /// Metric score files: `metric system score` or `metric system doc seg score`.
        #[arg(long = "metrics", required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "system")]
        level: CorrelationLevel,
        /// Metrics for which lower scores are better.
        #[arg(long, value_delimiter = ',', default_value = "TER")]
        lower_better: Vec<String>,
    },
    /// Serve the annotation API for every project under a directory.
    Serve {
        #[arg(long, env = "MQM_LISTEN_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, env = "MQM_PROJECTS_DIR")]
        projects: PathBuf,
        /// Bearer token required by the export endpoint.
        #[arg(long, env = "MQM_EXPORT_TOKEN")]
        token: Option<String>,
    },
    /// Create an annotation project from a corpus and assign raters.
    Assign {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        project_dir: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<String>,
        #[arg(long, default_value_t = 3)]
        raters_per_doc: usize,
        #[arg(long, value_enum, default_value_t = Mode::Mqm)]
        mode: Mode,
        /// Defaults to every system in the corpus.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
    },
    /// Write a project's latest ratings as a corpus TSV.
    Export {
        #[arg(long)]
        project_dir: PathBuf,
        /// Close the project to further submissions first.
        #[arg(long)]
        close: bool,
    },
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// MQM corpus TSV.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Downgrade over-limit ratings and unknown categories to warnings.
    #[arg(long)]
    pub lenient: bool,
    /// Weight scheme TSV (`severity category weight`); defaults to the standard scheme.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Scalar ratings to attach, as `METHOD=PATH` (pSQM, cSQM, WMT_RAW, WMT_Z).
    #[arg(long = "scalar", value_parser = parse_scalar)]
    pub scalars: Vec<(String, PathBuf)>,
}

fn parse_scalar(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected METHOD=PATH, got {s:?}"))?;
    match name.parse::<ScoreSource>()? {
        ScoreSource::Scalar(method) => Ok((method, PathBuf::from(path))),
        _ => Err(format!("{name} is not a scalar rating method")),
    }
}

#[derive(Debug, Args)]
pub struct Groups {
    /// Human translations; defaults to systems named `Human-*`.
    #[arg(long, value_delimiter = ',')]
    pub human: Vec<String>,
    /// MT systems; defaults to every non-human system.
    #[arg(long, value_delimiter = ',')]
    pub mt: Vec<String>,
}

#[derive(Debug, Args)]
pub struct Study {
    #[command(flatten)]
    pub groups: Groups,
    #[arg(long, default_value = "MQM")]
    pub gold: ScoreSource,
    /// Score human translations alongside MT systems.
    #[arg(long)]
    pub include_human: bool,
    /// Minimum gold difference for a segment pair to count.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep only segments that also carry WMT ratings.
    #[arg(long)]
    pub wmt_rated_only: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub input: CorpusArgs,
    /// Defaults to every system in the corpus.
    #[arg(long, value_delimiter = ',')]
    pub systems: Vec<String>,
    /// Fail on segment positions missing a system instead of dropping them.
    #[arg(long)]
    pub complete: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Consecutive segments rated per document.
    #[arg(long, default_value_t = 3)]
    pub consecutive: usize,
    /// Raters per item.
    #[arg(long, default_value_t = 1)]
    pub raters: usize,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Rater noise relative to the residual standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub rater_noise: f64,
    /// Rate different segments for each system.
    #[arg(long)]
    pub unaligned_items: bool,
    /// Share raters, and so rater noise, across systems.
    #[arg(long)]
    pub align_raters: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Mqm,
    Sqm,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
