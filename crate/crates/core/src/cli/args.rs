use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use care::dataset::OutlierKind;
use care::evaluation::Procedure;
use care::{DetectorKind, EnsembleMode, LabelColumn};

#[derive(Debug, Parser)]
#[command(name = "care", version, about = "Sequential outlier-detection ensemble")]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr and write per-iteration error estimates.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score the points of a CSV file.
    Detect(DetectArgs),
    /// Average precision of a score file against dataset labels.
    Eval(EvalArgs),
    /// Bias/variance experiment on synthetic data.
    SynthBv(SynthBvArgs),
    /// Error-estimation and aggregation studies on simulated detectors.
    SynthError(SynthErrorArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// `none`, `last`, a 0-based column index or a header name.
    #[arg(long, default_value = "none", value_parser = parse_label_column)]
    pub label_column: LabelColumn,

    /// Label value marking outliers when labels are not 0/1.
    #[arg(long)]
    pub outlier_label: Option<String>,

    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, default_value = "lof", value_parser = parse_detector)]
    pub detector: DetectorKind,

    #[arg(long, default_value = "care", value_parser = parse_mode)]
    pub mode: EnsembleMode,

    #[arg(long, default_value_t = 5)]
    pub k: usize,

    #[arg(long, default_value_t = 100)]
    pub bags: usize,

    #[arg(long, default_value_t = 15)]
    pub max_iter: usize,

    #[arg(long, default_value_t = 0.2)]
    pub confidence: f64,

    #[arg(long, default_value_t = 0.5)]
    pub prune_threshold: f64,

    #[arg(long, env = "CARE_SEED", default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "care-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset.
    #[command(flatten)]
    pub input: InputArgs,

    /// Score file with `index,score` rows.
    #[arg(long)]
    pub scores: PathBuf,

    /// Also write the precision-recall curve here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutlierArg {
    Uniform,
    PowerLaw,
}

impl From<OutlierArg> for OutlierKind {
    fn from(o: OutlierArg) -> Self {
        match o {
            OutlierArg::Uniform => OutlierKind::Uniform,
            OutlierArg::PowerLaw => OutlierKind::PowerLaw,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthBvArgs {
    /// JSON experiment spec; overrides the generator flags below.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    #[arg(long, default_value_t = 20)]
    pub dim: usize,

    #[arg(long, default_value_t = 3)]
    pub components: usize,

    #[arg(long, value_enum, default_value = "uniform")]
    pub outliers: OutlierArg,

    #[arg(long, default_value_t = 5)]
    pub train_sets: usize,

    #[arg(long, default_value = "lof", value_parser = parse_detector)]
    pub detector: DetectorKind,

    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13,15")]
    pub k_values: Vec<usize>,

    /// Comma-separated procedure names; all five by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_procedure)]
    pub procedures: Vec<Procedure>,

    #[arg(long, default_value_t = 10)]
    pub rounds: usize,

    #[arg(long, env = "CARE_SEED", default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "care-bv")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Study {
    /// Gap between true and estimated error rates.
    Gap,
    /// Accuracy of average, weighted and pruned-weighted voting.
    Aggregation,
}

#[derive(Debug, Args)]
pub struct SynthErrorArgs {
    #[arg(long, value_enum, default_value = "gap")]
    pub study: Study,

    #[arg(long, value_delimiter = ',', default_value = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub errors: Vec<f64>,

    #[arg(long, default_value_t = 1000)]
    pub points: usize,

    #[arg(long, default_value_t = 0.1)]
    pub outlier_fraction: f64,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    #[arg(long, default_value_t = 0.5)]
    pub prune_threshold: f64,

    #[arg(long, env = "CARE_SEED", default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "care-error")]
    pub out_dir: PathBuf,
}

fn parse_label_column(s: &str) -> Result<LabelColumn, String> {
    Ok(match s {
        "none" => LabelColumn::None,
        "last" => LabelColumn::Last,
        _ => match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        },
    })
}

fn parse_detector(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: care::CareError| e.to_string())
}

fn parse_mode(s: &str) -> Result<EnsembleMode, String> {
    s.parse().map_err(|e: care::CareError| e.to_string())
}

fn parse_procedure(s: &str) -> Result<Procedure, String> {
    s.parse().map_err(|e: care::CareError| e.to_string())
}
