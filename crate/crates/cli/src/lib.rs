//! Command-line front end for the few-shot side-information pipeline.
//!
//! One subcommand per pipeline stage: knowledge-matrix construction,
//! dataset synthesis, base training, fine-tuning with ablation switches,
//! augmentation previews, bound evaluation, and matrix format export.
//! Every run writes a `manifest.json` (resolved configuration, version,
//! seeds) into its output directory; runs with identical manifests
//! produce byte-identical artifacts.
//!
//! Failures exit with status 1 and a single machine-parsable JSON line
//! `{"error":"..."}` on stderr.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

pub use manifest::Manifest;

/// Version string recorded in every manifest.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "fewshot",
    version,
    about = "Few-shot representation learning with side information"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a knowledge matrix from side-information files.
    Knowledge(KnowledgeArgs),
    /// Generate the synthetic shape dataset plus side-information files.
    Dataset(DatasetArgs),
    /// Stage one: train on the base split.
    TrainBase(TrainArgs),
    /// Stage two: fine-tune on the k-shot pool with CCL and augmentation.
    FineTune(FineTuneArgs),
    /// Dump every intermediate of one counterfactual augmentation.
    AugmentPreview(PreviewArgs),
    /// Evaluate or sweep the generalization-bound formulas.
    Bounds(BoundsArgs),
    /// Convert matrices between the binary format and CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct KnowledgeArgs {
    /// Construction case 1-5 (default 3: embeddings for base-base pairs,
    /// attribute labels elsewhere)
    #[arg(long, default_value_t = 3)]
    case: u8,
    /// Attribute-label JSON {category: [0/1,..]}; fixes the category order
    #[arg(long)]
    labels: PathBuf,
    /// Directory of per-category embedding matrices (cases 1 and 3)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// How many leading categories count as base (case 3)
    #[arg(long, default_value_t = 0)]
    base_count: usize,
    /// Category word-vector matrix, one row per category (case 4)
    #[arg(long)]
    category_words: Option<PathBuf>,
    /// Attribute word-vector matrix, one row per attribute (case 5)
    #[arg(long)]
    attribute_words: Option<PathBuf>,
    /// 1x300 matrix standing in for absent attributes (case 5)
    #[arg(long)]
    null_word: Option<PathBuf>,
    /// Clustering count for embedding similarity (default 5)
    #[arg(long, default_value_t = 5)]
    cluster_count: usize,
    /// Clustering seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset config JSON; flags below override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    base_categories: Option<usize>,
    #[arg(long)]
    novel_categories: Option<usize>,
    /// Annotated instances per category in the fine-tuning pool
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    samples_per_base: Option<usize>,
    #[arg(long)]
    test_per_category: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Attribute bits per category vector (default 64)
    #[arg(long)]
    attribute_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also dump every image as a portable pixmap
    #[arg(long)]
    export_images: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Training-config overrides shared by both stages. Flags mirror the
/// config keys one-to-one; absent flags fall back to the config file.
#[derive(Debug, Args, Clone)]
struct TrainOverrides {
    /// Training config JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shots per category in the fine-tuning pool (default 5)
    #[arg(long)]
    k_shot: Option<usize>,
    /// Contrastive temperature (default 0.2)
    #[arg(long)]
    tau: Option<f64>,
    /// Classification weight (default 1)
    #[arg(long)]
    lambda1: Option<f64>,
    /// Regression weight (default 1)
    #[arg(long)]
    lambda2: Option<f64>,
    /// Contrastive weight (default 1)
    #[arg(long)]
    lambda3: Option<f64>,
    /// Per-image augmentation probability (default 0.05)
    #[arg(long)]
    epsilon: Option<f64>,
    /// Erase threshold on the normalized attribution map (default 0.8)
    #[arg(long)]
    erase_threshold: Option<f64>,
    /// Counter categories per class (default 3)
    #[arg(long)]
    k_e: Option<usize>,
    /// Prototype cluster centers per category (default 1)
    #[arg(long)]
    n_cluster_centers: Option<usize>,
    /// Knowledge-matrix case (default 3)
    #[arg(long)]
    knowledge_case: Option<u8>,
    /// Clustering count for embedding-based knowledge matrices (default 5)
    #[arg(long)]
    cluster_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Disable the contrastive branch
    #[arg(long)]
    no_ccl: bool,
    /// Replace the knowledge matrix by all-ones
    #[arg(long)]
    no_knowledge_matrix: bool,
    /// Use raw bank entries instead of cluster centers
    #[arg(long)]
    no_clustering: bool,
    /// Disable counterfactual augmentation
    #[arg(long)]
    no_counterfactual: bool,
    /// Replace counterfactual masking by the random-erasing baseline
    #[arg(long)]
    random_mask_baseline: bool,
    /// Skip L2 normalization of projected embeddings
    #[arg(long)]
    no_normalize: bool,
    /// Freeze the second convolution during fine-tuning too
    #[arg(long)]
    freeze_all_conv: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory produced by `dataset`
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FineTuneArgs {
    /// Dataset directory produced by `dataset`
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint directory from `train-base`
    #[arg(long)]
    params: PathBuf,
    /// Knowledge-matrix CSV; defaults to case 2 built from the dataset's
    /// attribute table
    #[arg(long)]
    zeta: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    /// Dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint directory
    #[arg(long)]
    params: PathBuf,
    /// Knowledge-matrix CSV; defaults to case 2 from the dataset
    #[arg(long)]
    zeta: Option<PathBuf>,
    /// Which split to preview from: base-train, novel-shots, or test
    #[arg(long, default_value = "novel-shots")]
    split: String,
    /// Image index within the split
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Counter categories considered (default 3)
    #[arg(long, default_value_t = 3)]
    k_e: usize,
    /// Erase threshold (default 0.8)
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(subcommand)]
    action: BoundsAction,
}

#[derive(Debug, Subcommand)]
enum BoundsAction {
    /// Evaluate one formula and print the result as JSON
    Eval {
        /// One of lemma1, thm1, prop1, thm2
        #[arg(long)]
        formula: String,
        /// Bound-input JSON file; missing fields use defaults
        #[arg(long)]
        params: PathBuf,
    },
    /// Sweep one input over a range and write a CSV grid
    Sweep {
        /// One of lemma1, thm1, prop1, thm2
        #[arg(long)]
        formula: String,
        #[arg(long)]
        params: PathBuf,
        /// Field to vary: lambda_c, lambda_g, delta, n_novel, n_real, k_e
        #[arg(long)]
        vary: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Input matrix (.fsm or .csv)
    #[arg(long)]
    input: PathBuf,
    /// Output matrix; format chosen by extension
    #[arg(long)]
    output: PathBuf,
}

/// Entry point shared by the binary and the test suite. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            emit_error(&e.to_string());
            return 1;
        }
    };
    let result = match cli.command {
        Command::Knowledge(args) => commands::knowledge(args),
        Command::Dataset(args) => commands::dataset(args),
        Command::TrainBase(args) => commands::train_base(args),
        Command::FineTune(args) => commands::fine_tune(args),
        Command::AugmentPreview(args) => commands::augment_preview(args),
        Command::Bounds(args) => commands::bounds(args),
        Command::Export(args) => commands::export(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            emit_error(&e.to_string());
            1
        }
    }
}

fn emit_error(message: &str) {
    let flat: String = message.split_whitespace().collect::<Vec<_>>().join(" ");
    let line = serde_json::json!({ "error": flat });
    eprintln!("{line}");
}
