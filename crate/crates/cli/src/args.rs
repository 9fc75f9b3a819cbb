use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pyrprune::prune::{DepthMode, RetainMode};

#[derive(Debug, Parser)]
#[command(name = "pyrprune", version, about = "Pyramid tiling, token pruning, distillation and evaluation runs")]
pub struct Cli {
    /// Worker threads for tile-parallel stages (default: all cores).
    #[arg(long, global = true, env = "DIP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an image pyramid and write its manifest and tiles.
    Build(BuildArgs),
    /// Run coarse-to-fine pruning over a pyramid manifest.
    Prune(PruneArgs),
    /// Train a focus stack on the synthetic hot-region task.
    Distill(DistillArgs),
    /// Token and FLOPs report for a pruning trace.
    Cost(CostArgs),
    /// Score traces or answers.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Derive unique object references from detection labels.
    Refgen(RefgenArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Input image (PPM/PGM; PNG with the `png` feature).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 336)]
    pub tile_size: usize,
    /// The halving chain stops once the shorter side is at or below this.
    #[arg(long, default_value_t = 1008)]
    pub min_side: usize,
    #[arg(long, default_value_t = 336)]
    pub thumbnail_size: usize,
    /// Ground sample distance of the original image, metres per pixel.
    #[arg(long)]
    pub gsd: Option<f64>,
    /// Write the manifest only.
    #[arg(long)]
    pub no_tiles: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Planted heatmap from a JSON file.
    Oracle,
    /// Exported attention maps, one `level{p}.attn` per level.
    File,
    /// A trained focus-stack checkpoint run on the image pixels.
    Rfm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RetainArg {
    Select,
    Concat,
}

impl From<RetainArg> for RetainMode {
    fn from(r: RetainArg) -> Self {
        match r {
            RetainArg::Select => RetainMode::Select,
            RetainArg::Concat => RetainMode::Concat,
        }
    }
}

fn parse_depth(s: &str) -> Result<DepthMode, String> {
    if s.eq_ignore_ascii_case("dynamic") {
        return Ok(DepthMode::Dynamic);
    }
    s.parse::<usize>()
        .map(DepthMode::Fixed)
        .map_err(|_| format!("expected 'dynamic' or a layer count, got '{s}'"))
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub provider: ProviderKind,
    /// Pruning config JSON; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of scored tokens kept per level [default: 0.25].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Key-tile count above which the loop prunes and stops [default: 40].
    #[arg(long)]
    pub nmax: Option<usize>,
    /// [default: select]
    #[arg(long, value_enum)]
    pub retain: Option<RetainArg>,
    /// `dynamic`, or a fixed number of layers counting the thumbnail [default: dynamic].
    #[arg(long, value_parser = parse_depth)]
    pub depth: Option<DepthMode>,
    /// LLM-side tokens per tile edge.
    #[arg(long, default_value_t = 12)]
    pub tokens_per_side: usize,
    #[arg(long, default_value_t = 24)]
    pub thumbnail_side: usize,
    /// Heatmap JSON for `--provider oracle`.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Directory of level maps for `--provider file`.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Stack checkpoint for `--provider rfm`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Encoder config JSON for `--provider rfm`; defaults to `encoder.json` beside the checkpoint.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Image pixels for `--provider rfm`; defaults to the manifest's image path.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Image id recorded in the trace, used to join recall regions.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Task config JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Trace JSON written by `prune`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Cost parameters JSON; defaults to the 7B-class model.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Also write the method comparison table as CSV.
    #[arg(long)]
    pub comparison: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Localization recall of retained tokens against ground-truth boxes.
    Recall(RecallArgs),
    /// Open-ended answer accuracy per question type.
    Vqa(VqaArgs),
}

#[derive(Debug, Args)]
pub struct RecallArgs {
    /// Trace JSON files, or directories searched for `trace.json`.
    #[arg(long, required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// JSONL of `{"image", "bbox"}` regions.
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VqaArgs {
    /// JSONL of `{"image", "question", "type", "answer"}`.
    #[arg(long)]
    pub questions: PathBuf,
    /// JSONL of `{"image", "question", "prediction"}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSON map of head word to synonyms.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSON map of child concept to parent.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefgenArgs {
    /// Labels as a JSON array, a single JSON object, or JSONL.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
