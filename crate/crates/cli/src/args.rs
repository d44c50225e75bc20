use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Embodied QA data generation, policy training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "forge", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Point and box grounding QA from a mask corpus.
    GenGrounding(GenGrounding),
    /// Spatial QA from scene annotations.
    GenSpatial(GenSpatial),
    /// Planning samples from filtered agent rollouts.
    GenPlanning(GenPlanning),
    /// In-domain QA annotations of simulator states.
    GenIndomain(GenIndomain),
    /// Scripted-expert demonstrations.
    CollectDemos(CollectDemos),
    /// Train a flow-matching policy on demonstrations.
    TrainPolicy(TrainPolicy),
    /// Closed-loop evaluation of a checkpoint or a baseline policy.
    EvalPolicy(EvalPolicy),
    /// Context-encoder initialization comparison.
    Experiment(Experiment),
    /// Check a JSONL file against its schema.
    Validate(Validate),
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::GenGrounding(_) => "gen-grounding",
            Verb::GenSpatial(_) => "gen-spatial",
            Verb::GenPlanning(_) => "gen-planning",
            Verb::GenIndomain(_) => "gen-indomain",
            Verb::CollectDemos(_) => "collect-demos",
            Verb::TrainPolicy(_) => "train-policy",
            Verb::EvalPolicy(_) => "eval-policy",
            Verb::Experiment(_) => "experiment",
            Verb::Validate(_) => "validate",
        }
    }
}

/// Flags shared by every generator and trainer.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` settings file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Outputs do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GenGrounding {
    #[command(flatten)]
    pub common: Common,
    /// Mask records (JSONL).
    #[arg(long = "in", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Use N synthetic mask records instead of `--in`.
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Task mix, e.g. `box:0.4,point:0.4,text:0.2`.
    #[arg(long)]
    pub mix: Option<String>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// `uniform` or `centroid`.
    #[arg(long)]
    pub point_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenSpatial {
    #[command(flatten)]
    pub common: Common,
    /// Scene records (JSONL).
    #[arg(long = "in", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Use N random scenes instead of `--in`.
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_scene: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenPlanning {
    #[command(flatten)]
    pub common: Common,
    /// Only `toy` is available.
    #[arg(long, default_value = "toy")]
    pub env: String,
    /// `expert` or `random`.
    #[arg(long)]
    pub agent: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub task: Option<String>,
    /// Exploration rate of the random agent.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Archive of successful trajectories; defaults next to `--out`.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Simulator geometry file.
    #[arg(long)]
    pub task_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenIndomain {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Annotate every k-th state.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub task_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectDemos {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub task_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPolicy {
    #[command(flatten)]
    pub common: Common,
    /// Demonstrations (episode JSONL).
    #[arg(long)]
    pub demos: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `entities` or `encoder` (randomly initialized image encoder).
    #[arg(long)]
    pub context: Option<String>,
    /// `zero-head` or `random-head`.
    #[arg(long)]
    pub init: Option<String>,
    /// Per-step loss CSV; defaults next to `--out`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPolicy {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, required_unless_present = "policy")]
    pub checkpoint: Option<PathBuf>,
    /// Baseline instead of a checkpoint: `expert` or `random`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub policy: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Summary JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every evaluated episode (JSONL).
    #[arg(long)]
    pub episodes_out: Option<PathBuf>,
    #[arg(long)]
    pub task_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Experiment {
    /// Matrix file: variants, seeds and training settings.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct Validate {
    pub file: PathBuf,
    /// Expected schema; by default each record's own `schema` key is used.
    #[arg(long)]
    pub schema: Option<String>,
}
