use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, GalleryMode, DEFAULT_KS};
use crate::fusion::Pooling;
use crate::trainer::TrainConfig;
use crate::tripletgen::BuildConfig;

#[derive(Debug, Parser)]
#[command(name = "tfcovr", version, about = "Composed video retrieval engine")]
pub struct Cli {
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true, env = "TFCOVR_THREADS")]
    pub threads: Option<usize>,

    /// TOML file with defaults; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an embedding table and its manifest.
    Ingest(IngestArgs),
    /// Pair labels, generate modifications, split, and enumerate triplets.
    GenTriplets(GenArgs),
    /// Dataset statistics for a generated triplet directory.
    Stats(StatsArgs),
    /// Train the frame-pooling classifier.
    TrainStage1(Stage1Args),
    /// Train the projection and fusion layers contrastively.
    TrainStage2(Stage2Args),
    /// Score a checkpoint on the test queries.
    Eval(EvalArgs),
    /// Sweep the hard-negative weighting β.
    AblateHn(AblateArgs),
    /// Render saved reports as tables.
    Report(ReportArgs),
    /// Write the synthetic benchmark corpus.
    MakeFixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Write the summary JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub clips: PathBuf,
    /// Caption embedding table keyed by label id.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Pair-to-text JSONL produced by an external generator.
    #[arg(long)]
    pub modifications: Option<PathBuf>,
    /// Allow/deny JSONL of pair keys.
    #[arg(long)]
    pub overrides: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, visible_alias = "seed")]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Output directory of gen-triplets.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub clips: PathBuf,
    /// Print the full-scale reference column.
    #[arg(long)]
    pub reference: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct LossFlags {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Backpropagate through the hard-negative weights too.
    #[arg(long)]
    pub differentiate_weights: bool,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EvalFlags {
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// `all` (every test clip) or `targets-only`.
    #[arg(long)]
    pub gallery: Option<String>,
    /// Keep each query clip in its own gallery.
    #[arg(long)]
    pub include_query: bool,
}

#[derive(Debug, Args)]
pub struct Stage1Args {
    /// Frame-sequence embedding table.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub clips: PathBuf,
    /// Label catalog; fixes the class count and order.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "mean")]
    pub pooling: Pooling,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Stage2Args {
    /// Clip embedding table.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Modification-text embedding table keyed by text.
    #[arg(long)]
    pub text_embeddings: PathBuf,
    /// Output directory of gen-triplets.
    #[arg(long)]
    pub data: PathBuf,
    /// Clip catalog, needed for label-deduplicated batches.
    #[arg(long)]
    pub clips: Option<PathBuf>,
    #[arg(long)]
    pub dedup_batch_labels: bool,
    /// Add a trainable projection on the target side.
    #[arg(long)]
    pub target_projection: bool,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub loss: LossFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Fusion checkpoint. Without one, `--untrained` scores a fresh head.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub untrained: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub text_embeddings: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_values_t = crate::ablation::DEFAULT_BETAS)]
    pub betas: Vec<f64>,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub text_embeddings: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub loss: LossFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON (repeatable).
    #[arg(long)]
    pub eval: Vec<PathBuf>,
    /// Ablation grid JSON.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Stats JSON from gen-triplets.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub clusters: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Values a `--config` TOML file may set.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub threshold: Option<f64>,
    pub split_seed: Option<u64>,
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub weight_decay: Option<f64>,
    pub eval_every: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<Vec<usize>>,
    pub gallery: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build(&self, flags: &GenArgs) -> BuildConfig {
        let d = BuildConfig::default();
        BuildConfig {
            threshold: flags.threshold.or(self.data.threshold).unwrap_or(d.threshold),
            test_fraction: flags
                .test_fraction
                .or(self.data.test_fraction)
                .unwrap_or(d.test_fraction),
            split_seed: flags.split_seed.or(self.data.split_seed).unwrap_or(d.split_seed),
        }
    }

    /// Merge flags over file values over defaults. `batch_default` applies
    /// when neither source names a batch size.
    pub fn train(&self, t: &TrainFlags, l: Option<&LossFlags>, batch_default: usize) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.lr = t.lr.or(self.train.lr).unwrap_or(cfg.lr);
        cfg.batch_size = t.batch.or(self.train.batch).unwrap_or(batch_default);
        cfg.epochs = t.epochs.or(self.train.epochs).unwrap_or(cfg.epochs);
        cfg.seed = t.seed.or(self.train.seed).unwrap_or(cfg.seed);
        cfg.eval_every = t.eval_every.or(self.train.eval_every).unwrap_or(cfg.eval_every);
        cfg.adamw.weight_decay = t
            .weight_decay
            .or(self.train.weight_decay)
            .unwrap_or(cfg.adamw.weight_decay);
        let l = l.cloned().unwrap_or_default();
        cfg.loss.tau = l.tau.or(self.loss.tau).unwrap_or(cfg.loss.tau);
        cfg.loss.alpha = l.alpha.or(self.loss.alpha).unwrap_or(cfg.loss.alpha);
        cfg.loss.beta = l.beta.or(self.loss.beta).unwrap_or(cfg.loss.beta);
        cfg.loss.differentiate_weights = l.differentiate_weights;
        cfg
    }

    pub fn eval(&self, e: &EvalFlags) -> Result<EvalOptions> {
        let ks =
            e.k.clone()
                .or_else(|| self.eval.k.clone())
                .unwrap_or_else(|| DEFAULT_KS.to_vec());
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        let gallery = match e.gallery.as_deref().or(self.eval.gallery.as_deref()) {
            Some(g) => g.parse()?,
            None => GalleryMode::All,
        };
        Ok(EvalOptions {
            ks,
            gallery,
            include_query: e.include_query,
        })
    }
}
