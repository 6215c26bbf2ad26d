use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use segma::eval::FeatureMap;
use segma::pipeline::{DataPlan, DataSource};
use segma::sweep::GridAxis;
use segma::TrainingConfig;

#[derive(Debug, Parser)]
#[command(name = "segma", version, about = "Semi-supervised Gaussian-mixture auto-encoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and per-epoch log.
    Train(TrainCmd),
    /// Report test error, FID proxy and interpolation FID of a checkpoint.
    Eval(EvalCmd),
    /// Decode samples drawn from one class component.
    Sample(SampleCmd),
    /// Decode the linear path between the codes of two test items.
    Interpolate(InterpolateCmd),
    /// Decode the style-transfer path of a test item to another class.
    Transfer(TransferCmd),
    /// Train and evaluate one model per cell of a two-parameter grid.
    Sweep(SweepCmd),
    /// Serve a checkpoint over HTTP.
    Serve(ServeCmd),
}

#[derive(Debug, Args, Clone)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// `synthetic` or a directory holding the MNIST IDX files.
    #[arg(long)]
    pub data: String,
    /// Number of labeled training items (stratified).
    #[arg(long)]
    pub labels: Option<usize>,
    /// Number of unlabeled training items.
    #[arg(long)]
    pub unlabeled: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Batch size, half of it labeled.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Comma-separated encoder hidden widths; the decoder mirrors them.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run training on a single worker thread.
    #[arg(long)]
    pub deterministic: bool,
}

impl TrainArgs {
    pub fn source(&self) -> DataSource {
        DataSource::parse(&self.data)
    }

    pub fn config(&self) -> TrainingConfig {
        let source = self.source();
        let mut config = source.reference_config();
        config.alpha = self.alpha;
        config.beta = self.beta;
        config.learning_rate = self.lr;
        config.seed = self.seed;
        config.deterministic = self.deterministic;
        if let Some(b) = self.batch {
            config.batch_size = b;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(d) = self.latent_dim {
            config.latent_dim = d;
        }
        if let Some(h) = &self.hidden {
            config = config.with_hidden(h.clone());
        }
        config
    }

    pub fn plan(&self) -> DataPlan {
        let mut plan = self.source().reference_plan(self.seed);
        if let Some(n) = self.labels {
            plan.n_labeled = n;
        }
        if let Some(n) = self.unlabeled {
            plan.n_unlabeled = Some(n);
        }
        plan
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint path; the log goes next to it with a `.log` suffix.
    #[arg(long, default_value = "segma.ckpt")]
    pub out: PathBuf,
    /// Training log path.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct EvalArgs {
    /// Generated samples per FID estimate.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// `raw_pixels` or `pca_50`; defaults to raw pixels for synthetic data and
    /// PCA-50 for image data.
    #[arg(long)]
    pub feature_map: Option<FeatureMap>,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: String,
    /// Seed of the evaluation draws; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the synthetic test set; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Also write the key-value report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the report as TSV here.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output TSV, one decoded sample per row; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterpolateCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Test-set index of the first endpoint.
    #[arg(long)]
    pub from: usize,
    /// Test-set index of the second endpoint.
    #[arg(long)]
    pub to: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Test-set index of the item to transfer.
    #[arg(long)]
    pub index: usize,
    /// Source class; inferred from the item's code when absent.
    #[arg(long)]
    pub source: Option<usize>,
    #[arg(long)]
    pub target: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Output TSV: class posteriors followed by the decoded item, one row per step.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Row axis, e.g. `alpha=0,5`.
    #[arg(long)]
    pub rows: GridAxis,
    /// Column axis, e.g. `beta=0,10`.
    #[arg(long)]
    pub cols: GridAxis,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Directory receiving accuracy.tsv, fid_proxy.tsv and cells.tsv.
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Refuse to start unless the checkpoint has this latent dimension.
    #[arg(long)]
    pub latent_dim: Option<usize>,
}
