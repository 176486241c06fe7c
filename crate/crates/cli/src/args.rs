use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "neurotraj", version, about = "Neural trajectories of a handwriting-synthesis LSTM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Run-configuration overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Number of priming styles.
    #[arg(long)]
    pub styles: Option<usize>,
    /// Leave out the unprimed condition.
    #[arg(long)]
    pub no_unprimed: bool,
    /// Target text; repeat for several.
    #[arg(long = "text")]
    pub texts: Vec<String>,
    #[arg(long)]
    pub seeds_per_condition: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub units: Option<usize>,
    #[arg(long)]
    pub sequences_per_style: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gpfa_max_iter: Option<usize>,
    /// Window length for EM fitting; 0 fits whole trials.
    #[arg(long)]
    pub seg_length: Option<usize>,
    /// Report symmetrized (Jeffreys) KL instead of directed KL.
    #[arg(long)]
    pub jeffreys: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Trajectories,
    Kl,
    Chars,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-style stroke corpus.
    Corpus {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
    },
    /// Train the generator on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        /// Corpus JSON from `corpus`; generated from the config when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Sample handwriting and record activations of all layers.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        net: PathBuf,
        /// Style id to prime with (0 = unprimed).
        #[arg(long, default_value_t = 0)]
        style: u32,
        /// Number of seeds to draw.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Median-filter one layer of a bundle and drop degenerate units.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Layer index: 0, 1 or 2.
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Fit GPFA to one layer of a bundle.
    GpfaFit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        bundle: PathBuf,
        /// Layer index: 0, 1 or 2.
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Project trials onto the top orthonormalized GPFA dimensions.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// KL matrix over conditions and the style separation test.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Render a figure.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// KL CSV for `--kind kl`.
        #[arg(long)]
        kl_csv: Option<PathBuf>,
        #[arg(long)]
        style: Option<u32>,
        #[arg(long = "text-id")]
        text_id: Option<u32>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Characters for `--kind chars`.
        #[arg(long, default_value = "ah")]
        chars: String,
    },
    /// Run the full experiment.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        over: Overrides,
    },
}
