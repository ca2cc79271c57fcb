use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kann_core::koopman::{BasisMethod, RankChoice};
use kann_core::spectral::ProjectorKind;

use crate::usage;

#[derive(Debug, Parser)]
#[command(name = "kann", version, about = "Koopman analysis of recurrent network hidden states")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Dataset manifest; defaults to `<out>/manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Directory for all outputs, including report.json.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Basis rank; defaults to 99.9% of the singular-value energy.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Decay threshold for memory horizons.
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub epsilon: f64,
    #[arg(long, global = true, value_enum, default_value_t = BasisArg::Svd)]
    pub basis: BasisArg,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

impl Global {
    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(usage(format!("--epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.rank == Some(0) {
            return Err(usage("--rank must be positive"));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("manifest.json"))
    }

    pub fn rank_choice(&self) -> RankChoice {
        self.rank.map_or_else(RankChoice::default, RankChoice::Fixed)
    }

    pub fn note(&self, message: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", message.as_ref());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Svd,
    Pca,
}

impl From<BasisArg> for BasisMethod {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Svd => BasisMethod::Svd,
            BasisArg::Pca => BasisMethod::PcaCentered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectorArg {
    /// `B |V_I U_I| Bᵀ`, elementwise modulus.
    Modulus,
    /// `B Re(V_I U_I) Bᵀ`, an exact oblique projector.
    Real,
}

impl From<ProjectorArg> for ProjectorKind {
    fn from(p: ProjectorArg) -> Self {
        match p {
            ProjectorArg::Modulus => ProjectorKind::Modulus,
            ProjectorArg::Real => ProjectorKind::RealPart,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its manifest.
    Synth {
        #[command(subcommand)]
        generator: Generator,
    },
    /// Compute the basis and Koopman operator and start report.json.
    Fit(FitArgs),
    /// Write eigenvalues and memory horizons.
    Spectrum(SpectrumArgs),
    /// Projection magnitudes and eigen-subspace reconstructions.
    Project(ProjectArgs),
    /// One-step and multi-step prediction errors, plus readout agreement.
    Predict(PredictArgs),
    /// Silhouette curves for raw, PCA and Koopman embeddings.
    Silhouette(SilhouetteArgs),
    /// Validate report.json and print a summary.
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Generator {
    /// Trajectories of a seeded stable linear map.
    Linear(LinearArgs),
    /// Hidden states of a sentiment-counting recurrent network.
    Counter(CounterArgs),
    /// Two labelled classes sharing linear dynamics around offset centres.
    TwoClass(TwoClassArgs),
}

#[derive(Debug, Args)]
pub struct LinearArgs {
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub s: usize,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    /// Per-step noise, relative to the state norm.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.95)]
    pub spectral_radius: f64,
    /// Allow a spectral radius above the stability limit.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CounterArgs {
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub s: usize,
    #[arg(long, default_value_t = 50)]
    pub len: usize,
    #[arg(long, default_value_t = 0.6)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_sentiment: f64,
    #[arg(long, default_value_t = 0.9)]
    pub class_bias: f64,
    /// Only the first this-many tokens carry sentiment.
    #[arg(long)]
    pub evidence_steps: Option<usize>,
    /// Every token is positive.
    #[arg(long, conflicts_with_all = ["evidence_steps"])]
    pub positive_only: bool,
}

#[derive(Debug, Args)]
pub struct TwoClassArgs {
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 40)]
    pub s: usize,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Distance between the class centres; 0 gives one shared generator.
    #[arg(long, default_value_t = 20.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Fit over padded steps too, ignoring sample lengths.
    #[arg(long)]
    pub include_padding: bool,
    /// Number of dominant modes to record, before conjugate closure.
    #[arg(long, default_value_t = 4)]
    pub dominant: usize,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long, default_value_t = 4)]
    pub dominant: usize,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Comma-separated mode indices, closed under conjugation.
    #[arg(long, conflicts_with = "dominant")]
    pub modes: Option<String>,
    /// Use this many dominant modes instead of the report's selection.
    #[arg(long)]
    pub dominant: Option<usize>,
    /// Write magnitudes.csv with the summed projection magnitudes.
    #[arg(long)]
    pub magnitudes: bool,
    /// Write projector.npy and projected.npy.
    #[arg(long)]
    pub subspace: bool,
    #[arg(long, value_enum, default_value_t = ProjectorArg::Modulus)]
    pub projector: ProjectorArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Rollout length for multi-step errors.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct SilhouetteArgs {
    /// Embedding dimension for the PCA and Koopman curves.
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    /// Use eigen-coordinate moduli instead of (Re, Im) pairs.
    #[arg(long)]
    pub modulus_only: bool,
}
