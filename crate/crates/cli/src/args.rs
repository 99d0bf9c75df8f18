//! Flag definitions. Every subcommand's flags double as the keys of its
//! `--config` JSON file (kebab-case); flags given on the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "wetroad", version, about = "Acoustic road-wetness classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic wet/dry corpus (manifest plus WAV files).
    Synth(SynthArgs),
    /// Compute ASF or third-octave features for every trip of a manifest.
    Extract(ExtractArgs),
    /// Rank features by information gain or pick a CFS subset.
    Select(SelectArgs),
    /// Train one LSTM, BLSTM or SVM model.
    Train(TrainArgs),
    /// Run the six-experiment cross-route evaluation.
    Eval(EvalArgs),
    /// Write per-frame predictions of a trained model.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetArg {
    Asf,
    Octave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Ig,
    Cfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscretizationArg {
    Mdl,
    EqualWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Lstm,
    Blstm,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolArg {
    CrossRoute,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthArgs {
    /// JSON file with values for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Generator spec (JSON); built-in defaults when omitted.
    #[arg(long)]
    #[serde(default)]
    pub spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExtractArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trip manifest; audio paths resolve relative to it.
    #[arg(long)]
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Feature set [default: asf].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub set: Option<FeatureSetArg>,
    /// Output feature CSV.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SelectArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Feature CSV.
    #[arg(long)]
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Selection method [default: ig].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub method: Option<MethodArg>,
    /// Number of top-ranked features kept by IG [default: 20].
    #[arg(long)]
    #[serde(default)]
    pub top_k: Option<usize>,
    /// Non-improving expansions before CFS search stops [default: 5].
    #[arg(long)]
    #[serde(default)]
    pub max_stale: Option<usize>,
    /// Discretization [default: mdl].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub discretization: Option<DiscretizationArg>,
    /// Bins for equal-width discretization [default: 10].
    #[arg(long)]
    #[serde(default)]
    pub bins: Option<usize>,
    /// Output selection report (JSON).
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Feature CSV.
    #[arg(long)]
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Trip manifest providing route ids.
    #[arg(long)]
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Classifier [default: blstm].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub arch: Option<ArchArg>,
    /// Hidden layer sizes as A-B-C [default: 216-216-216].
    #[arg(long)]
    #[serde(default)]
    pub layout: Option<String>,
    /// Learning rate [default: 1e-5].
    #[arg(long)]
    #[serde(default)]
    pub lr: Option<f64>,
    /// Seed for initialisation and shuffling [default: 0].
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Route held out for early stopping; all routes train when omitted.
    #[arg(long)]
    #[serde(default)]
    pub val_route: Option<u32>,
    /// Epoch budget [default: 100].
    #[arg(long)]
    #[serde(default)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 10].
    #[arg(long)]
    #[serde(default)]
    pub patience: Option<usize>,
    /// Frames per training subsequence [default: 100].
    #[arg(long)]
    #[serde(default)]
    pub subsequence_len: Option<usize>,
    /// Peephole connections [default: true].
    #[arg(long)]
    #[serde(default)]
    pub peepholes: Option<bool>,
    /// SVM regularisation [default: 1e-3].
    #[arg(long)]
    #[serde(default)]
    pub c: Option<f64>,
    /// SVM kernel [default: linear].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub kernel: Option<KernelArg>,
    /// RBF width γ [default: 1].
    #[arg(long)]
    #[serde(default)]
    pub gamma: Option<f64>,
    /// SMO KKT tolerance [default: 1e-3].
    #[arg(long)]
    #[serde(default)]
    pub tol: Option<f64>,
    /// SMO iteration budget in multiples of the example count [default: 1000].
    #[arg(long)]
    #[serde(default)]
    pub max_passes: Option<usize>,
    /// Selection report restricting the feature columns.
    #[arg(long)]
    #[serde(default)]
    pub selection: Option<PathBuf>,
    /// Output model (JSON).
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trip manifest providing route ids.
    #[arg(long)]
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Feature CSV.
    #[arg(long)]
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Evaluation protocol [default: cross-route].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub protocol: Option<ProtocolArg>,
    /// Classifier [default: blstm].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub arch: Option<ArchArg>,
    /// Hidden layer sizes as A-B-C [default: 216-216-216].
    #[arg(long)]
    #[serde(default)]
    pub layout: Option<String>,
    /// Learning rate [default: 1e-5].
    #[arg(long)]
    #[serde(default)]
    pub lr: Option<f64>,
    /// Seed for initialisation and shuffling [default: 0].
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    /// Epoch budget [default: 100].
    #[arg(long)]
    #[serde(default)]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 10].
    #[arg(long)]
    #[serde(default)]
    pub patience: Option<usize>,
    /// Frames per training subsequence [default: 100].
    #[arg(long)]
    #[serde(default)]
    pub subsequence_len: Option<usize>,
    /// Peephole connections [default: true].
    #[arg(long)]
    #[serde(default)]
    pub peepholes: Option<bool>,
    /// SVM regularisation [default: 1e-3].
    #[arg(long)]
    #[serde(default)]
    pub c: Option<f64>,
    /// SVM kernel [default: linear].
    #[arg(long, value_enum)]
    #[serde(default)]
    pub kernel: Option<KernelArg>,
    /// RBF width γ [default: 1].
    #[arg(long)]
    #[serde(default)]
    pub gamma: Option<f64>,
    /// SMO KKT tolerance [default: 1e-3].
    #[arg(long)]
    #[serde(default)]
    pub tol: Option<f64>,
    /// SMO iteration budget in multiples of the example count [default: 1000].
    #[arg(long)]
    #[serde(default)]
    pub max_passes: Option<usize>,
    /// Selection report restricting the feature columns.
    #[arg(long)]
    #[serde(default)]
    pub selection: Option<PathBuf>,
    /// Speed threshold for the stratified UAR, mph [default: 2.9].
    #[arg(long)]
    #[serde(default)]
    pub speed_threshold: Option<f64>,
    /// Output report (JSON).
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Timeline CSV [default: report path with .timeline.csv].
    #[arg(long)]
    #[serde(default)]
    pub timeline: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained model (JSON).
    #[arg(long)]
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Feature CSV.
    #[arg(long)]
    #[serde(default)]
    pub features: Option<PathBuf>,
    /// Selection report used when the model was trained.
    #[arg(long)]
    #[serde(default)]
    pub selection: Option<PathBuf>,
    /// Output timeline CSV.
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Overlays flags given on the command line onto the config file's values.
pub fn merge_config<T>(flags: &T, config: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let over = serde_json::to_value(flags).map_err(wetroad::Error::from)?;
    let Some(path) = config else {
        return Ok(serde_json::from_value(over).map_err(wetroad::Error::from)?);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let file: T = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let mut base = serde_json::to_value(file).map_err(wetroad::Error::from)?;
    if let (Some(base), Some(over)) = (base.as_object_mut(), over.as_object()) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(serde_json::from_value(base).map_err(wetroad::Error::from)?)
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

pub fn parse_layout(text: &str) -> Result<Vec<usize>, CliError> {
    let layout: Option<Vec<usize>> = text
        .split('-')
        .map(|p| p.trim().parse().ok().filter(|&n: &usize| n > 0))
        .collect();
    layout.ok_or_else(|| CliError::Usage(format!("layout '{text}' is not of the form A-B-C")))
}
