//! Run configuration schema and artifact provenance.
//!
//! Every artifact file embeds the fully resolved configuration and seed, so
//! any output can be re-derived from its own metadata. JSON artifacts carry a
//! `provenance` object; CSV/JSONL/SVG artifacts carry `#`-prefixed header
//! lines with the same content.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use xmodal::arch::{ArchitectureSpec, Modality};
use xmodal::data::synthetic::SyntheticConfig;
use xmodal::dream::DreamConfig;
use xmodal::train::TrainConfig;

/// Exit-code mapping: 1 for configuration/validation failures, 2 for
/// failures while the command is running.
#[derive(Debug)]
pub struct CliError {
    pub exit: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(msg: impl std::fmt::Display) -> Self {
        CliError {
            exit: 1,
            message: msg.to_string(),
        }
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError {
            exit: 2,
            message: msg.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Where the examples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Jsonl(PathBuf),
}

/// How an architecture is obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchSource {
    Spec(ArchitectureSpec),
    SpecPath(PathBuf),
    Allocate(AllocateRequest),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocateRequest {
    /// Inline baseline; omitted means the 21/42/84 paper baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ArchitectureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_path: Option<PathBuf>,
    pub scores: BTreeMap<Modality, f64>,
    pub k: f64,
    pub strategy: String,
    #[serde(default = "default_cross_fraction")]
    pub cross_fraction: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

pub fn default_cross_fraction() -> f64 {
    xmodal::alloc::DEFAULT_CROSS_FRACTION
}

pub fn default_tolerance() -> f64 {
    xmodal::alloc::DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArch {
    pub name: String,
    #[serde(flatten)]
    pub source: ArchSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    /// Pairs of model names whose per-fold AUCs are t-tested.
    #[serde(default)]
    pub comparisons: Vec<(String, String)>,
    /// Model the metrics table's p-value row compares against (defaults to
    /// the last configured model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default = "default_histogram_edges")]
    pub histogram_edges: Vec<f64>,
    #[serde(default = "default_histogram_threshold")]
    pub histogram_threshold: f64,
}

fn default_k_folds() -> usize {
    10
}

fn default_histogram_edges() -> Vec<f64> {
    vec![
        -20.0, -8.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 8.0, 20.0,
    ]
}

fn default_histogram_threshold() -> f64 {
    0.5
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_folds: default_k_folds(),
            comparisons: Vec::new(),
            reference: None,
            histogram_edges: default_histogram_edges(),
            histogram_threshold: default_histogram_threshold(),
        }
    }
}

/// Configuration of `train` and `crossval` runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archs: Option<Vec<NamedArch>>,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Exactly one architecture source; named models must be unique.
    pub fn named_archs(&self) -> CliResult<Vec<NamedArch>> {
        match (&self.arch, &self.archs) {
            (Some(_), Some(_)) => Err(CliError::validation(
                "invalid field `arch`: give either `arch` or `archs`, not both",
            )),
            (None, None) => Err(CliError::validation(
                "invalid field `arch`: one of `arch` or `archs` is required",
            )),
            (Some(a), None) => Ok(vec![NamedArch {
                name: "model".to_string(),
                source: a.clone(),
            }]),
            (None, Some(list)) => {
                if list.is_empty() {
                    return Err(CliError::validation("invalid field `archs`: empty list"));
                }
                let mut seen = std::collections::BTreeSet::new();
                for a in list {
                    if !seen.insert(a.name.clone()) {
                        return Err(CliError::validation(format!(
                            "invalid field `archs`: duplicate model name `{}`",
                            a.name
                        )));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

/// Configuration of `generate`: a synthetic-data config plus an output dir.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    #[serde(flatten)]
    pub synthetic: SyntheticConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Configuration of `dream`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DreamRunConfig {
    /// Path to a `train` artifact (checkpoint plus normalization stats).
    pub checkpoint: PathBuf,
    pub dream: DreamConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Configuration of `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub models: Vec<ReportModel>,
    /// Column the p-value row tests against (defaults to the last model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportModel {
    pub name: String,
    pub crossval_json: PathBuf,
}

/// Full resolved configuration and seed embedded in every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> CliResult<Self> {
        Ok(Provenance {
            tool: "xmodal".to_string(),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config).map_err(CliError::runtime)?,
        })
    }

    /// `#`-prefixed header lines for CSV/JSONL/SVG artifacts.
    pub fn comment_header(&self) -> String {
        let compact = serde_json::to_string(&self.config).unwrap_or_default();
        format!(
            "# tool: xmodal\n# command: {}\n# seed: {}\n# config: {compact}\n",
            self.command, self.seed
        )
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("bad JSON in `{}`: {e}", path.display())))
}

pub fn write_artifact(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(CliError::runtime)?;
    }
    std::fs::write(path, contents).map_err(CliError::runtime)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json_artifact<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    write_artifact(path, &text)
}
