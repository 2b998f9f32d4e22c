//! Experiment configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! method = "invenio"            # invenio | shared | transfer | independent
//! out = "runs/planted"          # optional; --out wins
//!
//! [database]
//! heldout_fraction = 0.3
//! # exactly one of the three sources below
//! synthetic = { k = 12, n_clusters = 3, dim = 8, n_per_task = 100 }
//! # domain = { samples = 100, size = 16, classes = 10 }
//! # file = "tasks.smdb"
//!
//! [model]
//! kind = "mlp"                  # mlp | task_convnet | domain_convnet
//! hidden = [16]
//!
//! [meta]                        # outer-loop hyperparameters
//! alpha = 0.1
//! n_iter = 200
//!
//! [analysis]
//! d = 2
//! symmetrize = true
//! n_clusters = 3                # default: number of planted groups
//!
//! [transfer]
//! pretrain_steps = 200
//! pretrain_lr = 0.1
//! ```
//!
//! The root `seed` is copied into `meta.seed` and seeds the database
//! generator and the held-out split; every component derives its own stream
//! from it by tag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use structmeta::metaengine::{MetaConfig, TransferConfig};
use structmeta::taskgen::TransformSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Invenio,
    Shared,
    Transfer,
    Independent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Invenio => "invenio",
            Method::Shared => "shared",
            Method::Transfer => "transfer",
            Method::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub k: usize,
    pub n_clusters: usize,
    pub dim: usize,
    pub n_per_task: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub conflicting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// Directory holding CIFAR-10 binary batches. Without it a procedural
    /// image base is generated.
    #[serde(default)]
    pub cifar_dir: Option<PathBuf>,
    /// Base images (CIFAR: at most this many records).
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Side length of procedural images.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Defaults to the standard 53-variant list.
    #[serde(default)]
    pub transforms: Option<Vec<TransformSpec>>,
}

fn default_samples() -> usize {
    100
}
fn default_size() -> usize {
    16
}
fn default_classes() -> usize {
    10
}
fn default_heldout() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Per-class held-out fraction applied when the database is not yet split.
    #[serde(default = "default_heldout")]
    pub heldout_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Fully connected network sized from the database's sample shape.
    Mlp {
        #[serde(default)]
        hidden: Vec<usize>,
    },
    /// Binary convnet for 128x128x3 inputs.
    TaskConvnet,
    /// Multiclass convnet for 32x32x3 inputs.
    DomainConvnet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Mlp { hidden: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_true")]
    pub symmetrize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
}

fn default_d() -> usize {
    2
}
fn default_true() -> bool {
    true
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            d: default_d(),
            symmetrize: true,
            n_clusters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    /// Output directory; not part of the config echo or the input hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub database: DatabaseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, applies overrides and validates. Relative database paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path, ov: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = cfg.database.file.as_mut() {
            rebase(f);
        }
        if let Some(d) = cfg.database.domain.as_mut().and_then(|d| d.cifar_dir.as_mut()) {
            rebase(d);
        }
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(m) = ov.method {
            self.method = m;
        }
        if let Some(o) = &ov.out {
            self.out = Some(o.clone());
        }
        self.meta.seed = self.seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        let db = &self.database;
        let sources = [db.synthetic.is_some(), db.domain.is_some(), db.file.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources != 1 {
            return Err(CliError::Config(format!(
                "[database] needs exactly one of synthetic, domain or file (found {sources})"
            )));
        }
        if !(db.heldout_fraction > 0.0 && db.heldout_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "database.heldout_fraction must be in (0, 1), got {}",
                db.heldout_fraction
            )));
        }
        if let Some(f) = &db.file {
            if !f.is_file() {
                return Err(CliError::Config(format!("database file {} does not exist", f.display())));
            }
        }
        if let Some(dir) = db.domain.as_ref().and_then(|d| d.cifar_dir.as_ref()) {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("cifar_dir {} does not exist", dir.display())));
            }
        }
        self.meta.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.analysis.d == 0 {
            return Err(CliError::Config("analysis.d must be at least 1".into()));
        }
        if self.analysis.n_clusters == Some(0) {
            return Err(CliError::Config("analysis.n_clusters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out` in the config".into()))
    }

    /// Canonical JSON form used for the report echo and the input hash.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
