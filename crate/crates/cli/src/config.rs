//! Pipeline configuration: a TOML file plus command-line overrides.
//!
//! Precedence, lowest to highest: built-in defaults, the config file, flags.

use std::path::{Path, PathBuf};

use flowpix_core::catalog::{FeatureCatalog, LabelMap};
use flowpix_core::ident::fingerprint;
use flowpix_core::pixels::StatsMode;
use flowpix_core::split::SplitPolicy;
use flowpix_nn::{Backbone, ModelConfig, Task};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// CSV files, directories or glob patterns.
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stats_mode")]
    pub stats_mode: StatsMode,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("flowpix-run")
}

fn default_stats_mode() -> StatsMode {
    StatsMode::TrainOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub test_per_class: usize,
    pub val_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let p = SplitPolicy::default();
        SplitSection {
            test_per_class: p.test_per_class,
            val_fraction: p.val_fraction,
        }
    }
}

/// Model settings; unset fields take the task defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub task: Option<Task>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub input_size: Option<usize>,
    pub backbone: Option<Backbone>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            output: default_output(),
            catalog: None,
            labels: None,
            seed: 0,
            stats_mode: default_stats_mode(),
            split: SplitSection::default(),
            model: ModelSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn split_policy(&self) -> Result<SplitPolicy> {
        if !(0.0..1.0).contains(&self.split.val_fraction) {
            return Err(CliError::Config(format!(
                "val_fraction {} outside [0, 1)",
                self.split.val_fraction
            )));
        }
        Ok(SplitPolicy {
            test_per_class: self.split.test_per_class,
            val_fraction: self.split.val_fraction,
        })
    }

    pub fn catalog(&self) -> Result<FeatureCatalog> {
        match &self.catalog {
            Some(p) => Ok(FeatureCatalog::load(p)?),
            None => Ok(FeatureCatalog::cicddos2019()),
        }
    }

    pub fn label_map(&self) -> Result<LabelMap> {
        match &self.labels {
            Some(p) => Ok(LabelMap::load(p)?),
            None => Ok(LabelMap::cicddos2019()),
        }
    }

    /// Model configuration for `task` (or the configured task).
    pub fn model_config(&self, task: Option<Task>) -> Result<ModelConfig> {
        let task = task.or(self.model.task).unwrap_or(Task::Multiclass);
        let m = &self.model;
        let mut c = ModelConfig::new(task, self.seed);
        if let Some(v) = m.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = m.momentum {
            c.momentum = v;
        }
        if let Some(v) = m.epochs {
            c.epochs = v;
        }
        if let Some(v) = m.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = m.input_size {
            c.input_size = v;
        }
        if let Some(v) = m.backbone {
            c.backbone = v;
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    /// Input CSVs in sorted order. Directories contribute their `*.csv`
    /// files; other entries are glob patterns or plain paths.
    pub fn resolve_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for input in &self.inputs {
            let path = Path::new(input);
            if path.is_dir() {
                let pattern = path.join("*.csv");
                files.extend(glob_files(&pattern.to_string_lossy())?);
            } else if path.is_file() {
                files.push(path.to_path_buf());
            } else {
                let found = glob_files(input)?;
                if found.is_empty() {
                    return Err(CliError::Config(format!("input {input:?} matches no files")));
                }
                files.extend(found);
            }
        }
        files.sort();
        files.dedup();
        Ok(files)
    }

    /// Identity of everything that determines the encoded dataset. The
    /// output location is deliberately excluded.
    pub fn data_fingerprint(&self, inputs: &[PathBuf]) -> Result<String> {
        #[derive(Serialize)]
        struct Identity<'a> {
            inputs: Vec<(String, u64)>,
            catalog: String,
            labels: String,
            seed: u64,
            stats_mode: StatsMode,
            split: &'a SplitSection,
        }
        let mut listed = Vec::new();
        for p in inputs {
            let size = std::fs::metadata(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                .len();
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            listed.push((name, size));
        }
        Ok(fingerprint(&Identity {
            inputs: listed,
            catalog: self.catalog()?.identity(),
            labels: fingerprint(&self.label_map()?.aliases()),
            seed: self.seed,
            stats_mode: self.stats_mode,
            split: &self.split,
        }))
    }
}

fn glob_files(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Config(format!("bad pattern {pattern:?}: {e}")))?;
    let mut out = Vec::new();
    for p in paths {
        let p = p.map_err(|e| CliError::Config(e.to_string()))?;
        if p.is_file() {
            out.push(p);
        }
    }
    Ok(out)
}

/// Run-directory layout under the output root.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }

    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest.json")
    }

    pub fn model_dir(&self, task: Task) -> PathBuf {
        self.root.join("models").join(task.as_str())
    }

    pub fn weights(&self, task: Task) -> PathBuf {
        self.model_dir(task).join("model.bin")
    }

    pub fn history(&self, task: Task) -> PathBuf {
        self.model_dir(task).join("history.csv")
    }

    pub fn report_dir(&self, task: Task) -> PathBuf {
        self.root.join("reports").join(task.as_str())
    }

    pub fn report(&self, task: Task) -> PathBuf {
        self.report_dir(task).join("report.json")
    }
}
