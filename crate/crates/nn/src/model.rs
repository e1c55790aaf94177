//! Task configuration, the classifier wrapper, prediction and checkpoints.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flowpix_core::ident::{rng_for, sha256_hex};
use flowpix_core::{ClassLabel, EncodedImage};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{Layer, Mode};
use crate::loss::sigmoid;
use crate::resnet::{ResNet, ResNetConfig};
use crate::transform::{transform_batch, INPUT_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
}

impl Task {
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Binary => 1,
            Task::Multiclass => ClassLabel::COUNT,
        }
    }

    /// Size of the label space: normal/attack, or the twelve classes.
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass => ClassLabel::COUNT,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Task::Binary => 10,
            Task::Multiclass => 50,
        }
    }

    /// Training target for a ground-truth label; attack is 1 for the binary task.
    pub fn target(self, label: ClassLabel) -> usize {
        match self {
            Task::Binary => label.is_attack() as usize,
            Task::Multiclass => label.index(),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::Binary => flowpix_core::ConfusionMatrix::binary_names(),
            Task::Multiclass => flowpix_core::ConfusionMatrix::multiclass_names(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Task::Binary),
            "multiclass" | "multi-class" => Ok(Task::Multiclass),
            other => Err(NnError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Backbone size. `Reduced` keeps the residual topology at a tiny width and is
/// meant for tests and quick runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    #[default]
    Resnet18,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub num_outputs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Side of the square model input after resizing.
    pub input_size: usize,
    #[serde(default)]
    pub backbone: Backbone,
}

impl ModelConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        ModelConfig {
            task,
            num_outputs: task.num_outputs(),
            learning_rate: 1e-4,
            momentum: 0.9,
            epochs: task.default_epochs(),
            batch_size: 32,
            seed,
            input_size: INPUT_SIDE,
            backbone: Backbone::Resnet18,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(NnError::Config(m));
        if self.num_outputs != self.task.num_outputs() {
            return fail(format!(
                "{} task needs {} outputs, got {}",
                self.task,
                self.task.num_outputs(),
                self.num_outputs
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.input_size < 8 {
            return fail(format!("input size {} too small", self.input_size));
        }
        Ok(())
    }

    pub fn network(&self) -> ResNetConfig {
        match self.backbone {
            Backbone::Resnet18 => ResNetConfig::resnet18(self.num_outputs),
            Backbone::Reduced => ResNetConfig::tiny(self.num_outputs),
        }
    }
}

/// One image's prediction. `class` indexes the task's label space
/// (binary: 0 normal, 1 attack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    /// Attack probability (binary) or softmax probabilities (multiclass).
    pub scores: Vec<f64>,
}

/// Binary decision: attack iff `sigmoid(logit) >= 0.5`.
pub fn decide_binary(logit: f64) -> Prediction {
    let score = sigmoid(logit);
    Prediction {
        class: (score >= 0.5) as usize,
        scores: vec![score],
    }
}

/// Multiclass decision: argmax, ties to the lowest class id.
pub fn decide_multiclass(logits: &[f64]) -> Prediction {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    let max = logits[best];
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Prediction {
        class: best,
        scores: exps.into_iter().map(|e| e / sum).collect(),
    }
}

pub struct Model {
    config: ModelConfig,
    net: ResNet<f32>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, "init");
        let net = ResNet::new(&config.network(), &mut rng);
        Ok(Model { config, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn net(&mut self) -> &mut ResNet<f32> {
        &mut self.net
    }

    pub fn param_count(&mut self) -> usize {
        self.net.param_count()
    }

    /// Eval-mode logits, computed in batches of `batch_size`.
    pub fn logits(&mut self, images: &[EncodedImage]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for batch in images.chunks(self.config.batch_size) {
            let x = transform_batch::<f32>(batch, self.config.input_size);
            let y = self.net.forward(x, Mode::Eval);
            for row in y.data().chunks_exact(self.config.num_outputs) {
                out.push(row.iter().map(|&v| v as f64).collect());
            }
        }
        out
    }

    pub fn predict(&mut self, images: &[EncodedImage]) -> Vec<Prediction> {
        let task = self.config.task;
        self.logits(images)
            .iter()
            .map(|z| match task {
                Task::Binary => decide_binary(z[0]),
                Task::Multiclass => decide_multiclass(z),
            })
            .collect()
    }

    /// Copies of all parameters followed by all buffers.
    pub fn state(&mut self) -> Vec<Vec<f32>> {
        let mut state = Vec::new();
        self.net.visit_params(&mut |p| state.push(p.value.clone()));
        self.net.visit_buffers(&mut |b| state.push(b.clone()));
        state
    }

    pub fn set_state(&mut self, state: &[Vec<f32>]) -> Result<()> {
        let mut shapes = Vec::new();
        self.net.visit_params(&mut |p| shapes.push(p.len()));
        self.net.visit_buffers(&mut |b| shapes.push(b.len()));
        let expected: Vec<usize> = state.iter().map(Vec::len).collect();
        if shapes != expected {
            return Err(NnError::Config(format!(
                "state has {} tensors, model expects {}",
                state.len(),
                shapes.len()
            )));
        }
        let mut i = 0;
        self.net.visit_params(&mut |p| {
            p.value.copy_from_slice(&state[i]);
            i += 1;
        });
        self.net.visit_buffers(&mut |b| {
            b.copy_from_slice(&state[i]);
            i += 1;
        });
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"FPXW";
const BLOB_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub task: Task,
    /// 1-based epoch whose weights were saved.
    pub epoch: usize,
    pub val_accuracy: f64,
    pub seed: u64,
    pub config: ModelConfig,
    /// Identity of the normalization statistics the images were encoded with.
    pub stats_ref: String,
    pub fingerprint: String,
    pub weights_file: String,
    pub weights_sha256: String,
}

fn encode_state(state: &[Vec<f32>]) -> Vec<u8> {
    let total: usize = state.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(16 + 8 * state.len() + 4 * total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.len() as u64).to_le_bytes());
    for t in state {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for &v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_state(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f32>>> {
    let bad = |m: &str| NnError::checkpoint(path, m);
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated weights blob"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("not a weights blob"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(bad(&format!("unsupported blob version {version}")));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut state = Vec::new();
    for _ in 0..count {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        state.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after weights"));
    }
    Ok(state)
}

/// Sidecar path for a weights blob: `model.bin` -> `model.json`.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub struct CheckpointInfo {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub stats_ref: String,
    pub fingerprint: String,
}

/// Writes `weights` and its JSON sidecar; both are written atomically.
pub fn save_checkpoint(model: &mut Model, info: &CheckpointInfo, weights: &Path) -> Result<CheckpointMeta> {
    let blob = encode_state(&model.state());
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        task: model.config.task,
        epoch: info.epoch,
        val_accuracy: info.val_accuracy,
        seed: model.config.seed,
        config: model.config.clone(),
        stats_ref: info.stats_ref.clone(),
        fingerprint: info.fingerprint.clone(),
        weights_file: weights
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        weights_sha256: sha256_hex(&blob),
    };
    flowpix_core::split::write_atomic(weights, &blob)?;
    let json = serde_json::to_string_pretty(&meta)? + "\n";
    flowpix_core::split::write_atomic(&sidecar_path(weights), json.as_bytes())?;
    Ok(meta)
}

pub fn load_meta(weights: &Path) -> Result<CheckpointMeta> {
    let path = sidecar_path(weights);
    let text = std::fs::read_to_string(&path).map_err(|e| NnError::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(NnError::checkpoint(&path, format!("unsupported version {}", meta.version)));
    }
    Ok(meta)
}

/// Loads weights and sidecar, checking the blob hash and tensor sizes.
pub fn load_checkpoint(weights: &Path) -> Result<(Model, CheckpointMeta)> {
    let meta = load_meta(weights)?;
    let bytes = std::fs::read(weights).map_err(|e| NnError::io(weights, e))?;
    if sha256_hex(&bytes) != meta.weights_sha256 {
        return Err(NnError::checkpoint(weights, "weights hash does not match sidecar"));
    }
    let state = decode_state(&bytes, weights)?;
    let mut model = Model::new(meta.config.clone())?;
    model
        .set_state(&state)
        .map_err(|e| NnError::checkpoint(weights, e.to_string()))?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_rules() {
        let mut z = vec![0.1; 12];
        z[1] = 2.3;
        assert_eq!(decide_multiclass(&z).class, 1);
        assert_eq!(decide_multiclass(&[0.0; 12]).class, 0);
        assert_eq!(decide_multiclass(&[1.0, 3.0, 3.0]).class, 1);
        let b = decide_binary(0.0);
        assert_eq!((b.class, b.scores[0]), (1, 0.5));
        assert_eq!(decide_binary(-1e-6).class, 0);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new(Task::Binary, 0);
        assert!(c.validate().is_ok());
        assert_eq!((c.epochs, c.num_outputs), (10, 1));
        c.num_outputs = 12;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Task::Multiclass, 0);
        assert_eq!((c.epochs, c.num_outputs), (50, 12));
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.9;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c.learning_rate = 1e-4;
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let state = vec![vec![1.0f32, -2.5, f32::MIN_POSITIVE], vec![], vec![3.0]];
        let blob = encode_state(&state);
        assert_eq!(decode_state(&blob, Path::new("x")).unwrap(), state);
        assert!(decode_state(&blob[..blob.len() - 1], Path::new("x")).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(decode_state(&bad, Path::new("x")).is_err());
    }
}
