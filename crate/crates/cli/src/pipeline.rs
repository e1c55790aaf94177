//! Pipeline stages behind the subcommands.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use flowpix_core::catalog::{resolve_columns, ColumnPlan, RETAINED_FEATURES};
use flowpix_core::ident::sha256_hex;
use flowpix_core::imageio::{read_png, write_png};
use flowpix_core::ingest::{read_header, FileIngest, IngestStats};
use flowpix_core::metrics::{ReferenceTargets, TargetCheck};
use flowpix_core::pixels::{ChunkEncoder, NormStats, StatsAccumulator, StatsMode, CHUNK_SIZE};
use flowpix_core::report::{render_report, RenderedReport};
use flowpix_core::split::{split_dataset, write_atomic, ImageKey, Split};
use flowpix_core::synth::{generate_files, GroundTruth, SynthSpec};
use flowpix_core::{ClassLabel, DatasetManifest, EvalReport, LabelMap};
use flowpix_nn::model::{load_checkpoint, load_meta, save_checkpoint, sidecar_path, CheckpointInfo};
use flowpix_nn::train::{evaluate, train, write_history, ManifestImages};
use flowpix_nn::{Model, Prediction, Task};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, RunLayout};
use crate::error::{CliError, Result};

pub const INGEST_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: String,
    pub file_id: u32,
    pub stats: IngestStats,
    pub warnings: Vec<String>,
    /// Trailing records per class that did not fill a chunk.
    pub dropped_tail: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub version: u32,
    pub files: Vec<FileReport>,
    pub total: IngestStats,
    pub images: usize,
    pub dropped_records: u64,
    pub fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodeSummary {
    pub images: usize,
    pub per_class: BTreeMap<String, [usize; 3]>,
    pub manifest: PathBuf,
    pub stats: PathBuf,
    pub ingest_report: PathBuf,
    pub fingerprint: String,
    pub warnings: Vec<String>,
}

fn open_plan(path: &Path, config_catalog: &flowpix_core::FeatureCatalog) -> Result<(ColumnPlan, Vec<String>)> {
    let header = read_header(path)?;
    let plan = resolve_columns(&header, config_catalog)?;
    let warnings = plan.warnings.iter().map(|w| format!("{}: {w:?}", path.display())).collect();
    if plan.retained_count() != RETAINED_FEATURES {
        return Err(CliError::Data(format!(
            "{} provides {} of the {RETAINED_FEATURES} image features",
            path.display(),
            plan.retained_count()
        )));
    }
    Ok((plan, warnings))
}

fn ingest(path: &Path, file_id: u32, plan: &ColumnPlan, labels: &LabelMap) -> Result<FileIngest<std::io::BufReader<std::fs::File>>> {
    Ok(FileIngest::open(path, file_id, plan.clone(), labels.clone())?)
}

/// Streams the inputs three times: count and split chunks, fit statistics,
/// then encode and write images. Memory stays bounded by one chunk per
/// class. Re-running with the same inputs and config rewrites identical
/// bytes.
pub fn encode(config: &PipelineConfig) -> Result<EncodeSummary> {
    let files = config.resolve_inputs()?;
    let policy = config.split_policy()?;
    let catalog = config.catalog()?;
    let labels = config.label_map()?;
    if files.is_empty() {
        return Err(CliError::Core(flowpix_core::Error::NoData("no input CSV files".into())));
    }
    let fingerprint = config.data_fingerprint(&files)?;
    let layout = RunLayout::new(&config.output);

    // pass 1: count clean rows per (file, class)
    let mut plans = Vec::new();
    let mut reports = Vec::new();
    let mut rows: BTreeMap<(u32, ClassLabel), u64> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let file_id = i as u32;
        let (plan, plan_warnings) = open_plan(path, &catalog)?;
        let mut it = ingest(path, file_id, &plan, &labels)?;
        for record in it.by_ref() {
            *rows.entry((file_id, record?.label)).or_insert(0) += 1;
        }
        let stats = it.into_stats();
        log::info!(
            "{}: {} rows read, {} emitted, {} rejected",
            path.display(),
            stats.rows_read,
            stats.rows_emitted,
            stats.rejected()
        );
        let dropped_tail = rows
            .iter()
            .filter(|((f, _), _)| *f == file_id)
            .map(|((_, l), &n)| (l.tag(), n % CHUNK_SIZE as u64))
            .collect();
        reports.push(FileReport {
            path: path.display().to_string(),
            file_id,
            stats,
            warnings: plan_warnings,
            dropped_tail,
        });
        plans.push(plan);
    }

    let mut keys: BTreeMap<ClassLabel, Vec<ImageKey>> = BTreeMap::new();
    for (&(file_id, label), &n) in &rows {
        let class_keys = keys.entry(label).or_default();
        for file_chunk in 0..n / CHUNK_SIZE as u64 {
            let chunk_index = class_keys.len() as u64;
            class_keys.push(ImageKey {
                label,
                chunk_index,
                file_id,
                file_chunk,
            });
        }
    }
    // chunk_index must follow file order within each class; rows is keyed by
    // (file, class) so files are already visited in order.
    let total_images: usize = keys.values().map(Vec::len).sum();
    if total_images == 0 {
        return Err(CliError::Core(flowpix_core::Error::NoData(format!(
            "no class has {CHUNK_SIZE} clean records in one file"
        ))));
    }
    let mut manifest = split_dataset(&keys, config.seed, policy);
    warnings.extend(manifest.warnings.iter().cloned());
    let lookup: HashMap<(ClassLabel, u32, u64), (Split, String)> = manifest
        .entries
        .iter()
        .map(|e| ((e.label, e.file_id, e.file_chunk), (e.split, e.path.clone())))
        .collect();

    // pass 2: normalization statistics
    let mut train_acc = StatsAccumulator::new(RETAINED_FEATURES);
    let mut global_acc = StatsAccumulator::new(RETAINED_FEATURES);
    for (i, path) in files.iter().enumerate() {
        let file_id = i as u32;
        let mut position: HashMap<ClassLabel, u64> = HashMap::new();
        for record in ingest(path, file_id, &plans[i], &labels)? {
            let record = record?;
            global_acc.push(&record.values)?;
            let pos = position.entry(record.label).or_insert(0);
            let chunk = *pos / CHUNK_SIZE as u64;
            *pos += 1;
            // trailing partial chunks have no manifest entry
            if lookup.get(&(record.label, file_id, chunk)).map(|e| e.0) == Some(Split::Train) {
                train_acc.push(&record.values)?;
            }
        }
    }
    let names = plans[0].feature_names();
    let file_names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let mut stats = match config.stats_mode {
        StatsMode::TrainOnly if train_acc.rows() > 0 => train_acc.finish(&names, StatsMode::TrainOnly, file_names)?,
        StatsMode::TrainOnly => {
            let w = "no training chunks; statistics fitted on all records".to_string();
            log::warn!("{w}");
            warnings.push(w);
            global_acc.finish(&names, StatsMode::Global, file_names)?
        }
        StatsMode::Global => global_acc.finish(&names, StatsMode::Global, file_names)?,
    };
    stats.fingerprint = fingerprint.clone();
    stats.seed = config.seed;
    manifest.stats_ref = stats.identity();
    manifest.fingerprint = fingerprint.clone();
    manifest.warnings = warnings.clone();

    // pass 3: encode and write
    let images_root = layout.images();
    let mut written = 0usize;
    for (i, path) in files.iter().enumerate() {
        let file_id = i as u32;
        let mut encoders: HashMap<ClassLabel, ChunkEncoder> = HashMap::new();
        for record in ingest(path, file_id, &plans[i], &labels)? {
            let record = record?;
            let encoder = match encoders.entry(record.label) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(ChunkEncoder::new(&stats)?),
            };
            if let Some(image) = encoder.push(&record)? {
                let (_, rel) = lookup
                    .get(&(image.label, file_id, image.provenance.chunk_index))
                    .ok_or_else(|| CliError::Internal(format!("image {:?} of {} was never split", image.provenance, image.label)))?;
                write_png(&images_root.join(rel), &image)?;
                written += 1;
            }
        }
    }
    if written != manifest.entries.len() {
        return Err(CliError::Internal(format!(
            "wrote {written} images for {} manifest entries; inputs changed during encoding?",
            manifest.entries.len()
        )));
    }

    let mut total = IngestStats::default();
    for r in &reports {
        total.merge(&r.stats);
    }
    let dropped_records = reports.iter().flat_map(|r| r.dropped_tail.values()).sum();
    let ingest_report = IngestReport {
        version: INGEST_REPORT_VERSION,
        files: reports,
        total,
        images: written,
        dropped_records,
        fingerprint: fingerprint.clone(),
        seed: config.seed,
    };

    std::fs::create_dir_all(&layout.root).map_err(|e| flowpix_core::Error::io(&layout.root, e))?;
    write_atomic(&layout.stats(), to_json(&stats)?.as_bytes())?;
    write_atomic(&layout.ingest_report(), to_json(&ingest_report)?.as_bytes())?;
    let mut text = Vec::new();
    manifest
        .write_to(&mut text)
        .map_err(|e| flowpix_core::Error::io(layout.manifest(), e))?;
    write_atomic(&layout.manifest(), &text)?;

    let mut per_class = BTreeMap::new();
    for label in keys.keys() {
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| manifest.count(*label, s));
        per_class.insert(label.tag(), counts);
    }
    Ok(EncodeSummary {
        images: written,
        per_class,
        manifest: layout.manifest(),
        stats: layout.stats(),
        ingest_report: layout.ingest_report(),
        fingerprint,
        warnings,
    })
}

fn to_json(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(flowpix_core::Error::from)? + "\n")
}

fn load_run(layout: &RunLayout) -> Result<(DatasetManifest, NormStats)> {
    let manifest = DatasetManifest::load(&layout.manifest())?;
    let stats = NormStats::load(&layout.stats())?;
    if manifest.stats_ref != stats.identity() {
        return Err(CliError::Data(format!(
            "{} was not encoded with {}",
            layout.manifest().display(),
            layout.stats().display()
        )));
    }
    Ok((manifest, stats))
}

fn split_source<'a>(layout_images: &'a Path, manifest: &'a DatasetManifest, split: Split) -> ManifestImages<'a> {
    ManifestImages {
        root: layout_images,
        entries: manifest.split(split).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub task: Task,
    pub weights: PathBuf,
    pub sidecar: PathBuf,
    pub history: PathBuf,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub train_images: usize,
    pub val_images: usize,
}

pub fn train_model(config: &PipelineConfig, task: Option<Task>) -> Result<TrainSummary> {
    let model_config = config.model_config(task)?;
    let task = model_config.task;
    let layout = RunLayout::new(&config.output);
    let (manifest, stats) = load_run(&layout)?;
    let images = layout.images();
    let train_set = split_source(&images, &manifest, Split::Train);
    let val_set = split_source(&images, &manifest, Split::Val);
    log::info!(
        "training {task} model on {} images, validating on {}",
        train_set.entries.len(),
        val_set.entries.len()
    );

    let mut model = Model::new(model_config)?;
    let outcome = train(&mut model, &train_set, &val_set, |_| {})?;

    let dir = layout.model_dir(task);
    std::fs::create_dir_all(&dir).map_err(|e| flowpix_core::Error::io(&dir, e))?;
    let weights = layout.weights(task);
    let info = CheckpointInfo {
        epoch: outcome.best_epoch,
        val_accuracy: outcome.best_val_accuracy,
        stats_ref: stats.identity(),
        fingerprint: manifest.fingerprint.clone(),
    };
    save_checkpoint(&mut model, &info, &weights)?;
    let mut history = Vec::new();
    write_history(&outcome.history, &mut history).map_err(|e| flowpix_core::Error::io(layout.history(task), e))?;
    write_atomic(&layout.history(task), &history)?;

    Ok(TrainSummary {
        task,
        sidecar: sidecar_path(&weights),
        weights,
        history: layout.history(task),
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        train_images: train_set.entries.len(),
        val_images: val_set.entries.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub task: Task,
    pub split: Split,
    pub report: PathBuf,
    pub predictions: PathBuf,
    pub accuracy: f64,
    pub images: usize,
}

/// Evaluates the task's checkpoint on one split and writes `report.json`
/// plus per-image `predictions.csv`.
pub fn evaluate_model(config: &PipelineConfig, task: Task, split: Split, weights: Option<&Path>) -> Result<EvalSummary> {
    let layout = RunLayout::new(&config.output);
    let (manifest, _) = load_run(&layout)?;
    let weights = weights.map(Path::to_path_buf).unwrap_or_else(|| layout.weights(task));
    let (mut model, meta) = load_checkpoint(&weights)?;
    if meta.task != task {
        return Err(CliError::Config(format!(
            "{} holds a {} model, not {task}",
            weights.display(),
            meta.task
        )));
    }
    if meta.stats_ref != manifest.stats_ref {
        return Err(CliError::Data(format!(
            "{} was trained on images encoded with different statistics",
            weights.display()
        )));
    }
    let images = layout.images();
    let source = split_source(&images, &manifest, split);
    if source.entries.is_empty() {
        return Err(CliError::Core(flowpix_core::Error::NoData(format!("{split} split is empty"))));
    }
    let (predictions, _) = evaluate(&mut model, &source)?;
    let actual: Vec<usize> = source.entries.iter().map(|e| task.target(e.label)).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.class).collect();
    let mut report = EvalReport::evaluate(&actual, &predicted, task.class_names())?;
    report.fingerprint = manifest.fingerprint.clone();
    report.seed = manifest.seed;

    let dir = layout.report_dir(task);
    std::fs::create_dir_all(&dir).map_err(|e| flowpix_core::Error::io(&dir, e))?;
    write_atomic(&layout.report(task), to_json(&report)?.as_bytes())?;
    let mut csv = Vec::new();
    writeln!(csv, "path,actual,predicted,score").ok();
    for ((entry, &a), p) in source.entries.iter().zip(&actual).zip(&predictions) {
        writeln!(csv, "{},{a},{},{}", entry.path, p.class, p.scores[p.class.min(p.scores.len() - 1)]).ok();
    }
    let predictions_path = dir.join("predictions.csv");
    write_atomic(&predictions_path, &csv)?;
    Ok(EvalSummary {
        task,
        split,
        report: layout.report(task),
        predictions: predictions_path,
        accuracy: report.accuracy,
        images: actual.len(),
    })
}

/// Renders summary text and charts next to (or into `out`) a report.
pub fn render(report_path: &Path, out: Option<&Path>) -> Result<RenderedReport> {
    let report = EvalReport::load(report_path)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => report_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    Ok(render_report(&report, &dir)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ImagePrediction {
    pub path: String,
    pub class: usize,
    pub name: String,
    pub score: f64,
}

pub fn class_name(task: Task, class: usize) -> String {
    match task {
        Task::Binary => task.class_names()[class].clone(),
        Task::Multiclass => ClassLabel::new(class as u8).map(|l| l.tag()).unwrap_or_default(),
    }
}

/// Predicts PNG chunk images; a bad image fails only its own line.
pub fn predict_images(weights: &Path, images: &[PathBuf]) -> Result<Vec<std::result::Result<ImagePrediction, String>>> {
    let (mut model, meta) = load_checkpoint(weights)?;
    let task = meta.task;
    let mut out = Vec::with_capacity(images.len());
    for path in images {
        let result = read_png(path, ClassLabel::NORMAL)
            .map_err(|e| e.to_string())
            .map(|image| {
                let p: Prediction = model.predict(std::slice::from_ref(&image)).remove(0);
                ImagePrediction {
                    path: path.display().to_string(),
                    class: p.class,
                    name: class_name(task, p.class),
                    score: match task {
                        Task::Binary => p.scores[0],
                        Task::Multiclass => p.scores[p.class],
                    },
                }
            });
        out.push(result);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub fingerprint: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

/// Cross-checks fingerprints, seeds and statistics references across a run
/// directory.
pub fn verify(root: &Path) -> Result<VerifyReport> {
    let layout = RunLayout::new(root);
    let manifest = DatasetManifest::load(&layout.manifest())?;
    let fp = manifest.fingerprint.clone();
    let seed = manifest.seed;
    let mut checks = Vec::new();
    let mut check = |name: String, ok: bool, detail: String| checks.push(Check { name, ok, detail });

    match NormStats::load(&layout.stats()) {
        Ok(stats) => {
            check("stats fingerprint".into(), stats.fingerprint == fp, stats.fingerprint.clone());
            check("stats seed".into(), stats.seed == seed, stats.seed.to_string());
            check("manifest stats reference".into(), stats.identity() == manifest.stats_ref, manifest.stats_ref.clone());
        }
        Err(e) => check("stats".into(), false, e.to_string()),
    }
    match std::fs::read_to_string(layout.ingest_report())
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str::<IngestReport>(&t).map_err(|e| e.to_string()))
    {
        Ok(r) => {
            check("ingest fingerprint".into(), r.fingerprint == fp, r.fingerprint.clone());
            check("ingest seed".into(), r.seed == seed, r.seed.to_string());
            check(
                "ingest image count".into(),
                r.images == manifest.entries.len(),
                format!("{} images, {} manifest entries", r.images, manifest.entries.len()),
            );
        }
        Err(e) => check("ingest report".into(), false, e),
    }
    let missing = manifest
        .entries
        .iter()
        .filter(|e| !layout.images().join(&e.path).is_file())
        .count();
    check("images present".into(), missing == 0, format!("{missing} missing"));

    for task in [Task::Binary, Task::Multiclass] {
        let weights = layout.weights(task);
        if sidecar_path(&weights).exists() {
            match load_meta(&weights) {
                Ok(meta) => {
                    check(format!("{task} checkpoint fingerprint"), meta.fingerprint == fp, meta.fingerprint.clone());
                    check(format!("{task} checkpoint seed"), meta.seed == seed, meta.seed.to_string());
                    check(
                        format!("{task} checkpoint stats reference"),
                        meta.stats_ref == manifest.stats_ref,
                        meta.stats_ref.clone(),
                    );
                    let hash = std::fs::read(&weights).map(|b| sha256_hex(&b)).unwrap_or_default();
                    check(format!("{task} weights hash"), hash == meta.weights_sha256, hash);
                }
                Err(e) => check(format!("{task} checkpoint"), false, e.to_string()),
            }
        }
        let report = layout.report(task);
        if report.exists() {
            match EvalReport::load(&report) {
                Ok(r) => {
                    check(format!("{task} report fingerprint"), r.fingerprint == fp, r.fingerprint.clone());
                    check(format!("{task} report seed"), r.seed == seed, r.seed.to_string());
                }
                Err(e) => check(format!("{task} report"), false, e.to_string()),
            }
        }
    }
    Ok(VerifyReport {
        ok: checks.iter().all(|c| c.ok),
        fingerprint: fp,
        seed,
        checks,
    })
}

/// Compares full-data reports with the published reference numbers.
pub fn compare(binary: &Path, multiclass: &Path) -> Result<Vec<TargetCheck>> {
    let b = EvalReport::load(binary)?;
    let m = EvalReport::load(multiclass)?;
    if b.class_names.len() != 2 || m.class_names.len() != ClassLabel::COUNT {
        return Err(CliError::Data("expected a 2-class and a 12-class report".into()));
    }
    Ok(ReferenceTargets::default().compare(&b, &m))
}

pub fn synth(spec: &SynthSpec, config: &PipelineConfig, dir: &Path, stem: &str) -> Result<GroundTruth> {
    let catalog = config.catalog()?;
    let labels = config.label_map()?;
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(generate_files(spec, &catalog, &labels, dir, stem)?)
}
