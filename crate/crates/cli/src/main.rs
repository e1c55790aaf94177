use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowpix::config::{PipelineConfig, RunLayout};
use flowpix::error::{CliError, Result};
use flowpix::pipeline;
use flowpix_core::pixels::StatsMode;
use flowpix_core::split::Split;
use flowpix_core::synth::SynthSpec;
use flowpix_nn::{Backbone, Task};
use serde::Serialize;

/// Flow-feature CSVs to 60x60x3 images, ResNet18 training and evaluation.
///
/// Settings come from built-in defaults, then `--config`, then flags.
/// Log verbosity is read from FLOWPIX_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "flowpix", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input CSV file, directory or glob; repeatable.
    #[arg(long = "input", global = true)]
    inputs: Vec<String>,
    /// Run directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// train-only or global.
    #[arg(long, global = true, value_parser = parse_stats_mode)]
    stats_mode: Option<StatsMode>,
    #[arg(long, global = true)]
    test_per_class: Option<usize>,
    #[arg(long, global = true)]
    val_fraction: Option<f64>,
    /// binary or multiclass.
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long = "lr", global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    momentum: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    input_size: Option<usize>,
    /// resnet18 or reduced.
    #[arg(long, global = true, value_parser = parse_backbone)]
    backbone: Option<Backbone>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic flow CSV and its ground-truth sidecar.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synth")]
        stem: String,
        /// Full spec as JSON or TOML; overrides the class flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// LABEL:ROWS; class i draws features from Normal(spacing * i, 1).
        #[arg(long = "class")]
        classes: Vec<String>,
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
        #[arg(long, default_value_t = 0.0)]
        malformed: f64,
        #[arg(long)]
        interleave: bool,
    },
    /// Clean inputs, fit statistics, split and write images and manifest.
    Encode,
    /// Train a model on the run's train split.
    Train,
    /// Evaluate a checkpoint on a split and write report.json.
    Eval {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Predict classes for PNG chunk images.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        images: Vec<PathBuf>,
    },
    /// Render summary text and charts from report.json.
    Report {
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check fingerprints and seeds across a run directory.
    Verify,
    /// Compare full-data reports against the published reference numbers.
    Compare {
        #[arg(long)]
        binary: PathBuf,
        #[arg(long)]
        multiclass: PathBuf,
    },
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: flowpix_nn::NnError| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse()
}

fn parse_stats_mode(s: &str) -> std::result::Result<StatsMode, String> {
    match s {
        "train-only" => Ok(StatsMode::TrainOnly),
        "global" => Ok(StatsMode::Global),
        _ => Err(format!("expected train-only or global, got {s:?}")),
    }
}

fn parse_backbone(s: &str) -> std::result::Result<Backbone, String> {
    match s {
        "resnet18" => Ok(Backbone::Resnet18),
        "reduced" => Ok(Backbone::Reduced),
        _ => Err(format!("expected resnet18 or reduced, got {s:?}")),
    }
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if !self.inputs.is_empty() {
            c.inputs = self.inputs.clone();
        }
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        if let Some(v) = &self.catalog {
            c.catalog = Some(v.clone());
        }
        if let Some(v) = &self.labels {
            c.labels = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.stats_mode {
            c.stats_mode = v;
        }
        if let Some(v) = self.test_per_class {
            c.split.test_per_class = v;
        }
        if let Some(v) = self.val_fraction {
            c.split.val_fraction = v;
        }
        let m = &mut c.model;
        m.task = self.task.or(m.task);
        m.learning_rate = self.learning_rate.or(m.learning_rate);
        m.momentum = self.momentum.or(m.momentum);
        m.epochs = self.epochs.or(m.epochs);
        m.batch_size = self.batch_size.or(m.batch_size);
        m.input_size = self.input_size.or(m.input_size);
        m.backbone = self.backbone.or(m.backbone);
        for path in [&c.catalog, &c.labels].into_iter().flatten() {
            if !path.is_file() {
                return Err(CliError::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(c)
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn class_flags(classes: &[String], spacing: f64, seed: u64) -> Result<SynthSpec> {
    let mut parsed = Vec::new();
    for c in classes {
        let (label, rows) = c
            .rsplit_once(':')
            .ok_or_else(|| CliError::Config(format!("--class {c:?}: expected LABEL:ROWS")))?;
        let rows: usize = rows
            .parse()
            .map_err(|_| CliError::Config(format!("--class {c:?}: bad row count")))?;
        parsed.push((label.to_string(), rows));
    }
    if parsed.is_empty() {
        return Err(CliError::Config("synth needs --spec or at least one --class".into()));
    }
    let refs: Vec<(&str, usize)> = parsed.iter().map(|(l, r)| (l.as_str(), *r)).collect();
    Ok(SynthSpec::separable(&refs, spacing, seed))
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.overrides.resolve()?;
    match cli.command {
        Command::Synth {
            out,
            stem,
            spec,
            classes,
            spacing,
            malformed,
            interleave,
        } => {
            let spec = match spec {
                Some(p) => {
                    let mut s = load_spec(&p)?;
                    if let Some(seed) = cli.overrides.seed {
                        s.seed = seed;
                    }
                    s
                }
                None => {
                    let mut s = class_flags(&classes, spacing, config.seed)?;
                    s.malformed_fraction = malformed;
                    s.interleave = interleave;
                    s
                }
            };
            let truth = pipeline::synth(&spec, &config, &out, &stem)?;
            print_json(&serde_json::json!({
                "csv": out.join(format!("{stem}.csv")),
                "truth": out.join(format!("{stem}.truth.json")),
                "rows_emitted": truth.stats.rows_emitted,
                "rows_rejected": truth.stats.rejected(),
                "seed": truth.seed,
            }))
        }
        Command::Encode => print_json(&pipeline::encode(&config)?),
        Command::Train => print_json(&pipeline::train_model(&config, None)?),
        Command::Eval { split, weights } => {
            let task = config.model_config(None)?.task;
            print_json(&pipeline::evaluate_model(&config, task, split, weights.as_deref())?)
        }
        Command::Predict { weights, out, images } => {
            let results = pipeline::predict_images(&weights, &images)?;
            let mut csv = String::from("path,class,name,score,error\n");
            let mut failed = 0;
            for (path, r) in images.iter().zip(&results) {
                match r {
                    Ok(p) => csv.push_str(&format!("{},{},{},{},\n", p.path, p.class, p.name, p.score)),
                    Err(e) => {
                        failed += 1;
                        csv.push_str(&format!("{},,,,\"{}\"\n", path.display(), e.replace('"', "'")));
                    }
                }
            }
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| flowpix_core::Error::io(&p, e))?,
                None => print!("{csv}"),
            }
            if failed > 0 {
                return Err(CliError::Data(format!("{failed} of {} images could not be predicted", images.len())));
            }
            Ok(())
        }
        Command::Report { report, out } => {
            let path = match report {
                Some(p) => p,
                None => RunLayout::new(&config.output).report(config.model_config(None)?.task),
            };
            let rendered = pipeline::render(&path, out.as_deref())?;
            print_json(&serde_json::json!({
                "report": rendered.json,
                "summary": rendered.summary,
                "precision_chart": rendered.precision_chart,
                "confusion_chart": rendered.confusion_chart,
            }))
        }
        Command::Verify => {
            let report = pipeline::verify(&config.output)?;
            print_json(&report)?;
            if report.ok {
                Ok(())
            } else {
                Err(CliError::Data("run directory is inconsistent".into()))
            }
        }
        Command::Compare { binary, multiclass } => {
            let checks = pipeline::compare(&binary, &multiclass)?;
            for c in &checks {
                println!(
                    "{} {}: observed {:.4}, expected {:.4} +/- {:.3}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.observed,
                    c.expected,
                    c.tolerance
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWPIX_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CliError::Config(String::new()).exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.summary());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
