//! The `islr` command line: preprocessing, synthetic data, training,
//! evaluation, prediction and gradient checking.

mod config;
mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use walkdir::WalkDir;

use islr_core::data::{generate_synthetic_glyphs, scan_dataset, stratified_split, LabelMap};
use islr_core::imaging::{load_image, run_pipeline_stages, save_pgm, PipelineConfig};
use islr_core::model::{build_isl_cnn, gradcheck_reduced, load_checkpoint, save_checkpoint, Model};
use islr_core::nn::{layer_suite, GradCheckReport};
use islr_core::train::{evaluate, metrics_csv, predict_image, train_with, CSV_HEADER};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "islr", version, about = "Sign language character recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the preprocessing pipeline over every image under a directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every intermediate stage.
        #[arg(long)]
        stage_dump: bool,
    },
    /// Generate the synthetic glyph dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train the classifier on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Final checkpoint path; the best-validation checkpoint goes next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy and mean loss of a checkpoint over a whole dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify one image.
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and of a reduced model.
    Gradcheck {
        /// Per-layer tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Tolerance for the reduced end-to-end model.
        #[arg(long, default_value_t = 1e-4)]
        model_tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Results go to `out`, diagnostics to `err`.
pub fn run_cli<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Preprocess {
            input,
            output,
            config,
            stage_dump,
        } => preprocess(&input, &output, config.as_deref(), stage_dump, out),
        Command::Synth {
            out: dir,
            count,
            seed,
        } => {
            let index = generate_synthetic_glyphs(count, seed, &dir)?;
            emit(
                out,
                format!(
                    "{} images in {} classes written to {}",
                    index.entries.len(),
                    index.labels.len(),
                    dir.display()
                ),
            )
        }
        Command::Train {
            data,
            out: ckpt,
            config,
            metrics,
            seed,
        } => train(&data, &ckpt, config.as_deref(), metrics, seed, out, err),
        Command::Eval {
            data,
            model,
            config,
        } => {
            let (model, labels) = load_checkpoint(&model)?;
            let pipeline = pipeline_for(&model, config.as_deref())?;
            let index = scan_dataset(&data)?;
            check_labels(&labels, &index.labels)?;
            let (acc, loss) = evaluate(&model, &index.entries, &pipeline)?;
            emit(
                out,
                format!(
                    "samples={} accuracy={acc:.6} loss={loss:.6}",
                    index.entries.len()
                ),
            )
        }
        Command::Predict {
            image,
            model,
            config,
        } => {
            let (model, labels) = load_checkpoint(&model)?;
            let pipeline = pipeline_for(&model, config.as_deref())?;
            let (label, confidence) = predict_image(&model, &labels, &image, &pipeline)?;
            emit(out, format!("{label} {confidence:.6}"))
        }
        Command::Gradcheck {
            tolerance,
            model_tolerance,
            seed,
        } => gradcheck(tolerance, model_tolerance, seed, out),
    }
}

fn emit(out: &mut dyn Write, line: String) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

/// The run's pipeline, with the model input size taken from the checkpoint.
fn pipeline_for(model: &Model, config: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let mut pipeline = RunConfig::load_or_default(config)?.pipeline;
    pipeline.model_input_size = model.config().input_size;
    pipeline.validate()?;
    Ok(pipeline)
}

fn check_labels(model: &LabelMap, data: &LabelMap) -> Result<(), CliError> {
    if model != data {
        return Err(CliError::Validation(
            "dataset classes differ from the checkpoint's label map".into(),
        ));
    }
    Ok(())
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm" | "pnm" | "png" | "jpg" | "jpeg")
    )
}

fn preprocess(
    input: &Path,
    output: &Path,
    config: Option<&Path>,
    stage_dump: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(config)?;
    if !input.is_dir() {
        return Err(CliError::io(input, "input directory not found"));
    }
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::io(input, e))?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            files.push(entry.into_path());
        }
    }
    for path in &files {
        let rel = path.strip_prefix(input).expect("walked from input");
        let img = load_image(path)?;
        let stages = run_pipeline_stages(&img, &cfg.pipeline)?;
        let target = output.join(rel).with_extension("pgm");
        let parent = target.parent().expect("joined onto output");
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        save_pgm(&stages.last().expect("final stage").1, &target)?;
        if stage_dump {
            let dir = target.with_extension("stages");
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            for (i, (name, img)) in stages.iter().enumerate() {
                save_pgm(img, dir.join(format!("{i:02}_{name}.pgm")))?;
            }
        }
        emit(out, target.display().to_string())?;
    }
    Ok(())
}

/// `model.ckpt` → `model.best.ckpt`
pub fn best_checkpoint_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    out.with_file_name(name)
}

fn train(
    data: &Path,
    ckpt: &Path,
    config: Option<&Path>,
    metrics: Option<PathBuf>,
    seed: Option<u64>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let seed = cfg.train.seed;
    let metrics = metrics.or(cfg.metrics.clone());
    let index = scan_dataset(data)?;
    let split = stratified_split(&index, cfg.val_ratio, seed)?;
    let _ = writeln!(
        err,
        "training on {} images, validating on {}",
        split.train.len(),
        split.val.len()
    );
    let model = build_isl_cnn(&cfg.model, seed)?;
    let best_path = best_checkpoint_path(ckpt);
    let mut best_acc = f64::NEG_INFINITY;
    emit(out, CSV_HEADER.to_string())?;
    let (history, model) = train_with(model, &split, &cfg.pipeline, &cfg.train, |m, model| {
        let row = metrics_csv(std::slice::from_ref(m));
        let _ = write!(
            out,
            "{}",
            row.lines()
                .nth(1)
                .map(|l| format!("{l}\n"))
                .unwrap_or_default()
        );
        if m.val_acc > best_acc {
            best_acc = m.val_acc;
            save_checkpoint(model, &index.labels, &best_path)?;
        }
        Ok(())
    })?;
    save_checkpoint(&model, &index.labels, ckpt)?;
    if let Some(path) = metrics {
        fs::write(&path, metrics_csv(&history)).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn gradcheck(
    tolerance: f64,
    model_tolerance: f64,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    for (name, t) in [
        ("tolerance", tolerance),
        ("model-tolerance", model_tolerance),
    ] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Validation(format!(
                "{name} must be positive, got {t}"
            )));
        }
    }
    let numeric = |e: islr_core::nn::NnError| CliError::Numeric(e.to_string());
    let mut rows: Vec<(String, GradCheckReport)> = layer_suite(tolerance, seed)
        .map_err(numeric)?
        .into_iter()
        .map(|r| (r.name, r.report))
        .collect();
    rows.push((
        "model 1x20x20".into(),
        gradcheck_reduced(model_tolerance, seed).map_err(|e| CliError::Numeric(e.to_string()))?,
    ));
    emit(
        out,
        format!(
            "{:<24} {:>14} {:>10} {:>8} {:>8}  status",
            "layer", "max_rel_error", "tolerance", "checked", "skipped"
        ),
    )?;
    for (name, r) in &rows {
        emit(
            out,
            format!(
                "{name:<24} {:>14.3e} {:>10.0e} {:>8} {:>8}  {}",
                r.max_rel_error,
                r.tolerance,
                r.probes(),
                r.skipped(),
                if r.passed() { "ok" } else { "FAIL" }
            ),
        )?;
    }
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.1.passed())
        .map(|r| r.0.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}
