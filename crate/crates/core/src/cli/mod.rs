//! Command-line interface. Exit codes: 0 success, 2 usage or configuration
//! error, 3 data error, 4 budget violation.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{apply_override, resolve, write_snapshot, QuantizeConfig, RunConfig, RunSpec, SNAPSHOT_FILE};

use crate::augment::IrBank;
use crate::distill::{ensemble_logits, load_teacher_logits, TeacherLogitsTable};
use crate::error::{Error, Result};
use crate::features::{read_wav, write_fmap, write_feature_index, FeatureExtractor, FeatureMap};
use crate::model::{ComplexityReport, ModelConfig, StudentModel, CHECKPOINT_MAGIC, MAC_BUDGET, SIZE_BUDGET_KIB_BYTES};
use crate::quantize::{calibrate, quantize_model, quantize_weights_only, QuantMode, QuantizedModel, QUANT_MAGIC};
use crate::synth::write_dataset;
use crate::trainer::{
    accuracy_report, format_metrics, train, Dataset, DatasetManifest, ManifestRow, Split, TrainInputs,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tfsep", version, about = "Separable CNN acoustic scene classifier: train, distill, analyze, quantize")]
pub struct Cli {
    /// TOML configuration file; `--set` overrides win over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset manifest CSV.
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Restrict to a training split: 5, 10, 25, 50 or 100.
    #[arg(long, value_name = "PERCENT")]
    pub split: Option<Split>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic scene dataset: audio, impulse responses and manifests.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute log-mel feature files for every clip of a manifest.
    Extract {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for `features/`, `index.csv` and `manifest.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a student, optionally distilling from teacher logits.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Teacher logits (CSV or TLOG) covering the training split.
        #[arg(long, value_name = "FILE")]
        teacher: Option<PathBuf>,
        /// Manifest evaluated after every epoch; enables `best.tfsn`.
        #[arg(long, value_name = "CSV")]
        eval_manifest: Option<PathBuf>,
        /// Impulse-response index for waveform augmentation.
        #[arg(long, value_name = "FILE")]
        ir_index: Option<PathBuf>,
        /// Output directory for checkpoints and `metrics.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-1 accuracy of a float (TFSN) or quantized (TFSQ) checkpoint.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Add a per-device breakdown.
        #[arg(long)]
        per_device: bool,
        /// Output directory for `report.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average teacher-logit files clip by clip.
    Ensemble {
        /// Member logit files (CSV or TLOG).
        #[arg(long, required = true, num_args = 1.., value_name = "FILE")]
        inputs: Vec<PathBuf>,
        /// Output directory; the result takes the first input's extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameters, MACs and INT8 size against the budget; exits 4 when over.
    Analyze {
        /// Analyze this checkpoint's architecture instead of the configured one.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Read the size budget as 128 KiB instead of 128,000 bytes.
        #[arg(long)]
        kib: bool,
        /// Output directory for `complexity.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate and quantize a checkpoint to INT8; exits 4 when over budget.
    Quantize {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for `model.tfsq` and `size.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export pooled embeddings for external visualization.
    Embed {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for `embeddings.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Extract { .. } => "extract",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ensemble { .. } => "ensemble",
            Command::Analyze { .. } => "analyze",
            Command::Quantize { .. } => "quantize",
            Command::Embed { .. } => "embed",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Synth { out }
            | Command::Extract { out, .. }
            | Command::Train { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Ensemble { out, .. }
            | Command::Analyze { out, .. }
            | Command::Quantize { out, .. }
            | Command::Embed { out, .. } => out,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Budget(_) => EXIT_BUDGET,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr as one line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.to_string().split_whitespace().collect::<Vec<_>>().join(" "));
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let spec = RunSpec {
        command: cli.command.name().to_string(),
        config: cli.config.clone(),
        overrides: cli.overrides.clone(),
        out: cli.command.out().to_path_buf(),
    };
    let cfg = spec.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;
    write_snapshot(&cfg, &spec.out)?;
    log::info!("{}: configuration written to {}", spec.command, spec.out.join(SNAPSHOT_FILE).display());
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Synth { out } => {
            let paths = write_dataset(&cfg.synth, &out)?;
            println!("train manifest\t{}", paths.train_manifest.display());
            println!("eval manifest\t{}", paths.eval_manifest.display());
            println!("impulse responses\t{}", paths.ir_index.display());
            Ok(())
        }
        Command::Extract { data, out } => extract(cfg, &data, &out),
        Command::Train { data, teacher, eval_manifest, ir_index, out } => {
            run_train(cfg, &data, teacher.as_deref(), eval_manifest.as_deref(), ir_index.as_deref(), &out)
        }
        Command::Evaluate { checkpoint, data, per_device, out } => {
            let predictor = Predictor::load(&checkpoint)?;
            let set = load_dataset(cfg, &data)?;
            let maps: Vec<FeatureMap> = set.feature_maps().cloned().collect();
            let logits = predictor.forward_batch(&maps)?;
            let labels: Vec<usize> = set.examples.iter().map(|e| e.scene).collect();
            let devices: Vec<String> = set.examples.iter().map(|e| e.device.clone()).collect();
            let report =
                accuracy_report(&logits, &labels, per_device.then_some(&devices[..]), predictor.config().n_classes)?;
            let text = report.to_text();
            print!("{text}");
            write_file(&out.join("report.txt"), text.as_bytes())
        }
        Command::Ensemble { inputs, out } => {
            let tables = inputs.iter().map(|p| TeacherLogitsTable::read(p)).collect::<Result<Vec<_>>>()?;
            let merged = ensemble_logits(&tables)?;
            let ext = inputs[0].extension().map_or("csv".into(), |e| e.to_string_lossy().into_owned());
            let path = out.join(format!("ensemble.{ext}"));
            merged.write(&path)?;
            println!("{} clips, {} classes, {} members\t{}", merged.len(), merged.class_count, tables.len(), path.display());
            Ok(())
        }
        Command::Analyze { checkpoint, kib, out } => {
            let model_cfg = match checkpoint {
                Some(p) => Predictor::load(&p)?.config().clone(),
                None => cfg.model.clone(),
            };
            let limit = if kib { SIZE_BUDGET_KIB_BYTES } else { cfg.quantize.size_limit_bytes };
            let report = crate::model::analyze_with_limit(&model_cfg, limit)?;
            print!("{}", complexity_text(&report));
            write_toml(&out.join("complexity.toml"), &report)?;
            if !report.budget_ok {
                return Err(Error::Budget(format!(
                    "{} bytes / {} MACs exceeds {limit} bytes / {MAC_BUDGET} MACs",
                    report.int8_size_bytes, report.macs_per_inference
                )));
            }
            Ok(())
        }
        Command::Quantize { checkpoint, data, out } => run_quantize(cfg, &checkpoint, &data, &out),
        Command::Embed { checkpoint, data, out } => {
            let model = Predictor::load(&checkpoint)?.float()?;
            let set = load_dataset(cfg, &data)?;
            let maps: Vec<FeatureMap> = set.feature_maps().cloned().collect();
            let emb = model.embeddings(&maps)?;
            let dim = emb.first().map_or(0, Vec::len);
            let mut text = String::from("clip_id,scene,device");
            (0..dim).for_each(|d| {
                let _ = write!(text, ",e{d}");
            });
            text.push('\n');
            for (e, v) in set.examples.iter().zip(&emb) {
                let _ = write!(text, "{},{},{}", e.clip_id, e.scene, e.device);
                v.iter().for_each(|x| {
                    let _ = write!(text, ",{x:.8e}");
                });
                text.push('\n');
            }
            let path = out.join("embeddings.csv");
            println!("{} embeddings of dimension {dim}\t{}", emb.len(), path.display());
            write_file(&path, text.as_bytes())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Format(format!("cannot encode {}: {e}", path.display())))?;
    write_file(path, text.as_bytes())
}

pub fn complexity_text(r: &ComplexityReport) -> String {
    format!(
        "parameters\t{}\nmacs\t{}\nint8_bytes\t{}\nsize_limit_bytes\t{}\nmac_limit\t{MAC_BUDGET}\nbudget\t{}\n",
        r.param_count,
        r.macs_per_inference,
        r.int8_size_bytes,
        r.size_limit_bytes,
        if r.budget_ok { "PASS" } else { "FAIL" }
    )
}

fn extractor(cfg: &RunConfig) -> Result<FeatureExtractor> {
    FeatureExtractor::new(cfg.features.clone())
}

fn load_dataset(cfg: &RunConfig, data: &DataArgs) -> Result<Dataset> {
    let manifest = DatasetManifest::read(&data.manifest)?;
    Dataset::load(&manifest, data.split, Some(&extractor(cfg)?))
}

fn extract(cfg: &RunConfig, data: &DataArgs, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::read(&data.manifest)?;
    let ex = extractor(cfg)?;
    let dir = out.join("features");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rows = manifest.rows_in(data.split);
    let written: Vec<ManifestRow> = rows
        .par_iter()
        .map(|row| {
            let map = if row.is_audio() {
                ex.extract(&read_wav(&row.path, row.clip_id.clone())?)?
            } else {
                crate::features::read_fmap(&row.path, row.clip_id.clone())?
            };
            let path = dir.join(format!("{}.fmap", row.clip_id));
            write_fmap(&path, &map)?;
            Ok(ManifestRow { path, ..(*row).clone() })
        })
        .collect::<Result<_>>()?;
    let index: Vec<(String, PathBuf)> = written
        .iter()
        .map(|r| (r.clip_id.clone(), r.path.strip_prefix(out).unwrap_or(&r.path).to_path_buf()))
        .collect();
    write_feature_index(&out.join("index.csv"), &index)?;
    DatasetManifest::new(written)?.write(&out.join("manifest.csv"), Some(out))?;
    println!("{} feature maps\t{}", index.len(), out.join("manifest.csv").display());
    Ok(())
}

fn run_train(
    cfg: &RunConfig,
    data: &DataArgs,
    teacher: Option<&Path>,
    eval_manifest: Option<&Path>,
    ir_index: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut tcfg = cfg.train.clone();
    if let Some(s) = data.split {
        tcfg.split = s;
    }
    let manifest = DatasetManifest::read(&data.manifest)?;
    let ex = extractor(cfg)?;
    let train_set = Dataset::load(&manifest, Some(tcfg.split), Some(&ex))?;
    let table = match teacher {
        Some(p) => Some(load_teacher_logits(p, &manifest, Some(tcfg.split))?),
        None => None,
    };
    let eval_set = match eval_manifest {
        Some(p) => Some(Dataset::load(&DatasetManifest::read(p)?, None, Some(&ex))?),
        None => None,
    };
    let bank = match ir_index {
        Some(p) => Some(IrBank::load(p)?),
        None => None,
    };
    let model = StudentModel::build(cfg.model.clone(), tcfg.seed)?;
    log::info!(
        "training {} clips of {} for {} epochs at lr {}{}",
        train_set.len(),
        tcfg.split,
        tcfg.epochs,
        tcfg.initial_lr(),
        if table.is_some() { " with distillation" } else { "" }
    );
    let inputs = TrainInputs { teacher: table.as_ref(), eval: eval_set.as_ref(), ir_bank: bank.as_ref(), extractor: Some(&ex) };
    let outcome = train(&train_set, model, &tcfg, &inputs)?;
    outcome.model.save(&out.join("model.tfsn"))?;
    if let Some((epoch, best)) = &outcome.best {
        best.save(&out.join("best.tfsn"))?;
        log::info!("best evaluation accuracy at epoch {epoch}");
    }
    write_file(&out.join("metrics.tsv"), format_metrics(&outcome.metrics).as_bytes())?;
    if let Some(last) = outcome.metrics.last() {
        println!("epochs\t{}\nloss\t{:.6}\ntrain_acc\t{:.6}", outcome.metrics.len(), last.loss, last.train_acc);
        if let Some(a) = last.eval_acc {
            println!("eval_acc\t{a:.6}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SizeReport {
    mode: QuantMode,
    size_bytes: usize,
    predicted_bytes: usize,
    size_limit_bytes: usize,
    within_budget: bool,
}

fn run_quantize(cfg: &RunConfig, checkpoint: &Path, data: &DataArgs, out: &Path) -> Result<()> {
    let model = Predictor::load(checkpoint)?.float()?;
    let q = match cfg.quantize.mode {
        QuantMode::Full => {
            let set = load_dataset(cfg, data)?;
            if set.is_empty() {
                return Err(Error::Data("calibration split is empty".into()));
            }
            let maps: Vec<FeatureMap> = set.feature_maps().cloned().collect();
            let batch = cfg.quantize.calibration_batch.max(1);
            quantize_model(&model, &calibrate(&model, maps.chunks(batch))?)?
        }
        QuantMode::WeightsOnly => quantize_weights_only(&model),
    };
    q.save(&out.join("model.tfsq"))?;
    let limit = cfg.quantize.size_limit_bytes;
    let report = SizeReport {
        mode: q.mode,
        size_bytes: q.size_bytes(),
        predicted_bytes: model.complexity().int8_size_bytes,
        size_limit_bytes: limit,
        within_budget: q.size_bytes() <= limit,
    };
    write_toml(&out.join("size.toml"), &report)?;
    println!("size_bytes\t{}\npredicted_bytes\t{}\nsize_limit_bytes\t{limit}", report.size_bytes, report.predicted_bytes);
    if !report.within_budget {
        return Err(Error::Budget(format!("quantized model is {} bytes, limit {limit}", report.size_bytes)));
    }
    Ok(())
}

/// A float or quantized checkpoint, detected from its magic.
pub enum Predictor {
    Float(StudentModel),
    Quantized(QuantizedModel),
}

impl Predictor {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(CHECKPOINT_MAGIC) {
            Ok(Predictor::Float(StudentModel::from_bytes(&bytes)?))
        } else if bytes.starts_with(QUANT_MAGIC) {
            Ok(Predictor::Quantized(QuantizedModel::from_bytes(&bytes)?))
        } else {
            Err(Error::Format(format!("{}: neither a TFSN nor a TFSQ checkpoint", path.display())))
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Predictor::Float(m) => m.config(),
            Predictor::Quantized(q) => q.config(),
        }
    }

    pub fn forward_batch(&self, maps: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
        match self {
            Predictor::Float(m) => m.forward_batch(maps),
            Predictor::Quantized(q) => q.forward_batch(maps),
        }
    }

    /// The float model, dequantizing when needed.
    pub fn float(self) -> Result<StudentModel> {
        match self {
            Predictor::Float(m) => Ok(m),
            Predictor::Quantized(q) => q.dequantized(),
        }
    }
}
