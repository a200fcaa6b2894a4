//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::ingest::{voxelize, window_sequences, Bounds, ManifestEntry, VoxelSequence};
use crate::model::{load_checkpoint, write_embeddings_csv, ModelConfig, OgPcl};
use crate::projection::View;
use crate::train::{
    cross_validate, embeddings, evaluate, load_manifest, predict_scores, read_frames, train_fold,
    write_cross_validation, write_epoch_log, write_report_files, Selection, StreamFormat, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ogpcl", version, about = "Occupancy-gated activity recognition from radar point clouds")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Seed for initialisation, fold assignment, shuffling and augmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Frames between the starts of consecutive windows.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Voxel box as xmin,xmax,ymin,ymax,zmin,zmax (metres).
    #[arg(long, global = true, value_parser = parse_bounds, allow_hyphen_values = true)]
    bounds: Option<Bounds>,
    /// Drop the K/D rescaling inside every OGConv layer.
    #[arg(long, global = true)]
    no_compensation: bool,
    /// Comma-separated subset of top,front,side.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_view)]
    views: Option<Vec<View>>,
    /// Which epoch's weights a fold keeps.
    #[arg(long, global = true, value_enum)]
    select: Option<Selection>,
    /// Layout of point-cloud text inputs.
    #[arg(long, global = true, value_enum, default_value_t)]
    format: StreamFormat,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Window frame streams and write binary voxel sequences (.vox).
    Voxelize {
        /// Frame stream files.
        inputs: Vec<PathBuf>,
        /// Manifest of labelled streams; a matching manifest of .vox files is written.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training; writes one checkpoint per fold, logs and a report.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Number of folds; 1 trains a single model on everything.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on a labelled manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one frame stream, averaging softmax scores over its windows.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Run the double-precision gradient checks.
    Gradcheck,
    /// Write the last-step BiLSTM state of every sequence as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn parse_bounds(s: &str) -> Result<Bounds> {
    Bounds::parse(s)
}

fn parse_view(s: &str) -> Result<View> {
    View::parse(s)
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn load_config_file(g: &GlobalArgs) -> Result<ConfigFile> {
    match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(ConfigFile::default()),
    }
}

/// Config file values overridden by command-line flags.
fn model_config(g: &GlobalArgs, mut c: ModelConfig) -> Result<ModelConfig> {
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(s) = g.stride {
        c.stride = s;
    }
    if let Some(b) = g.bounds {
        c.bounds = Some(b);
    }
    if g.no_compensation {
        c.compensation = false;
    }
    if let Some(v) = &g.views {
        c = c.with_views(v)?;
    }
    c.validate()?;
    Ok(c)
}

/// Loads a checkpoint and applies the flags that make sense for a trained
/// model: data-side overrides and the compensation ablation.
fn checkpoint_model(g: &GlobalArgs, path: &Path) -> std::result::Result<(OgPcl<f32>, ModelConfig), Failure> {
    if g.views.is_some() || g.select.is_some() || g.seed.is_some() {
        return Err(Failure::Usage("--views, --select and --seed only apply to train".into()));
    }
    let mut model = load_checkpoint(path)?;
    if g.no_compensation {
        model.set_compensation(false);
    }
    let mut data_cfg = model.config().clone();
    if let Some(s) = g.stride {
        data_cfg.stride = s;
    }
    if let Some(b) = g.bounds {
        data_cfg.bounds = Some(b);
    }
    data_cfg.validate()?;
    Ok((model, data_cfg))
}

fn execute(cli: Cli) -> std::result::Result<i32, Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Voxelize { inputs, manifest, out } => voxelize_cmd(g, inputs, manifest, &out),
        Command::Train { manifest, out, epochs, folds, batch_size, lr } => {
            let file = load_config_file(g)?;
            let mut mc = model_config(g, file.model)?;
            let mut tc = file.train;
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(f) = folds {
                tc.folds = f;
            }
            if let Some(b) = batch_size {
                tc.batch_size = b;
            }
            if let Some(lr) = lr {
                tc.adam.learning_rate = lr;
            }
            if let Some(s) = g.select {
                tc.select = s;
            }
            tc.validate()?;
            if tc.folds == 0 {
                return Err(Failure::Usage("--folds must be at least 1".into()));
            }
            train_cmd(&manifest, &out, &mut mc, &tc, g.format)
        }
        Command::Eval { checkpoint, manifest, out } => {
            let (model, mut dc) = checkpoint_model(g, &checkpoint)?;
            let data = load_manifest(&manifest, &mut dc, g.format)?;
            let refs: Vec<&VoxelSequence> = data.samples.iter().collect();
            let report = evaluate(&model, &refs)?;
            write_report_files(&out, &report, &report)?;
            println!(
                "accuracy {:.4}  macro precision {:.4}  macro recall {:.4}  macro F1 {:.4}  ({} sequences)",
                report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1, report.count
            );
            Ok(EXIT_OK)
        }
        Command::Infer { checkpoint, input } => {
            let (model, mut dc) = checkpoint_model(g, &checkpoint)?;
            let frames = read_frames(&input, g.format)?;
            let windows = window_sequences(&frames, dc.seq_len, dc.stride)?;
            if windows.is_empty() {
                return Err(Error::Validation(format!(
                    "{}: {} frames, need at least {}",
                    input.display(),
                    frames.len(),
                    dc.seq_len
                ))
                .into());
            }
            if dc.bounds.is_none() {
                eprintln!("warning: checkpoint has no voxel bounds; deriving them from this stream");
                dc.bounds = Some(Bounds::from_percentiles(frames.iter())?);
            }
            let bounds = dc.bounds.expect("set above");
            let seqs = windows.iter().map(|w| voxelize(w, &bounds, dc.voxel_dims)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&VoxelSequence> = seqs.iter().collect();
            let scores = predict_scores(&model, &refs)?;
            let k = dc.classes.len();
            let mean: Vec<f64> =
                (0..k).map(|c| scores.iter().map(|s| s[c]).sum::<f64>() / scores.len() as f64).collect();
            let best = (0..k).fold(0, |b, c| if mean[c] > mean[b] { c } else { b });
            let by_class: serde_json::Map<String, serde_json::Value> =
                dc.classes.iter().zip(&mean).map(|(c, &s)| (c.clone(), json!(s))).collect();
            println!(
                "{}",
                json!({ "label": best, "class": dc.classes[best], "windows": seqs.len(), "scores": by_class })
            );
            Ok(EXIT_OK)
        }
        Command::Gradcheck => {
            let results = run_suite(g.seed.unwrap_or(0))?;
            let mut ok = true;
            for r in &results {
                println!(
                    "{:<14} max relative error {:.3e}  (tolerance {:.0e}, worst in {})  {}",
                    r.name,
                    r.max_relative_error,
                    r.tolerance,
                    r.worst,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
                ok &= r.passed();
            }
            let layers = results.iter().filter(|r| r.name != "ogpcl_loss_t2").map(|r| r.max_relative_error);
            println!("max relative error over layers: {:.3e}", layers.fold(0.0, f64::max));
            Ok(if ok { EXIT_OK } else { EXIT_NUMERIC })
        }
        Command::ExportEmbeddings { checkpoint, manifest, out } => {
            let (model, mut dc) = checkpoint_model(g, &checkpoint)?;
            let data = load_manifest(&manifest, &mut dc, g.format)?;
            let refs: Vec<&VoxelSequence> = data.samples.iter().collect();
            let emb = embeddings(&model, &refs)?;
            let rows: Vec<(Vec<f32>, Option<usize>)> = emb.into_iter().zip(refs.iter().map(|s| s.label)).collect();
            write_embeddings_csv(BufWriter::new(File::create(&out)?), &rows, 2 * dc.hidden)?;
            println!("wrote {} embeddings to {}", rows.len(), out.display());
            Ok(EXIT_OK)
        }
    }
}

fn voxelize_cmd(
    g: &GlobalArgs,
    inputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
    out: &Path,
) -> std::result::Result<i32, Failure> {
    let cfg = model_config(g, load_config_file(g)?.model)?;
    let entries: Vec<(PathBuf, Option<usize>)> = match &manifest {
        Some(m) => {
            let base = m.parent().unwrap_or(Path::new("."));
            let file = std::io::BufReader::new(File::open(m)?);
            crate::ingest::parse_manifest(file, base, &cfg.classes)?
                .into_iter()
                .map(|ManifestEntry { path, label }| (path, Some(label)))
                .collect()
        }
        None => inputs.into_iter().map(|p| (p, None)).collect(),
    };
    if entries.is_empty() {
        return Err(Failure::Usage("give frame stream files or --manifest".into()));
    }
    let streams = entries.iter().map(|(p, _)| read_frames(p, g.format)).collect::<Result<Vec<_>>>()?;
    let bounds = match cfg.bounds {
        Some(b) => b,
        None => Bounds::from_percentiles(streams.iter().flatten())?,
    };
    fs::create_dir_all(out)?;
    let mut listing = Vec::new();
    let mut total = 0;
    for ((path, label), frames) in entries.iter().zip(&streams) {
        let stem = path.file_stem().map_or("stream".into(), |s| s.to_string_lossy().into_owned());
        for (i, w) in window_sequences(frames, cfg.seq_len, cfg.stride)?.iter().enumerate() {
            let mut seq = voxelize(w, &bounds, cfg.voxel_dims)?;
            seq.label = *label;
            let name = format!("{stem}_{i:04}.vox");
            seq.write_to(BufWriter::new(File::create(out.join(&name))?))?;
            listing.push((name, *label));
            total += 1;
        }
    }
    if manifest.is_some() {
        let mut m = BufWriter::new(File::create(out.join("manifest.tsv"))?);
        for (name, label) in &listing {
            writeln!(m, "{name}\t{}", label.expect("manifest entries are labelled"))?;
        }
    }
    let b = bounds;
    println!(
        "wrote {total} sequences to {}; bounds {},{},{},{},{},{}",
        out.display(),
        b.min[0],
        b.max[0],
        b.min[1],
        b.max[1],
        b.min[2],
        b.max[2]
    );
    Ok(EXIT_OK)
}

fn train_cmd(
    manifest: &Path,
    out: &Path,
    mc: &mut ModelConfig,
    tc: &TrainConfig,
    format: StreamFormat,
) -> std::result::Result<i32, Failure> {
    let data = load_manifest(manifest, mc, format)?;
    let model = OgPcl::<f32>::new(mc.clone())?;
    eprintln!(
        "{} sequences from {} recordings, {} parameters, views {:?}",
        data.len(),
        data.group_count(),
        model.count_parameters(),
        mc.views().iter().map(|v| v.name()).collect::<Vec<_>>()
    );
    fs::create_dir_all(out)?;
    if tc.folds == 1 {
        let refs: Vec<&VoxelSequence> = data.samples.iter().collect();
        let r = train_fold(&refs, &[], model, tc, 0)?;
        crate::model::save_checkpoint(&r.model, &out.join("fold0.ogpc"))?;
        write_epoch_log(BufWriter::new(File::create(out.join("epochs.csv"))?), &r.log)?;
        let loss = r.log.last().map_or(f64::NAN, |e| e.train_loss);
        println!("trained on all {} sequences; final train loss {loss:.6}", refs.len());
        return Ok(if matches!(r.status, crate::train::FoldStatus::Completed) { EXIT_OK } else { EXIT_NUMERIC });
    }
    let cv = cross_validate(&data, &model, tc)?;
    write_cross_validation(out, &cv)?;
    for f in &cv.report.folds {
        println!("fold {}: accuracy {:.4}  macro F1 {:.4}  ({:?})", f.fold, f.accuracy, f.macro_f1, f.status);
    }
    println!(
        "mean fold accuracy {:.4}; pooled accuracy {:.4}; pooled macro F1 {:.4}",
        cv.report.mean_fold_accuracy, cv.report.pooled.accuracy, cv.report.pooled.macro_f1
    );
    Ok(if cv.report.diverged() { EXIT_NUMERIC } else { EXIT_OK })
}
