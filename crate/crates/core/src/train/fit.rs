use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{augment_voxels, VoxelSequence};
use crate::model::{save_checkpoint, OgPcl, SequenceBatch};
use crate::ops::{softmax, softmax_crossentropy};
use crate::projection::ProjectionTriple;
use crate::train::adam::{Adam, AdamConfig};
use crate::train::data::Dataset;
use crate::train::metrics::{MetricsReport, Prediction};
use crate::train::split::kfold_split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "cli", derive(clap::ValueEnum))]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Keep the weights after the last epoch.
    #[default]
    Final,
    /// Keep the epoch with the highest validation accuracy (later epoch on ties).
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    pub adam: AdamConfig,
    pub select: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 16, folds: 5, adam: AdamConfig::default(), select: Selection::Final }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch size must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0)
        {
            return Err(Error::Validation(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the fold has no validation data.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum FoldStatus {
    Completed,
    /// Training hit a non-finite loss or gradient during `epoch`; the model
    /// is the one from the end of the previous epoch.
    Diverged {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub model: OgPcl<f32>,
    pub log: Vec<EpochLog>,
    pub status: FoldStatus,
    /// 1-based epoch whose weights were kept, 0 for the initial weights.
    pub selected_epoch: usize,
}

/// Softmax scores for each sequence, evaluated in parallel on a shared model.
pub fn predict_scores(model: &OgPcl<f32>, seqs: &[&VoxelSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter()
        .map(|s| {
            let p = model.config().prepare(s)?;
            let out = model.predict(&SequenceBatch::new(&[&p[..]])?)?;
            Ok(softmax(&out.logits)?.data().iter().map(|&v| v as f64).collect())
        })
        .collect()
}

pub fn predictions(model: &OgPcl<f32>, seqs: &[&VoxelSequence]) -> Result<Vec<Prediction>> {
    let scores = predict_scores(model, seqs)?;
    seqs.iter()
        .zip(scores)
        .map(|(s, scores)| {
            let label = s.label.ok_or_else(|| Error::Validation("evaluation needs labelled sequences".into()))?;
            Ok(Prediction { label, scores })
        })
        .collect()
}

pub fn evaluate(model: &OgPcl<f32>, seqs: &[&VoxelSequence]) -> Result<MetricsReport> {
    MetricsReport::from_predictions(&predictions(model, seqs)?, &model.config().classes)
}

/// `h_T` of every sequence, in order.
pub fn embeddings(model: &OgPcl<f32>, seqs: &[&VoxelSequence]) -> Result<Vec<Vec<f32>>> {
    seqs.par_iter()
        .map(|s| {
            let p = model.config().prepare(s)?;
            Ok(model.predict(&SequenceBatch::new(&[&p[..]])?)?.embedding.into_data())
        })
        .collect()
}

fn accuracy(model: &OgPcl<f32>, seqs: &[&VoxelSequence]) -> Result<Option<f64>> {
    if seqs.is_empty() {
        return Ok(None);
    }
    let preds = predictions(model, seqs)?;
    Ok(Some(preds.iter().filter(|p| p.predicted() == p.label).count() as f64 / preds.len() as f64))
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    rng
}

/// Trains one model from its seeded initialisation. Batches are shuffled
/// and augmented from a generator derived from the model seed and `fold`.
pub fn train_fold(
    train: &[&VoxelSequence],
    val: &[&VoxelSequence],
    model: OgPcl<f32>,
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let labels: Vec<usize> = train
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Validation("training needs labelled sequences".into())))
        .collect::<Result<_>>()?;
    let mut model = model;
    let mut rng = fold_rng(model.config().seed, fold);
    let mut adam = Adam::new(&model, cfg.adam);
    let policy = model.config().augment;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_good = model.clone();
    let mut best: Option<(f64, usize, OgPcl<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut diverged = false;
        for chunk in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = chunk.iter().map(|_| rng.next_u64()).collect();
            let cfg_ref = model.config();
            let projected: Vec<Vec<ProjectionTriple>> = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&i, &seed)| {
                    if policy.is_identity() {
                        cfg_ref.prepare(train[i])
                    } else {
                        cfg_ref.prepare(&augment_voxels(train[i], &policy, seed))
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&[ProjectionTriple]> = projected.iter().map(|p| p.as_slice()).collect();
            let batch = SequenceBatch::new(&refs)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let out = model.forward_train(&batch, &mut rng)?;
            let (loss, grad) = softmax_crossentropy(&out.logits, &batch_labels)?;
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            model.zero_grad();
            model.backward(&grad, &out.cache)?;
            match adam.step(&mut model) {
                Ok(()) => {}
                Err(Error::Numeric(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            if !model.params().iter().all(|(_, p)| p.all_finite()) {
                diverged = true;
                break;
            }
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        if diverged {
            let selected = log.len();
            return Ok(FoldResult {
                model: last_good,
                log,
                status: FoldStatus::Diverged { epoch },
                selected_epoch: selected,
            });
        }
        let val_acc = accuracy(&model, val)?;
        log.push(EpochLog { fold, epoch, train_loss: loss_sum / train.len() as f64, val_acc });
        last_good = model.clone();
        if cfg.select == Selection::Best {
            let score = val_acc.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
    }
    let (model, selected_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, cfg.epochs),
    };
    Ok(FoldResult { model, log, status: FoldStatus::Completed, selected_epoch })
}

pub fn write_epoch_log(mut w: impl Write, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "fold,epoch,train_loss,val_acc")?;
    for e in log {
        let acc = e.val_acc.map_or(String::new(), |a| a.to_string());
        writeln!(w, "{},{},{},{acc}", e.fold, e.epoch, e.train_loss)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub selected_epoch: usize,
    #[serde(flatten)]
    pub status: FoldStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub folds: Vec<FoldSummary>,
    /// Unweighted mean of the fold accuracies.
    pub mean_fold_accuracy: f64,
    pub mean_fold_macro_f1: f64,
    /// Metrics over the validation predictions of all folds together.
    pub pooled: MetricsReport,
}

impl CrossValidationReport {
    pub fn diverged(&self) -> bool {
        self.folds.iter().any(|f| f.status != FoldStatus::Completed)
    }
}

/// Artefacts of a cross-validation run.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: CrossValidationReport,
    pub models: Vec<OgPcl<f32>>,
    pub log: Vec<EpochLog>,
}

/// Stratified k-fold over recordings, one model per fold.
pub fn cross_validate(data: &Dataset, model: &OgPcl<f32>, cfg: &TrainConfig) -> Result<CrossValidation> {
    let labels = data.labels()?;
    let groups = data.group_count();
    let mut group_label = vec![usize::MAX; groups];
    for (&g, &l) in data.groups.iter().zip(&labels) {
        if group_label[g] != usize::MAX && group_label[g] != l {
            return Err(Error::Validation(format!("recording {g} mixes labels {} and {l}", group_label[g])));
        }
        group_label[g] = l;
    }
    let folds = kfold_split(&group_label, cfg.folds, model.config().seed)?;
    let mut summaries = Vec::new();
    let mut pooled = Vec::new();
    let mut models = Vec::new();
    let mut log = Vec::new();
    for (k, (train_g, val_g)) in folds.iter().enumerate() {
        let pick = |gs: &[usize]| -> Vec<&VoxelSequence> {
            (0..data.len()).filter(|&i| gs.binary_search(&data.groups[i]).is_ok()).map(|i| &data.samples[i]).collect()
        };
        let (train, val) = (pick(train_g), pick(val_g));
        let result = train_fold(&train, &val, model.clone(), cfg, k)?;
        let preds = match (predictions(&result.model, &val), result.status) {
            (Err(Error::State(_)), FoldStatus::Diverged { epoch }) => {
                return Err(Error::Numeric(format!("fold {k} diverged in epoch {epoch} before any epoch completed")))
            }
            (p, _) => p?,
        };
        let report = MetricsReport::from_predictions(&preds, &model.config().classes)?;
        summaries.push(FoldSummary {
            fold: k,
            train_size: train.len(),
            val_size: val.len(),
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            selected_epoch: result.selected_epoch,
            status: result.status,
        });
        pooled.extend(preds);
        log.extend(result.log);
        models.push(result.model);
    }
    let n = summaries.len() as f64;
    let report = CrossValidationReport {
        mean_fold_accuracy: summaries.iter().map(|s| s.accuracy).sum::<f64>() / n,
        mean_fold_macro_f1: summaries.iter().map(|s| s.macro_f1).sum::<f64>() / n,
        folds: summaries,
        pooled: MetricsReport::from_predictions(&pooled, &model.config().classes)?,
    };
    Ok(CrossValidation { report, models, log })
}

/// Writes `report.json`, `confusion.csv`, `per_class.csv` and `pr_curves.csv`.
pub fn write_report_files(dir: &Path, json: &impl Serialize, metrics: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("report.json"))?), json)?;
    metrics.write_confusion_csv(BufWriter::new(File::create(dir.join("confusion.csv"))?))?;
    metrics.write_per_class_csv(BufWriter::new(File::create(dir.join("per_class.csv"))?))?;
    metrics.write_pr_csv(BufWriter::new(File::create(dir.join("pr_curves.csv"))?))?;
    Ok(())
}

/// Writes fold checkpoints `fold<k>.ogpc`, `epochs.csv` and the report files.
pub fn write_cross_validation(dir: &Path, cv: &CrossValidation) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, m) in cv.models.iter().enumerate() {
        save_checkpoint(m, &dir.join(format!("fold{k}.ogpc")))?;
    }
    write_epoch_log(BufWriter::new(File::create(dir.join("epochs.csv"))?), &cv.log)?;
    write_report_files(dir, &cv.report, &cv.report.pooled)
}
