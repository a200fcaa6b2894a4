use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True label and softmax scores for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Arg-max class; ties go to the lower index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    /// Fraction of this class's sequences classified correctly.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub note: String,
    pub count: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub pr_curves: Vec<Vec<PrPoint>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One-vs-rest precision/recall at every distinct score, highest first,
/// and the step-integrated average precision `sum (R_k - R_{k-1}) P_k`.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> (Vec<PrPoint>, f64) {
    let total_pos = positive.iter().filter(|&&p| p).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, total_pos);
        ap += (recall - last_recall) * precision;
        last_recall = recall;
        points.push(PrPoint { threshold, precision, recall });
    }
    (points, ap)
}

impl MetricsReport {
    pub fn from_predictions(preds: &[Prediction], classes: &[String]) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Validation("cannot evaluate an empty dataset".into()));
        }
        let k = classes.len();
        if let Some(p) = preds.iter().find(|p| p.label >= k || p.scores.len() != k) {
            return Err(Error::Validation(format!(
                "prediction with label {} and {} scores does not fit {k} classes",
                p.label,
                p.scores.len()
            )));
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for p in preds {
            confusion[p.label][p.predicted()] += 1;
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let mut per_class = Vec::with_capacity(k);
        let mut pr_curves = Vec::with_capacity(k);
        for c in 0..k {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let precision = ratio(confusion[c][c], predicted);
            let recall = ratio(confusion[c][c], support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            let scores: Vec<f64> = preds.iter().map(|p| p.scores[c]).collect();
            let positive: Vec<bool> = preds.iter().map(|p| p.label == c).collect();
            let (curve, average_precision) = pr_curve(&scores, &positive);
            pr_curves.push(curve);
            per_class.push(ClassMetrics {
                class: classes[c].clone(),
                support,
                accuracy: recall,
                precision,
                recall,
                f1,
                average_precision,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        Ok(Self {
            note: "precision, recall and F1 are macro averages over classes; per-class accuracy equals recall".into(),
            count: preds.len(),
            accuracy: ratio(correct, preds.len()),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
            confusion,
            pr_curves,
        })
    }

    pub fn write_confusion_csv(&self, mut w: impl Write) -> Result<()> {
        let names: Vec<&str> = self.per_class.iter().map(|c| c.class.as_str()).collect();
        writeln!(w, "true\\predicted,{}", names.join(","))?;
        for (name, row) in names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_per_class_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "class,support,accuracy,precision,recall,f1,average_precision")?;
        for c in &self.per_class {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                c.class, c.support, c.accuracy, c.precision, c.recall, c.f1, c.average_precision
            )?;
        }
        Ok(())
    }

    pub fn write_pr_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "class,threshold,precision,recall")?;
        for (c, curve) in self.per_class.iter().zip(&self.pr_curves) {
            for p in curve {
                writeln!(w, "{},{},{},{}", c.class, p.threshold, p.precision, p.recall)?;
            }
        }
        Ok(())
    }
}
