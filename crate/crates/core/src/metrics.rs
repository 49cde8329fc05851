//! Dice evaluation and per-tract reporting.

use crate::phantom::PhantomSubject;
use crate::segmentation::{binarize, predict_subject, SegError, SliceClassifier};
use crate::volume::LabelVolume;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dice overlap `2|P ∩ T| / (|P| + |T|)` for one class; two empty masks
/// score 1.0.
pub fn dice(pred: &LabelVolume, truth: &LabelVolume, class: usize) -> Result<f64, MetricsError> {
    if pred.dims() != truth.dims() {
        return Err(MetricsError::DimMismatch(format!(
            "{:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    if class >= pred.classes() || class >= truth.classes() {
        return Err(MetricsError::ClassOutOfRange {
            class,
            classes: pred.classes().min(truth.classes()),
        });
    }
    let mut p = 0usize;
    let mut t = 0usize;
    let mut both = 0usize;
    let pc = pred.classes();
    let tc = truth.classes();
    let nvox = pred.dims()[0] * pred.dims()[1] * pred.dims()[2];
    for v in 0..nvox {
        let a = pred.data()[v * pc + class];
        let b = truth.data()[v * tc + class];
        p += a as usize;
        t += b as usize;
        both += (a & b) as usize;
    }
    if p + t == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + t) as f64)
}

/// One (subject, class) Dice observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceRow {
    pub subject_id: String,
    pub class_name: String,
    pub dice: f64,
}

/// Per-class mean and standard deviation over the test subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStat {
    pub class_name: String,
    pub mean: f64,
    pub std: f64,
}

/// Evaluation summary mirroring a per-method results table: one row per
/// (subject, class), per-class aggregates, and a pooled mean +- std over all
/// rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub method_tag: String,
    pub rows: Vec<DiceRow>,
    pub per_class: Vec<ClassStat>,
    pub overall_mean: f64,
    pub overall_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Predicts every test subject, binarizes at `threshold`, and aggregates
/// per-class Dice. Subjects evaluate in parallel; rows keep input order.
pub fn evaluate<M: SliceClassifier + ?Sized>(
    model: &M,
    test: &[PhantomSubject],
    threshold: f64,
    method_tag: &str,
) -> Result<DiceReport, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let per_subject: Vec<Vec<DiceRow>> = test
        .par_iter()
        .map(|subject| {
            let pred = predict_subject(model, &subject.peaks)?;
            let mask = binarize(&pred, threshold);
            let mut rows = Vec::with_capacity(subject.truth.classes());
            for class in 0..subject.truth.classes() {
                rows.push(DiceRow {
                    subject_id: subject.id.clone(),
                    class_name: format!("tract_{class}"),
                    dice: dice(&mask, &subject.truth, class)?,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_, MetricsError>>()?;

    let rows: Vec<DiceRow> = per_subject.into_iter().flatten().collect();
    let classes = test[0].truth.classes();
    let mut per_class = Vec::with_capacity(classes);
    for class in 0..classes {
        let name = format!("tract_{class}");
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.class_name == name)
            .map(|r| r.dice)
            .collect();
        let (mean, std) = mean_std(&values);
        per_class.push(ClassStat {
            class_name: name,
            mean,
            std,
        });
    }
    let all: Vec<f64> = rows.iter().map(|r| r.dice).collect();
    let (overall_mean, overall_std) = mean_std(&all);
    Ok(DiceReport {
        method_tag: method_tag.to_string(),
        rows,
        per_class,
        overall_mean,
        overall_std,
    })
}

impl DiceReport {
    /// CSV with columns `method,subject_id,class,dice` (6 decimal places)
    /// plus a final `ALL,ALL` summary row holding the pooled mean.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,subject_id,class,dice\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                self.method_tag, row.subject_id, row.class_name, row.dice
            ));
        }
        out.push_str(&format!(
            "{},ALL,ALL,{:.6}\n",
            self.method_tag, self.overall_mean
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
