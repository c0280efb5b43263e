//! Agreement between a predicted class map (DS) and a reference label map
//! (MS), per scored tissue class:
//!
//! ```text
//! Dice = 2|DS ∩ MS| / (|DS| + |MS|)
//! Sn   = |DS ∩ MS| / |MS|
//! Sp   = |¬DS ∩ ¬MS| / |¬MS|
//! ```
//!
//! Complements are taken over the whole raster. Only classes 1–4 are scored.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_dataset, DatasetSplit, LabeledImage, Manifest};
use crate::error::{Error, Result};
use crate::network::{train_from_manifest, Checkpoint, EpochRecord, TrainConfig};
use crate::raster::{LabelMap, TissueClass};
use crate::seed::derive_seed;
use crate::staining::stain_bscan;

/// Pixel counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OverlapCounts {
    /// |DS|
    pub predicted: u64,
    /// |MS|
    pub reference: u64,
    /// |DS ∩ MS|
    pub intersection: u64,
    pub total: u64,
}

impl OverlapCounts {
    pub fn from_masks(ds: &[bool], ms: &[bool]) -> Result<Self> {
        if ds.len() != ms.len() {
            return Err(Error::invalid(format!(
                "masks differ in size: {} vs {}",
                ds.len(),
                ms.len()
            )));
        }
        let mut c = OverlapCounts {
            total: ds.len() as u64,
            ..Default::default()
        };
        for (&d, &m) in ds.iter().zip(ms) {
            c.predicted += d as u64;
            c.reference += m as u64;
            c.intersection += (d && m) as u64;
        }
        Ok(c)
    }

    pub fn for_class(predicted: &LabelMap, reference: &LabelMap, class: TissueClass) -> Result<Self> {
        if !predicted.raster().same_shape(reference.raster()) {
            return Err(Error::invalid(format!(
                "class map {}x{} and reference {}x{} differ in shape",
                predicted.height(),
                predicted.width(),
                reference.height(),
                reference.width()
            )));
        }
        let mut c = OverlapCounts {
            total: predicted.classes().len() as u64,
            ..Default::default()
        };
        for (&d, &m) in predicted.classes().iter().zip(reference.classes()) {
            let (d, m) = (d == class, m == class);
            c.predicted += d as u64;
            c.reference += m as u64;
            c.intersection += (d && m) as u64;
        }
        Ok(c)
    }

    pub fn dice(&self) -> Result<f64> {
        let denom = self.predicted + self.reference;
        if denom == 0 {
            return Err(Error::invalid("dice undefined: class absent from both maps"));
        }
        Ok(2.0 * self.intersection as f64 / denom as f64)
    }

    pub fn sensitivity(&self) -> Result<f64> {
        if self.reference == 0 {
            return Err(Error::invalid("sensitivity undefined: class absent from reference"));
        }
        Ok(self.intersection as f64 / self.reference as f64)
    }

    pub fn specificity(&self) -> Result<f64> {
        let negatives = self.total - self.reference;
        if negatives == 0 {
            return Err(Error::invalid("specificity undefined: reference covers the whole image"));
        }
        let true_negatives = self.total + self.intersection - self.predicted - self.reference;
        Ok(true_negatives as f64 / negatives as f64)
    }
}

pub fn dice_coefficient(ds: &[bool], ms: &[bool]) -> Result<f64> {
    OverlapCounts::from_masks(ds, ms)?.dice()
}

pub fn sensitivity(ds: &[bool], ms: &[bool]) -> Result<f64> {
    OverlapCounts::from_masks(ds, ms)?.sensitivity()
}

/// Complements are taken within the mask length.
pub fn specificity(ds: &[bool], ms: &[bool]) -> Result<f64> {
    OverlapCounts::from_masks(ds, ms)?.specificity()
}

/// Scores of one class on one image; a metric is `None` where it is
/// undefined for that image (see the `OverlapCounts` methods).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassScores {
    pub class: TissueClass,
    pub counts: OverlapCounts,
    pub dice: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub image: String,
    pub classes: Vec<ClassScores>,
}

impl MetricsReport {
    pub fn class(&self, class: TissueClass) -> Option<&ClassScores> {
        self.classes.iter().find(|s| s.class == class)
    }

    /// Mean Dice over the scored classes that are defined on this image.
    pub fn mean_dice(&self) -> Option<f64> {
        mean(&self.classes.iter().filter_map(|s| s.dice).collect::<Vec<_>>())
    }
}

pub fn evaluate_image(id: &str, predicted: &LabelMap, reference: &LabelMap) -> Result<MetricsReport> {
    let classes = TissueClass::SCORED
        .iter()
        .map(|&class| {
            let counts = OverlapCounts::for_class(predicted, reference, class)?;
            Ok(ClassScores {
                class,
                counts,
                dice: counts.dice().ok(),
                sensitivity: counts.sensitivity().ok(),
                specificity: counts.specificity().ok(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        image: id.to_string(),
        classes,
    })
}

/// Mean and sample standard deviation (n−1) of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// `None` for an empty sample; the SD of a single value is 0.
pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    let m = mean(values)?;
    let n = values.len();
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(MeanSd { mean: m, sd, n })
}

/// One summary line: a class label (`"1"`–`"4"`) or `"all"` for the pool of
/// every scored class on every image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRow {
    pub class: String,
    pub dice: Option<MeanSd>,
    pub sensitivity: Option<MeanSd>,
    pub specificity: Option<MeanSd>,
}

pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let row = |label: String, scores: Vec<&ClassScores>| {
        let pick = |f: fn(&ClassScores) -> Option<f64>| {
            mean_sd(&scores.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
        };
        SummaryRow {
            class: label,
            dice: pick(|s| s.dice),
            sensitivity: pick(|s| s.sensitivity),
            specificity: pick(|s| s.specificity),
        }
    };
    let mut rows: Vec<SummaryRow> = TissueClass::SCORED
        .iter()
        .map(|&class| {
            let scores = reports.iter().filter_map(|r| r.class(class)).collect();
            row(class.label().to_string(), scores)
        })
        .collect();
    rows.push(row(
        "all".into(),
        reports.iter().flat_map(|r| &r.classes).collect(),
    ));
    rows
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `class,meanDice,sdDice,meanSn,sdSn,meanSp,sdSp`.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "meanDice", "sdDice", "meanSn", "sdSn", "meanSp", "sdSp"])?;
    for r in rows {
        let mut rec = vec![r.class.clone()];
        for m in [r.dice, r.sensitivity, r.specificity] {
            rec.push(field(m.map(|m| m.mean)));
            rec.push(field(m.map(|m| m.sd)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-image reports plus their summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationReport {
    pub images: Vec<MetricsReport>,
    pub summary: Vec<SummaryRow>,
}

impl EvaluationReport {
    pub fn from_reports(images: Vec<MetricsReport>) -> Self {
        let summary = summarize(&images);
        EvaluationReport { images, summary }
    }

    pub fn summary_for(&self, class: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.class == class)
    }
}

/// Stains raw images with the checkpoint (applying its compensation unless
/// `compensate` is false) and scores them against their labels.
pub fn evaluate_images(
    checkpoint: &Checkpoint,
    images: &[LabeledImage],
    stride: usize,
    compensate: bool,
) -> Result<EvaluationReport> {
    let reports = images
        .iter()
        .map(|img| {
            let stained = stain_bscan(checkpoint, &img.image, stride, compensate)?;
            evaluate_image(&img.id, &stained.class_map, &img.labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_reports(reports))
}

/// Evaluates the split's test images, loaded raw from the manifest.
pub fn evaluate_test_set(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    split: &DatasetSplit,
    stride: usize,
    compensate: bool,
) -> Result<EvaluationReport> {
    if split.test.is_empty() {
        return Err(Error::invalid("split has no test images"));
    }
    let images = manifest.load_images(&split.test, None)?;
    evaluate_images(checkpoint, &images, stride, compensate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    /// Template for every run; its seed is replaced per run.
    pub train: TrainConfig,
    pub stride: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sizes: vec![10, 20, 30, 40],
            repetitions: 5,
            train: TrainConfig::default(),
            stride: 1,
            seed: 42,
        }
    }
}

/// One line of the long-format results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub size: usize,
    pub rep: usize,
    pub class: u8,
    pub image: String,
    pub dice: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
}

/// Seed of the run for (`size`, `rep`); adding sizes or repetitions leaves
/// existing runs unchanged.
pub fn run_seed(master: u64, size: usize, rep: usize) -> u64 {
    derive_seed(master, &[size as u64, rep as u64])
}

/// Progress notifications from [`experiment_sweep`].
pub enum SweepEvent<'a> {
    RunStarted { size: usize, rep: usize, split: &'a DatasetSplit },
    Epoch { size: usize, rep: usize, record: &'a EpochRecord },
    RunFinished { size: usize, rep: usize, report: &'a EvaluationReport },
}

/// For each size × repetition: a fresh split, training from scratch and
/// evaluation on every image outside the sampled training set.
pub fn experiment_sweep(
    manifest: &Manifest,
    config: &ExperimentConfig,
    mut on_event: impl FnMut(SweepEvent<'_>),
) -> Result<Vec<ExperimentRow>> {
    if config.repetitions == 0 || config.sizes.is_empty() {
        return Err(Error::invalid("experiment needs at least one size and one repetition"));
    }
    for &size in &config.sizes {
        if size == 0 || size >= manifest.entries.len() {
            return Err(Error::invalid(format!(
                "training size {size} must leave at least one of {} images for testing",
                manifest.entries.len()
            )));
        }
    }
    config.train.validate()?;
    let mut rows = Vec::new();
    for &size in &config.sizes {
        for rep in 0..config.repetitions {
            let seed = run_seed(config.seed, size, rep);
            let split = split_dataset(&manifest.entries, size, seed)?;
            on_event(SweepEvent::RunStarted { size, rep, split: &split });
            let train = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let outcome = train_from_manifest(manifest, &split, &train, |record| {
                on_event(SweepEvent::Epoch { size, rep, record })
            })?;
            let report = evaluate_test_set(&outcome.checkpoint, manifest, &split, config.stride, true)?;
            for image in &report.images {
                for s in &image.classes {
                    rows.push(ExperimentRow {
                        size,
                        rep,
                        class: s.class.label(),
                        image: image.image.clone(),
                        dice: s.dice,
                        sn: s.sensitivity,
                        sp: s.specificity,
                    });
                }
            }
            on_event(SweepEvent::RunFinished { size, rep, report: &report });
        }
    }
    Ok(rows)
}

/// `size,rep,class,image,dice,sn,sp`; undefined metrics are left empty.
pub fn write_experiment_csv<W: Write>(out: W, rows: &[ExperimentRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["size", "rep", "class", "image", "dice", "sn", "sp"])?;
    for r in rows {
        w.write_record([
            r.size.to_string(),
            r.rep.to_string(),
            r.class.to_string(),
            r.image.clone(),
            field(r.dice),
            field(r.sn),
            field(r.sp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores several predictions in parallel, keeping input order.
pub fn evaluate_many(pairs: &[(String, LabelMap, LabelMap)]) -> Result<Vec<MetricsReport>> {
    pairs
        .par_iter()
        .map(|(id, predicted, reference)| evaluate_image(id, predicted, reference))
        .collect()
}
