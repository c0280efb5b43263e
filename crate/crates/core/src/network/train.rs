//! Mini-batch training with online augmentation, dropout and ADAM.
//!
//! Every stochastic choice is drawn from seeded ChaCha streams: one for the
//! weight initialization, one for the fixed validation patches, and one that
//! drives sampling, shuffling and the per-patch seeds. Each patch of a batch
//! gets its own generator (augmentation and dropout), so per-patch work can
//! run on any thread; gradients are then summed in batch order. Results are
//! therefore identical for any thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::arch::Architecture;
use super::checkpoint::Checkpoint;
use super::model::{loss_and_gradients, predict};
use super::params::{Gradients, NetworkParams};
use crate::compensation::CompensationParams;
use crate::dataset::{
    augment_patch, compute_class_weights, extract_patch, ClassWeights, DatasetSplit,
    LabeledImage, Manifest, Patch, PATCH_SIZE,
};
use crate::error::{Error, Result};
use crate::raster::{TissueClass, NUM_CLASSES};
use crate::tensor::weighted_cross_entropy;

const STREAM_INIT: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Training patches drawn from each training image per epoch.
    pub patches_per_image: usize,
    /// Fixed validation patches drawn once from each validation image.
    pub validation_patches_per_image: usize,
    pub augment: bool,
    /// Applied to every image before patch extraction, at training and at
    /// staining time. `None` trains on raw intensities.
    pub compensation: Option<CompensationParams>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::STANDARD,
            learning_rate: 0.001,
            batch_size: 50,
            epochs: 100,
            dropout: 0.35,
            patches_per_image: 2000,
            validation_patches_per_image: 500,
            augment: true,
            compensation: Some(CompensationParams::default()),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.architecture.input_size != PATCH_SIZE {
            return Err(Error::invalid(format!(
                "network input {} must equal the patch size {PATCH_SIZE}",
                self.architecture.input_size
            )));
        }
        if self.architecture.classes != NUM_CLASSES {
            return Err(Error::invalid(format!("network must have {NUM_CLASSES} outputs")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patches_per_image == 0 {
            return Err(Error::invalid("batch size, epochs and patches per image must be positive"));
        }
        if let Some(c) = &self.compensation {
            c.validate()?;
        }
        Ok(())
    }
}

/// Metrics logged after each epoch. Validation fields are `None` when no
/// validation images were given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Per-class validation accuracy, `None` for classes absent from the
    /// validation patches.
    pub val_class_accuracy: [Option<f64>; NUM_CLASSES],
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot at the epoch with the lowest validation loss (training loss
    /// when there is no validation set).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// One optimizer update on a batch of labeled patches. Returns the mean
/// weighted loss; the gradient is the batch mean.
pub fn train_step<R: Rng + ?Sized>(
    params: &mut NetworkParams<f32>,
    adam: &mut AdamState<f32>,
    batch: &[Patch],
    class_weights: &ClassWeights,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let weights = class_weights.0.map(|w| w as f32);
    let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
    let shared: &NetworkParams<f32> = params;
    let results: Vec<Result<(f32, Gradients<f32>)>> = batch
        .par_iter()
        .zip(&seeds)
        .map(|(patch, &seed)| {
            let class = patch
                .center_class
                .ok_or_else(|| Error::invalid("training patch has no label"))?;
            let mut patch_rng = ChaCha8Rng::seed_from_u64(seed);
            let input = if config.augment {
                augment_patch(patch, &mut patch_rng).to_tensor()
            } else {
                patch.to_tensor()
            };
            loss_and_gradients(shared, &input, class.index(), &weights, config.dropout, &mut patch_rng)
        })
        .collect();

    let mut total_loss = 0.0f64;
    let mut sum: Option<Gradients<f32>> = None;
    for (index, result) in results.into_iter().enumerate() {
        let (loss, grads) = result?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                index,
                loss: loss as f64,
            });
        }
        total_loss += loss as f64;
        match &mut sum {
            Some(s) => s.add_assign(&grads),
            None => sum = Some(grads),
        }
    }
    let mut grads = sum.expect("non-empty batch");
    grads.scale(1.0 / batch.len() as f32);
    adam.update(params, &grads, config.learning_rate);
    Ok(total_loss / batch.len() as f64)
}

/// Uniformly random centers over every pixel of every image.
fn sample_centers(images: &[LabeledImage], per_image: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut centers = Vec::with_capacity(images.len() * per_image);
    for (i, img) in images.iter().enumerate() {
        for _ in 0..per_image {
            let r = rng.random_range(0..img.image.height());
            let c = rng.random_range(0..img.image.width());
            centers.push((i, r, c));
        }
    }
    centers
}

fn patches_at(images: &[LabeledImage], centers: &[(usize, usize, usize)]) -> Result<Vec<Patch>> {
    centers
        .iter()
        .map(|&(i, r, c)| extract_patch(&images[i].image, Some(&images[i].labels), r, c))
        .collect()
}

struct Validation {
    loss: f64,
    accuracy: f64,
    class_accuracy: [Option<f64>; NUM_CLASSES],
}

fn validate(params: &NetworkParams<f32>, patches: &[Patch], class_weights: &ClassWeights) -> Result<Validation> {
    let weights = class_weights.0.map(|w| w as f32);
    let outcomes: Vec<Result<(f64, usize, bool)>> = patches
        .par_iter()
        .map(|p| {
            let class = p.center_class.expect("validation patches are labeled").index();
            let probs = predict(params, &p.to_tensor())?;
            let loss = weighted_cross_entropy(&probs, class, &weights)? as f64;
            Ok((loss, class, argmax(probs.data()) == class))
        })
        .collect();
    let mut loss = 0.0;
    let mut hits = [0usize; NUM_CLASSES];
    let mut totals = [0usize; NUM_CLASSES];
    for o in outcomes {
        let (l, class, hit) = o?;
        loss += l;
        totals[class] += 1;
        hits[class] += hit as usize;
    }
    let n = patches.len() as f64;
    let mut class_accuracy = [None; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        if totals[k] > 0 {
            class_accuracy[k] = Some(hits[k] as f64 / totals[k] as f64);
        }
    }
    Ok(Validation {
        loss: loss / n,
        accuracy: hits.iter().sum::<usize>() as f64 / n,
        class_accuracy,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class weights from the label pixel counts of the training images. With
/// mirror padding every pixel is a patch center, so these equal the patch
/// counts at stride 1.
pub fn training_class_weights(images: &[LabeledImage]) -> Result<ClassWeights> {
    let mut counts = [0u64; NUM_CLASSES];
    for img in images {
        for (c, n) in counts.iter_mut().zip(img.labels.class_counts()) {
            *c += n;
        }
    }
    compute_class_weights(&counts)
}

/// Trains from scratch on already loaded (and, if configured, compensated)
/// images. `on_epoch` observes each epoch record as it is produced.
pub fn train_model(
    train: &[LabeledImage],
    validation: &[LabeledImage],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    let class_weights = training_class_weights(train)?;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s);
        rng
    };
    let mut params = NetworkParams::<f32>::he_init(config.architecture, &mut stream(STREAM_INIT))?;
    let mut adam = AdamState::new(config.architecture)?;

    let val_centers = sample_centers(
        validation,
        config.validation_patches_per_image,
        &mut stream(STREAM_VALIDATION),
    );
    let val_patches = patches_at(validation, &val_centers)?;

    let mut rng = stream(STREAM_SAMPLING);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, NetworkParams<f32>, AdamState<f32>)> = None;
    for epoch in 1..=config.epochs {
        let mut centers = sample_centers(train, config.patches_per_image, &mut rng);
        centers.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in centers.chunks(config.batch_size) {
            let batch = patches_at(train, chunk)?;
            let loss = train_step(&mut params, &mut adam, &batch, &class_weights, config, &mut rng)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / centers.len() as f64;
        let val = if val_patches.is_empty() {
            None
        } else {
            Some(validate(&params, &val_patches, &class_weights)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.as_ref().map(|v| v.loss),
            val_accuracy: val.as_ref().map(|v| v.accuracy),
            val_class_accuracy: val.as_ref().map_or([None; NUM_CLASSES], |v| v.class_accuracy),
        };
        on_epoch(&record);
        let score = record.val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, ..)| score < *b) {
            best = Some((score, epoch, params.clone(), adam.clone()));
        }
        history.push(record);
    }
    let (_, best_epoch, params, adam) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            adam,
            config: config.clone(),
            class_weights,
            split: None,
            best_epoch,
        },
        history,
    })
}

/// Loads the split's images from the manifest (compensating them when
/// configured) and trains. The split is stored in the checkpoint.
pub fn train_from_manifest(
    manifest: &Manifest,
    split: &DatasetSplit,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let comp = config.compensation.as_ref();
    let train = manifest.load_images(&split.train, comp)?;
    let validation = manifest.load_images(&split.validation, comp)?;
    let mut outcome = train_model(&train, &validation, config, on_epoch)?;
    outcome.checkpoint.split = Some(split.clone());
    Ok(outcome)
}

/// Writes `epoch,trainLoss,valLoss,valAccuracy`; missing validation values
/// are left empty.
pub fn write_training_log<W: std::io::Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "trainLoss", "valLoss", "valAccuracy"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            opt(r.val_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable class accuracy summary for one epoch.
pub fn describe_class_accuracy(record: &EpochRecord) -> String {
    TissueClass::ALL
        .iter()
        .zip(record.val_class_accuracy)
        .filter_map(|(c, a)| a.map(|a| format!("{}={a:.3}", c.label())))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_phantom, PhantomSpec};

    fn phantoms(n: u64) -> Vec<LabeledImage> {
        (0..n)
            .map(|seed| {
                let p = generate_phantom(&PhantomSpec {
                    width: 64,
                    height: 64,
                    seed,
                    shadows: false,
                    attenuation: false,
                })
                .unwrap();
                LabeledImage {
                    id: format!("p{seed}"),
                    cohort: None,
                    image: p.image,
                    labels: p.labels,
                }
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            architecture: Architecture {
                channels: 4,
                hidden: 16,
                ..Architecture::STANDARD
            },
            epochs: 2,
            patches_per_image: 60,
            validation_patches_per_image: 40,
            batch_size: 20,
            compensation: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible() {
        let imgs = phantoms(3);
        let a = train_model(&imgs[..2], &imgs[2..], &small_config(), |_| {}).unwrap();
        let b = train_model(&imgs[..2], &imgs[2..], &small_config(), |_| {}).unwrap();
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
        let mut other = small_config();
        other.seed = 7;
        let c = train_model(&imgs[..2], &imgs[2..], &other, |_| {}).unwrap();
        assert_ne!(a.checkpoint.params, c.checkpoint.params);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let imgs = phantoms(2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train_model(&imgs[..1], &imgs[1..], &small_config(), |_| {}).unwrap())
        };
        assert_eq!(run(1).checkpoint.params, run(3).checkpoint.params);
    }

    #[test]
    fn repeated_steps_fit_one_batch() {
        let imgs = phantoms(1);
        let mut config = small_config();
        config.augment = false;
        config.dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::he_init(config.architecture, &mut rng).unwrap();
        let mut adam = AdamState::new(config.architecture).unwrap();
        let centers = sample_centers(&imgs, 20, &mut rng);
        let batch = patches_at(&imgs, &centers).unwrap();
        let w = ClassWeights::uniform();
        let first = train_step(&mut params, &mut adam, &batch, &w, &config, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = train_step(&mut params, &mut adam, &batch, &w, &config, &mut rng).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn unlabeled_patch_is_rejected() {
        let imgs = phantoms(1);
        let config = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::he_init(config.architecture, &mut rng).unwrap();
        let mut adam = AdamState::new(config.architecture).unwrap();
        let mut patch = extract_patch(&imgs[0].image, None, 30, 30).unwrap();
        patch.center_class = None;
        let w = ClassWeights::uniform();
        assert!(train_step(&mut params, &mut adam, &[patch], &w, &config, &mut rng).is_err());
        assert!(train_step(&mut params, &mut adam, &[], &w, &config, &mut rng).is_err());
    }

    #[test]
    fn non_finite_loss_reports_patch() {
        let imgs = phantoms(1);
        let config = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::he_init(config.architecture, &mut rng).unwrap();
        params.tensors_mut()[11].data_mut()[0] = f32::NAN;
        let mut adam = AdamState::new(config.architecture).unwrap();
        let centers = sample_centers(&imgs, 3, &mut rng);
        let batch = patches_at(&imgs, &centers).unwrap();
        let err = train_step(&mut params, &mut adam, &batch, &ClassWeights::uniform(), &config, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { index: 0, .. }), "{err}");
    }

    #[test]
    fn log_has_fixed_header() {
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 1.5,
            val_loss: None,
            val_accuracy: None,
            val_class_accuracy: [None; NUM_CLASSES],
        };
        let mut out = Vec::new();
        write_training_log(&mut out, &[rec]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,trainLoss,valLoss,valAccuracy\n1,1.5,,\n");
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
