//! Per-pixel classification of a whole B-scan and its color rendering.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::compensation::compensate_bscan;
use crate::dataset::io::{encode_gray16, write_bytes};
use crate::dataset::{extract_patch, RgbImage, CLASS_PALETTE, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::network::{argmax, predict, Checkpoint, NetworkParams};
use crate::raster::{BScan, LabelMap, Raster, TissueClass, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq)]
pub struct StainedImage {
    /// Predicted class per pixel: the argmax of `probabilities`, ties to the
    /// lowest class.
    pub class_map: LabelMap,
    /// Softmax output per class, indexed by zero-based class.
    pub probabilities: Vec<Raster<f32>>,
}

impl StainedImage {
    pub fn height(&self) -> usize {
        self.class_map.height()
    }

    pub fn width(&self) -> usize {
        self.class_map.width()
    }

    pub fn probability(&self, class: TissueClass) -> &Raster<f32> {
        &self.probabilities[class.index()]
    }
}

/// Index of the grid line nearest to `i` among `0, s, 2s, … ≤ n−1`; halfway
/// points round up.
fn nearest_grid(i: usize, stride: usize, n: usize) -> usize {
    let k = (2 * i + stride) / (2 * stride);
    k.min((n - 1) / stride)
}

/// Classifies the mirror-padded patch centered on every pixel. With
/// `stride > 1` only centers on a `stride`-spaced grid are classified and
/// every pixel takes the result of its nearest grid center.
///
/// `image` must already be preprocessed the way the network was trained.
pub fn stain_image(params: &NetworkParams<f32>, image: &BScan, stride: usize) -> Result<StainedImage> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let (h, w) = (image.height(), image.width());
    if h < PATCH_SIZE || w < PATCH_SIZE {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {PATCH_SIZE}x{PATCH_SIZE} patch"
        )));
    }
    if params.architecture().input_size != PATCH_SIZE {
        return Err(Error::invalid(format!(
            "network expects {0}x{0} patches",
            params.architecture().input_size
        )));
    }
    let grid_rows: Vec<usize> = (0..h).step_by(stride).collect();
    let grid_cols: Vec<usize> = (0..w).step_by(stride).collect();
    let centers: Vec<(usize, usize)> = grid_rows
        .iter()
        .flat_map(|&r| grid_cols.iter().map(move |&c| (r, c)))
        .collect();
    let grid: Vec<[f32; NUM_CLASSES]> = centers
        .par_iter()
        .map(|&(r, c)| {
            let patch = extract_patch(image, None, r, c)?;
            let probs = predict(params, &patch.to_tensor())?;
            Ok(probs.data().try_into().expect("one probability per class"))
        })
        .collect::<Result<_>>()?;

    let gw = grid_cols.len();
    let at = |r: usize, c: usize| &grid[nearest_grid(r, stride, h) * gw + nearest_grid(c, stride, w)];
    let probabilities = (0..NUM_CLASSES)
        .map(|k| Raster::from_fn(h, w, |r, c| at(r, c)[k]))
        .collect();
    let class_map = LabelMap::new(Raster::from_fn(h, w, |r, c| {
        TissueClass::from_index(argmax(at(r, c)))
    }));
    Ok(StainedImage {
        class_map,
        probabilities,
    })
}

/// Applies the checkpoint's preprocessing (compensation, unless disabled)
/// to a raw B-scan.
pub fn prepare_input(checkpoint: &Checkpoint, raw: &BScan, compensate: bool) -> Result<BScan> {
    match (&checkpoint.config.compensation, compensate) {
        (Some(params), true) => compensate_bscan(raw, params),
        _ => Ok(raw.clone()),
    }
}

/// Preprocesses a raw B-scan as at training time and stains it.
pub fn stain_bscan(checkpoint: &Checkpoint, raw: &BScan, stride: usize, compensate: bool) -> Result<StainedImage> {
    stain_image(&checkpoint.params, &prepare_input(checkpoint, raw, compensate)?, stride)
}

/// Blends the class palette over the grayscale base:
/// `out = α·color + (1−α)·gray`, rounded per channel.
pub fn render_stain(class_map: &LabelMap, base: &BScan, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if !base.same_shape(class_map.raster()) {
        return Err(Error::invalid("class map and base image differ in shape"));
    }
    let pixels = class_map
        .classes()
        .iter()
        .zip(base.data())
        .map(|(class, &v)| {
            let gray = v.clamp(0.0, 1.0) * 255.0;
            CLASS_PALETTE[class.index()].map(|c| (alpha * c as f64 + (1.0 - alpha) * gray).round() as u8)
        })
        .collect();
    Ok(RgbImage {
        width: base.width(),
        height: base.height(),
        pixels,
    })
}

/// Writes one 16-bit grayscale PNG per class, `class<k>.png` for `k` in
/// 1..=6, and returns the paths.
pub fn write_probability_maps(dir: &Path, stained: &StainedImage) -> Result<Vec<PathBuf>> {
    TissueClass::ALL
        .iter()
        .map(|&class| {
            let path = dir.join(format!("class{}.png", class.label()));
            let map = stained.probability(class).map(|p| p as f64);
            write_bytes(&path, &encode_gray16(&map)?)?;
            Ok(path)
        })
        .collect()
}
