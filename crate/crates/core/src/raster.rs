use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 6;

/// Tissue class label, 1 through 6.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TissueClass(u8);

impl TissueClass {
    /// Retinal nerve fiber layer and prelamina.
    pub const RNFL_PRELAMINA: Self = TissueClass(1);
    /// Retinal pigment epithelium.
    pub const RPE: Self = TissueClass(2);
    pub const OTHER_RETINA: Self = TissueClass(3);
    pub const CHOROID: Self = TissueClass(4);
    /// Peripapillary sclera and lamina cribrosa.
    pub const SCLERA_LC: Self = TissueClass(5);
    pub const NOISE: Self = TissueClass(6);

    pub const ALL: [TissueClass; NUM_CLASSES] = [
        Self::RNFL_PRELAMINA,
        Self::RPE,
        Self::OTHER_RETINA,
        Self::CHOROID,
        Self::SCLERA_LC,
        Self::NOISE,
    ];

    /// Classes with quantitative agreement metrics.
    pub const SCORED: [TissueClass; 4] = [
        Self::RNFL_PRELAMINA,
        Self::RPE,
        Self::OTHER_RETINA,
        Self::CHOROID,
    ];

    pub fn new(label: u8) -> Result<Self> {
        if (1..=NUM_CLASSES as u8).contains(&label) {
            Ok(TissueClass(label))
        } else {
            Err(Error::invalid(format!("tissue class {label} outside 1..=6")))
        }
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_CLASSES, "class index {index} out of range");
        TissueClass(index as u8 + 1)
    }

    pub fn label(self) -> u8 {
        self.0
    }

    /// Zero-based position, as used by the network output.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "RNFL+prelamina",
            2 => "RPE",
            3 => "other retinal layers",
            4 => "choroid",
            5 => "sclera+LC",
            _ => "noise",
        }
    }
}

impl TryFrom<u8> for TissueClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        TissueClass::new(v)
    }
}

impl From<TissueClass> for u8 {
    fn from(c: TissueClass) -> u8 {
        c.0
    }
}

impl fmt::Display for TissueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Row-major 2-D grid. Rows run down the image (depth), columns across it.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// One OCT cross-section with intensities in `[0, 1]`.
pub type BScan = Raster<f64>;

impl<T: Copy> Raster<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "raster {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Raster {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Raster {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn column(&self, col: usize) -> Vec<T> {
        (0..self.height).map(|r| self.get(r, col)).collect()
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Checks that every intensity is finite and within `[0, 1]`.
pub fn validate_bscan(image: &BScan) -> Result<()> {
    if image.is_empty() {
        return Err(Error::invalid("empty B-scan"));
    }
    if let Some((i, v)) = image
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
    {
        return Err(Error::invalid(format!(
            "intensity {v} at pixel ({}, {}) outside [0, 1]",
            i / image.width(),
            i % image.width()
        )));
    }
    Ok(())
}

/// Per-pixel tissue classes aligned with a B-scan.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap(Raster<TissueClass>);

impl LabelMap {
    pub fn new(raster: Raster<TissueClass>) -> Self {
        LabelMap(raster)
    }

    /// Builds a label map from raw labels, rejecting anything outside 1–6.
    pub fn from_labels(height: usize, width: usize, labels: &[u8]) -> Result<Self> {
        let classes = labels
            .iter()
            .map(|&l| TissueClass::new(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelMap(Raster::new(height, width, classes)?))
    }

    pub fn filled(height: usize, width: usize, class: TissueClass) -> Self {
        LabelMap(Raster::filled(height, width, class))
    }

    pub fn raster(&self) -> &Raster<TissueClass> {
        &self.0
    }

    pub fn raster_mut(&mut self) -> &mut Raster<TissueClass> {
        &mut self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn get(&self, row: usize, col: usize) -> TissueClass {
        self.0.get(row, col)
    }

    pub fn set(&mut self, row: usize, col: usize, class: TissueClass) {
        self.0.set(row, col, class)
    }

    pub fn classes(&self) -> &[TissueClass] {
        self.0.data()
    }

    /// Pixel count per class, indexed by `TissueClass::index`.
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0u64; NUM_CLASSES];
        for c in self.0.data() {
            counts[c.index()] += 1;
        }
        counts
    }
}
