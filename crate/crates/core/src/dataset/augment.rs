//! Online patch augmentation: small rotations, horizontal flips and
//! translations, all with mirror fill at the patch border.

use rand::Rng;

use super::patches::{reflect, Patch, PATCH_CENTER, PATCH_SIZE};

pub const ROTATION_DEGREES: f64 = 10.0;
pub const TRANSLATION_PIXELS: isize = 5;
/// Probability with which each transform is drawn.
pub const TRANSFORM_PROBABILITY: f64 = 0.5;

/// One concrete draw of the augmentation transforms, applied in the order
/// rotate, flip, translate.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Augmentation {
    /// Counter-clockwise rotation in degrees about the patch center.
    pub rotation: f64,
    pub flip_horizontal: bool,
    /// Downward shift in pixels.
    pub shift_rows: isize,
    /// Rightward shift in pixels.
    pub shift_cols: isize,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation::default()
    }

    pub fn is_identity(&self) -> bool {
        *self == Augmentation::default()
    }

    /// Draws each transform independently with probability 0.5.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let signed = |magnitude: f64, rng: &mut R| {
            if rng.random_bool(TRANSFORM_PROBABILITY) {
                if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            } else {
                0.0
            }
        };
        let rotation = signed(ROTATION_DEGREES, rng);
        let flip_horizontal = rng.random_bool(TRANSFORM_PROBABILITY);
        let shift_rows = signed(TRANSLATION_PIXELS as f64, rng) as isize;
        let shift_cols = signed(TRANSLATION_PIXELS as f64, rng) as isize;
        Augmentation {
            rotation,
            flip_horizontal,
            shift_rows,
            shift_cols,
        }
    }

    /// Transforms the pixels; center coordinates and class are kept.
    pub fn apply(&self, patch: &Patch) -> Patch {
        let mut pixels = patch.pixels.clone();
        if self.rotation != 0.0 {
            pixels = rotate(&pixels, self.rotation);
        }
        if self.flip_horizontal {
            pixels = flip_horizontal(&pixels);
        }
        if self.shift_rows != 0 || self.shift_cols != 0 {
            pixels = translate(&pixels, self.shift_rows, self.shift_cols);
        }
        Patch {
            pixels,
            ..patch.clone()
        }
    }
}

pub fn augment_patch<R: Rng + ?Sized>(patch: &Patch, rng: &mut R) -> Patch {
    Augmentation::sample(rng).apply(patch)
}

fn at(pixels: &[f32], row: isize, col: isize) -> f32 {
    pixels[reflect(row, PATCH_SIZE) * PATCH_SIZE + reflect(col, PATCH_SIZE)]
}

/// Bilinear rotation about the center pixel, counter-clockwise for positive
/// angles.
pub fn rotate(pixels: &[f32], degrees: f64) -> Vec<f32> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let c = PATCH_CENTER as f64;
    let mut out = vec![0.0; PATCH_SIZE * PATCH_SIZE];
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            // inverse map: rotate the output coordinate back by −θ
            let sx = c + cos * dx - sin * dy;
            let sy = c + sin * dx + cos * dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(pixels, y0, x0) as f64 + fx * at(pixels, y0, x0 + 1) as f64)
                + fy * ((1.0 - fx) * at(pixels, y0 + 1, x0) as f64 + fx * at(pixels, y0 + 1, x0 + 1) as f64);
            out[y * PATCH_SIZE + x] = v as f32;
        }
    }
    out
}

pub fn flip_horizontal(pixels: &[f32]) -> Vec<f32> {
    let mut out = pixels.to_vec();
    for row in out.chunks_exact_mut(PATCH_SIZE) {
        row.reverse();
    }
    out
}

pub fn translate(pixels: &[f32], shift_rows: isize, shift_cols: isize) -> Vec<f32> {
    let mut out = vec![0.0; PATCH_SIZE * PATCH_SIZE];
    for y in 0..PATCH_SIZE {
        for x in 0..PATCH_SIZE {
            out[y * PATCH_SIZE + x] = at(pixels, y as isize - shift_rows, x as isize - shift_cols);
        }
    }
    out
}
