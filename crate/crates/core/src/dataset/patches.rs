use crate::error::{Error, Result};
use crate::raster::{BScan, LabelMap, TissueClass};
use crate::tensor::Tensor;

/// Patch side length in pixels.
pub const PATCH_SIZE: usize = 50;
/// Offset of the patch's center pixel from its top-left corner, on both axes.
/// A patch centered at `(r, c)` covers rows `r−25..=r+24` and columns
/// `c−25..=c+24`.
pub const PATCH_CENTER: usize = 25;

/// How patch centers near the image border are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Padding {
    /// Every pixel is a center; out-of-image samples are mirrored back in.
    Mirror,
    /// Only centers whose patch lies entirely inside the image.
    InteriorOnly,
}

/// Square single-channel window around a center pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Row-major `PATCH_SIZE × PATCH_SIZE` intensities in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub center_row: usize,
    pub center_col: usize,
    pub center_class: Option<TissueClass>,
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * PATCH_SIZE + col]
    }

    /// `1×50×50` network input.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[1, PATCH_SIZE, PATCH_SIZE], self.pixels.clone())
            .expect("patch pixel count")
    }
}

/// Reflects an index into `0..n` without repeating the edge sample
/// (`−1 → 1`, `n → n−2`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn check_size(image: &BScan) -> Result<()> {
    if image.height() < PATCH_SIZE || image.width() < PATCH_SIZE {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {PATCH_SIZE}x{PATCH_SIZE} patch",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Fills `out` with the mirror-padded patch centered at `(row, col)`.
pub fn fill_patch(image: &BScan, row: usize, col: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), PATCH_SIZE * PATCH_SIZE);
    let (h, w) = (image.height(), image.width());
    let mut cols = [0usize; PATCH_SIZE];
    for (j, c) in cols.iter_mut().enumerate() {
        *c = reflect(col as isize + j as isize - PATCH_CENTER as isize, w);
    }
    let data = image.data();
    let c0 = col as isize - PATCH_CENTER as isize;
    let interior_cols = c0 >= 0 && c0 as usize + PATCH_SIZE <= w;
    for i in 0..PATCH_SIZE {
        let r = reflect(row as isize + i as isize - PATCH_CENTER as isize, h);
        let src = &data[r * w..(r + 1) * w];
        let dst = &mut out[i * PATCH_SIZE..(i + 1) * PATCH_SIZE];
        if interior_cols {
            let c0 = c0 as usize;
            for (d, &s) in dst.iter_mut().zip(&src[c0..c0 + PATCH_SIZE]) {
                *d = s as f32;
            }
        } else {
            for (d, &c) in dst.iter_mut().zip(&cols) {
                *d = src[c] as f32;
            }
        }
    }
}

/// Patch centered at `(row, col)` with mirror padding.
pub fn extract_patch(
    image: &BScan,
    labels: Option<&LabelMap>,
    row: usize,
    col: usize,
) -> Result<Patch> {
    check_size(image)?;
    if row >= image.height() || col >= image.width() {
        return Err(Error::invalid(format!("patch center ({row}, {col}) outside image")));
    }
    let mut pixels = vec![0.0; PATCH_SIZE * PATCH_SIZE];
    fill_patch(image, row, col, &mut pixels);
    Ok(Patch {
        pixels,
        center_row: row,
        center_col: col,
        center_class: labels.map(|l| l.get(row, col)),
    })
}

/// Patch centers visited in row-major order for the given stride and
/// border handling.
pub fn patch_centers(
    height: usize,
    width: usize,
    stride: usize,
    padding: Padding,
) -> impl Iterator<Item = (usize, usize)> {
    let (rows, cols) = match padding {
        Padding::Mirror => (0..height, 0..width),
        Padding::InteriorOnly => (
            PATCH_CENTER..(height + PATCH_CENTER + 1).saturating_sub(PATCH_SIZE),
            PATCH_CENTER..(width + PATCH_CENTER + 1).saturating_sub(PATCH_SIZE),
        ),
    };
    rows.step_by(stride.max(1))
        .flat_map(move |r| cols.clone().step_by(stride.max(1)).map(move |c| (r, c)))
}

/// Lazily extracts patches on a regular grid of centers.
pub fn extract_patches<'a>(
    image: &'a BScan,
    labels: Option<&'a LabelMap>,
    stride: usize,
    padding: Padding,
) -> Result<impl Iterator<Item = Patch> + 'a> {
    check_size(image)?;
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if let Some(l) = labels {
        if !image.same_shape(l.raster()) {
            return Err(Error::invalid("label map shape differs from image"));
        }
    }
    Ok(
        patch_centers(image.height(), image.width(), stride, padding).map(move |(r, c)| {
            let mut pixels = vec![0.0; PATCH_SIZE * PATCH_SIZE];
            fill_patch(image, r, c, &mut pixels);
            Patch {
                pixels,
                center_row: r,
                center_col: c,
                center_class: labels.map(|l| l.get(r, c)),
            }
        }),
    )
}
