//! PNG rasters and the dataset manifest.
//!
//! B-scans are read from 8- or 16-bit grayscale PNGs and written as 16-bit
//! grayscale. Label maps are 8-bit indexed PNGs whose palette index is the
//! class label minus one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compensation::{compensate_bscan, CompensationParams};
use crate::error::{Error, Result};
use crate::raster::{validate_bscan, BScan, LabelMap, Raster};

/// Label-map palette, one RGB entry per class 1–6: red, pink, cyan, green,
/// yellow, blue.
pub const CLASS_PALETTE: [[u8; 3]; 6] = [
    [255, 0, 0],
    [255, 105, 180],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [0, 0, 255],
];

fn decode(bytes: &[u8], transformations: png::Transformations) -> Result<(png::OutputInfo, Vec<u8>, Option<Vec<u8>>)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info()?;
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::invalid("png too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf, palette))
}

/// Decodes a grayscale PNG into intensities in `[0, 1]`.
pub fn decode_bscan(bytes: &[u8]) -> Result<BScan> {
    let (info, buf, _) = decode(bytes, png::Transformations::EXPAND)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::invalid(format!(
                "B-scan must be grayscale, got {other:?}"
            )))
        }
    };
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf
            .chunks_exact(channels)
            .map(|px| px[0] as f64 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf
            .chunks_exact(2 * channels)
            .map(|px| u16::from_be_bytes([px[0], px[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(Error::invalid(format!("unsupported bit depth {other:?}"))),
    };
    Raster::new(h, w, data)
}

pub fn read_bscan(path: &Path) -> Result<BScan> {
    decode_bscan(&std::fs::read(path)?)
}

fn encode<W: Write>(
    out: W,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let mut encoder = png::Encoder::new(out, width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    if let Some(p) = palette {
        encoder.set_palette(p);
    }
    let mut writer = encoder.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// Encodes values in `[0, 1]` as a 16-bit grayscale PNG.
pub fn encode_gray16(image: &BScan) -> Result<Vec<u8>> {
    validate_bscan(image)?;
    let data: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|&v| ((v * 65535.0).round() as u16).to_be_bytes())
        .collect();
    let mut bytes = Vec::new();
    encode(
        &mut bytes,
        image.width(),
        image.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &data,
    )?;
    Ok(bytes)
}

pub fn write_bscan(path: &Path, image: &BScan) -> Result<()> {
    write_bytes(path, &encode_gray16(image)?)
}

pub fn encode_label_map(labels: &LabelMap) -> Result<Vec<u8>> {
    let data: Vec<u8> = labels.classes().iter().map(|c| c.index() as u8).collect();
    let mut bytes = Vec::new();
    encode(
        &mut bytes,
        labels.width(),
        labels.height(),
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(CLASS_PALETTE.concat()),
        &data,
    )?;
    Ok(bytes)
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    write_bytes(path, &encode_label_map(labels)?)
}

/// Decodes a label map from an indexed PNG (index = class − 1) or from an
/// 8-bit grayscale PNG holding the class labels 1–6 directly.
pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap> {
    let (info, buf, _) = decode(bytes, png::Transformations::IDENTITY)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::invalid(format!(
            "label map must be 8-bit, got {:?}",
            info.bit_depth
        )));
    }
    let labels: Vec<u8> = match info.color_type {
        png::ColorType::Indexed => buf.iter().map(|&i| i.saturating_add(1)).collect(),
        png::ColorType::Grayscale => buf,
        other => {
            return Err(Error::invalid(format!(
                "label map must be indexed or grayscale, got {other:?}"
            )))
        }
    };
    LabelMap::from_labels(h, w, &labels)
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    decode_label_map(&std::fs::read(path)?)
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }
}

pub fn encode_rgb(image: &RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    encode(
        &mut bytes,
        image.width,
        image.height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        None,
        &image.pixels.concat(),
    )?;
    Ok(bytes)
}

pub fn write_rgb(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_rgb(image)?)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    Glaucoma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<Cohort>,
}

/// Dataset listing. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

/// A B-scan with its reference labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub cohort: Option<Cohort>,
    pub image: BScan,
    pub labels: LabelMap,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let entries: Vec<ManifestEntry> = serde_json::from_reader(reader)?;
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(Manifest {
            entries,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.entries)?;
        json.push(b'\n');
        write_bytes(path, &json)
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown image id {id:?}")))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Loads the listed images, compensating them when `compensation` is set.
    pub fn load_images(
        &self,
        ids: &[String],
        compensation: Option<&CompensationParams>,
    ) -> Result<Vec<LabeledImage>> {
        ids.iter()
            .map(|id| {
                let entry = self.entry(id)?;
                let mut image = read_bscan(&self.resolve(&entry.image_path))?;
                let labels = read_label_map(&self.resolve(&entry.label_path))?;
                if !image.same_shape(labels.raster()) {
                    return Err(Error::invalid(format!(
                        "image {id}: label map {}x{} does not match B-scan {}x{}",
                        labels.height(),
                        labels.width(),
                        image.height(),
                        image.width()
                    )));
                }
                if let Some(params) = compensation {
                    image = compensate_bscan(&image, params)?;
                }
                Ok(LabeledImage {
                    id: id.clone(),
                    cohort: entry.cohort,
                    image,
                    labels,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::TissueClass;

    #[test]
    fn gray16_round_trip() {
        let image = BScan::from_fn(7, 9, |r, c| ((r * 9 + c) as f64 / 62.0).min(1.0));
        let back = decode_bscan(&encode_gray16(&image).unwrap()).unwrap();
        assert_eq!(back.height(), 7);
        assert_eq!(back.width(), 9);
        for (a, b) in image.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn reads_eight_bit_gray() {
        let mut bytes = Vec::new();
        encode(&mut bytes, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, None, &[0, 255])
            .unwrap();
        assert_eq!(decode_bscan(&bytes).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn label_map_is_indexed_with_fixed_palette() {
        let labels = LabelMap::from_labels(2, 3, &[1, 2, 3, 4, 5, 6]).unwrap();
        let bytes = encode_label_map(&labels).unwrap();
        let (info, buf, palette) = decode(&bytes, png::Transformations::IDENTITY).unwrap();
        assert_eq!(info.color_type, png::ColorType::Indexed);
        assert_eq!(buf, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(palette.unwrap(), CLASS_PALETTE.concat());
        assert_eq!(decode_label_map(&bytes).unwrap(), labels);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let mut bytes = Vec::new();
        encode(&mut bytes, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, None, &[1, 9])
            .unwrap();
        assert!(decode_label_map(&bytes).is_err());
        assert_eq!(
            decode_label_map(&{
                let mut b = Vec::new();
                encode(&mut b, 2, 1, png::ColorType::Grayscale, png::BitDepth::Eight, None, &[1, 6])
                    .unwrap();
                b
            })
            .unwrap()
            .get(0, 1),
            TissueClass::NOISE
        );
    }

    #[test]
    fn rejects_color_bscan() {
        let img = RgbImage {
            width: 1,
            height: 1,
            pixels: vec![[1, 2, 3]],
        };
        assert!(decode_bscan(&encode_rgb(&img).unwrap()).is_err());
    }

    #[test]
    fn manifest_json_layout() {
        let json = r#"[{"id":"a","imagePath":"img/a.png","labelPath":"lbl/a.png","cohort":"glaucoma"},
                       {"id":"b","imagePath":"/abs/b.png","labelPath":"b.png"}]"#;
        let entries: Vec<ManifestEntry> = serde_json::from_str(json).unwrap();
        assert_eq!(entries[0].cohort, Some(Cohort::Glaucoma));
        assert_eq!(entries[1].cohort, None);
        let m = Manifest {
            entries,
            base_dir: PathBuf::from("/data"),
        };
        assert_eq!(m.resolve(Path::new("img/a.png")), PathBuf::from("/data/img/a.png"));
        assert_eq!(m.resolve(Path::new("/abs/b.png")), PathBuf::from("/abs/b.png"));
        assert!(m.entry("zzz").is_err());
    }
}
