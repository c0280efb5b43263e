//! Synthetic layered B-scans with known tissue labels.
//!
//! Bands run top to bottom in the order RNFL+prelamina (1), other retinal
//! layers (3), RPE (2), choroid (4), sclera+LC (5), with noise (6) filling
//! the bottom. Interfaces undulate smoothly; each band has its own mean
//! reflectivity under multiplicative speckle. Optional depth attenuation and
//! vessel-like shadow stripes reproduce the artifacts compensation removes.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BScan, LabelMap, Raster, TissueClass};

/// Band classes from the top of the image down.
pub const BAND_ORDER: [TissueClass; 6] = [
    TissueClass::RNFL_PRELAMINA,
    TissueClass::OTHER_RETINA,
    TissueClass::RPE,
    TissueClass::CHOROID,
    TissueClass::SCLERA_LC,
    TissueClass::NOISE,
];

/// Nominal depth of the five interfaces as a fraction of image height.
const INTERFACE_DEPTH: [f64; 5] = [0.17, 0.37, 0.47, 0.63, 0.81];
/// Mean reflectivity per band, in `BAND_ORDER`.
const BAND_REFLECTIVITY: [f64; 6] = [0.75, 0.38, 0.95, 0.55, 0.68, 0.07];
const SPECKLE_SIGMA: f64 = 0.3;
const MIN_BAND_FRACTION: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub shadows: bool,
    pub attenuation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: BScan,
    pub labels: LabelMap,
    /// Interface depth (in rows) per column, five per column, top to bottom.
    pub interfaces: Vec<[f64; 5]>,
}

struct Undulation {
    terms: Vec<(f64, f64, f64)>,
}

impl Undulation {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64, max_cycles: f64) -> Self {
        let terms = (0..3)
            .map(|k| {
                let a = amplitude * rng.random_range(0.4..1.0) / (k + 1) as f64;
                let f = rng.random_range(0.3..max_cycles) * (k + 1) as f64;
                let phase = rng.random_range(0.0..2.0 * PI);
                (a, f, phase)
            })
            .collect();
        Undulation { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin())
            .sum()
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let PhantomSpec { width, height, .. } = *spec;
    if width < 2 || height < 24 {
        return Err(Error::invalid(format!(
            "phantom must be at least 24 rows by 2 columns, got {height}x{width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = height as f64;

    let shared = Undulation::random(&mut rng, 0.05 * h, 1.2);
    let own: Vec<Undulation> = (0..5)
        .map(|_| Undulation::random(&mut rng, 0.015 * h, 2.0))
        .collect();
    let jitter: Vec<f64> = (0..5).map(|_| rng.random_range(-0.02..0.02) * h).collect();
    let min_gap = (MIN_BAND_FRACTION * h).max(2.0);

    let interfaces: Vec<[f64; 5]> = (0..width)
        .map(|x| {
            let t = x as f64 / width as f64;
            let mut b = [0.0; 5];
            for k in 0..5 {
                let depth = INTERFACE_DEPTH[k] * h + jitter[k] + shared.at(t) + own[k].at(t);
                let lower = if k == 0 { min_gap } else { b[k - 1] + min_gap };
                b[k] = depth.max(lower);
            }
            let overflow = b[4] - (h - min_gap);
            if overflow > 0.0 {
                b.iter_mut().for_each(|v| *v -= overflow);
            }
            b
        })
        .collect();

    let band_mean: Vec<f64> = BAND_REFLECTIVITY
        .iter()
        .map(|m| m * rng.random_range(0.9..1.1))
        .collect();
    let gain = rng.random_range(0.75..1.0);
    let attenuation_rate = if spec.attenuation {
        rng.random_range(2.0..3.5) / h
    } else {
        0.0
    };

    let mut shadow = Raster::filled(height, width, 1.0f64);
    if spec.shadows {
        let stripes = rng.random_range(2..=4);
        for _ in 0..stripes {
            let half_width = rng.random_range(2.0..6.0f64);
            let center = rng.random_range(0.0..width as f64);
            let factor = rng.random_range(0.2..0.5);
            let start_frac = rng.random_range(0.0..1.0);
            for x in 0..width {
                if (x as f64 - center).abs() > half_width {
                    continue;
                }
                let start = interfaces[x][0] + start_frac * (interfaces[x][1] - interfaces[x][0]);
                for r in (start.ceil().max(0.0) as usize)..height {
                    shadow.set(r, x, shadow.get(r, x) * factor);
                }
            }
        }
    }

    let speckle: Normal<f64> = Normal::new(-SPECKLE_SIGMA * SPECKLE_SIGMA / 2.0, SPECKLE_SIGMA)
        .expect("valid speckle distribution");
    let floor: Normal<f64> = Normal::new(0.0, 0.01).expect("valid noise distribution");
    let mut labels = LabelMap::filled(height, width, TissueClass::NOISE);
    let mut image = BScan::filled(height, width, 0.0);
    for r in 0..height {
        let depth = r as f64 + 0.5;
        let attenuation = (-attenuation_rate * r as f64).exp();
        for x in 0..width {
            let band = interfaces[x].iter().filter(|&&b| depth >= b).count();
            labels.set(r, x, BAND_ORDER[band]);
            let v = gain
                * band_mean[band]
                * speckle.sample(&mut rng).exp()
                * attenuation
                * shadow.get(r, x)
                + floor.sample(&mut rng).abs();
            image.set(r, x, v.clamp(0.0, 1.0));
        }
    }
    Ok(Phantom {
        image,
        labels,
        interfaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> PhantomSpec {
        PhantomSpec {
            width: 96,
            height: 80,
            seed,
            shadows: true,
            attenuation: true,
        }
    }

    #[test]
    fn same_seed_same_phantom() {
        assert_eq!(generate_phantom(&spec(4)).unwrap(), generate_phantom(&spec(4)).unwrap());
        assert_ne!(
            generate_phantom(&spec(4)).unwrap().image,
            generate_phantom(&spec(5)).unwrap().image
        );
    }

    #[test]
    fn bands_are_anatomically_ordered() {
        for seed in 0..10 {
            let p = generate_phantom(&spec(seed)).unwrap();
            let rank = |c: TissueClass| BAND_ORDER.iter().position(|&b| b == c).unwrap();
            for x in 0..p.labels.width() {
                let column: Vec<usize> = (0..p.labels.height()).map(|r| rank(p.labels.get(r, x))).collect();
                assert!(column.windows(2).all(|w| w[0] <= w[1]), "seed {seed} col {x}");
                for band in 0..6 {
                    assert!(column.contains(&band), "seed {seed} col {x} misses band {band}");
                }
            }
        }
    }

    #[test]
    fn labels_match_interfaces() {
        let p = generate_phantom(&spec(1)).unwrap();
        for x in 0..p.labels.width() {
            for r in 0..p.labels.height() {
                let depth = r as f64 + 0.5;
                let band = p.interfaces[x].iter().filter(|&&b| depth >= b).count();
                assert_eq!(p.labels.get(r, x), BAND_ORDER[band]);
            }
        }
    }

    #[test]
    fn intensities_in_unit_range() {
        let p = generate_phantom(&spec(2)).unwrap();
        assert!(crate::raster::validate_bscan(&p.image).is_ok());
    }

    #[test]
    fn attenuation_darkens_depth() {
        let mut s = spec(8);
        s.shadows = false;
        let flat = generate_phantom(&PhantomSpec { attenuation: false, ..s }).unwrap();
        let dim = generate_phantom(&s).unwrap();
        fn mean_rows(img: &BScan, rows: std::ops::Range<usize>) -> f64 {
            let n = rows.len() * img.width();
            rows.flat_map(|r| (0..img.width()).map(move |c| (r, c)))
                .map(|(r, c)| img.get(r, c))
                .sum::<f64>()
                / n as f64
        }
        let ratio = |img: &BScan| mean_rows(img, 55..62) / mean_rows(img, 2..9);
        assert!(ratio(&dim.image) < 0.6 * ratio(&flat.image));
    }

    #[test]
    fn shadows_darken_some_columns() {
        let base = PhantomSpec { shadows: false, ..spec(6) };
        let plain = generate_phantom(&base).unwrap();
        let shaded = generate_phantom(&PhantomSpec { shadows: true, ..base }).unwrap();
        assert_eq!(plain.labels, shaded.labels);
        let darker_cols = (0..96)
            .filter(|&c| {
                let a: f64 = (60..80).map(|r| plain.image.get(r, c)).sum();
                let b: f64 = (60..80).map(|r| shaded.image.get(r, c)).sum();
                b < 0.7 * a
            })
            .count();
        assert!(darker_cols >= 3, "{darker_cols}");
    }

    #[test]
    fn rejects_tiny_phantoms() {
        assert!(generate_phantom(&PhantomSpec { height: 10, ..spec(0) }).is_err());
    }
}
