//! Adaptive compensation of depth attenuation and shadowing.
//!
//! Each A-scan (image column) is normalized by the energy remaining below
//! every depth:
//!
//! ```text
//! E(z) = Σ_{k=z}^{Z−1} I(k)^n
//! D(z) = max(2·E(z), 2·E(0)·10^(−t))
//! O(z) = (I(z)^n / D(z))^(1/n)
//! ```
//!
//! `n` is the contrast exponent and `t` the threshold exponent; the floor on
//! `D` caps amplification once the residual energy drops below `10^(−t)` of
//! the column total. The compensated image is then rescaled linearly to
//! `[0, 1]` as a whole, preserving contrast between columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{validate_bscan, BScan, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationParams {
    pub contrast_exponent: f64,
    pub threshold_exponent: f64,
}

impl Default for CompensationParams {
    fn default() -> Self {
        CompensationParams {
            contrast_exponent: 2.0,
            threshold_exponent: 12.0,
        }
    }
}

impl CompensationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_exponent.is_finite() && self.contrast_exponent >= 1.0) {
            return Err(Error::invalid(format!(
                "contrast exponent {} must be >= 1",
                self.contrast_exponent
            )));
        }
        if !(self.threshold_exponent.is_finite() && self.threshold_exponent > 0.0) {
            return Err(Error::invalid(format!(
                "threshold exponent {} must be > 0",
                self.threshold_exponent
            )));
        }
        Ok(())
    }
}

/// Compensates one depth profile. An all-zero column maps to zeros.
pub fn compensate_column(column: &[f64], params: &CompensationParams) -> Vec<f64> {
    let n = params.contrast_exponent;
    let powered: Vec<f64> = column.iter().map(|&v| v.powf(n)).collect();
    let mut energy = vec![0.0; column.len()];
    let mut acc = 0.0;
    for z in (0..column.len()).rev() {
        acc += powered[z];
        energy[z] = acc;
    }
    let total = energy.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return vec![0.0; column.len()];
    }
    let floor = 2.0 * total * 10f64.powf(-params.threshold_exponent);
    powered
        .iter()
        .zip(&energy)
        .map(|(&p, &e)| (p / (2.0 * e).max(floor)).powf(1.0 / n))
        .collect()
}

/// Per-column compensation without the final rescale.
pub fn compensate_columns(image: &BScan, params: &CompensationParams) -> Result<BScan> {
    params.validate()?;
    validate_bscan(image)?;
    if image.height() < 2 {
        return Err(Error::invalid(format!(
            "compensation needs at least 2 rows, got {}",
            image.height()
        )));
    }
    let columns: Vec<Vec<f64>> = (0..image.width())
        .into_par_iter()
        .map(|c| compensate_column(&image.column(c), params))
        .collect();
    Ok(Raster::from_fn(image.height(), image.width(), |r, c| {
        columns[c][r]
    }))
}

/// Compensates every A-scan and rescales the result linearly to `[0, 1]`.
pub fn compensate_bscan(image: &BScan, params: &CompensationParams) -> Result<BScan> {
    let mut out = compensate_columns(image, params)?;
    rescale_unit(&mut out);
    Ok(out)
}

/// Min-max rescale to `[0, 1]`; a constant image becomes all zeros.
pub fn rescale_unit(image: &mut BScan) {
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    for v in image.data_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Raw and compensated depth profiles of one column, aligned by depth.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensationProfile {
    pub column: usize,
    pub raw: Vec<f64>,
    pub compensated: Vec<f64>,
}

pub fn compensation_profile(
    image: &BScan,
    column: usize,
    params: &CompensationParams,
) -> Result<CompensationProfile> {
    if column >= image.width() {
        return Err(Error::invalid(format!(
            "profile column {column} outside image width {}",
            image.width()
        )));
    }
    let compensated = compensate_bscan(image, params)?;
    Ok(CompensationProfile {
        column,
        raw: image.column(column),
        compensated: compensated.column(column),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The defining formula evaluated term by term, summing E(z) afresh for
    /// every depth.
    fn formula(column: &[f64], n: f64, t: f64) -> Vec<f64> {
        let z_max = column.len();
        let e0: f64 = column.iter().map(|v| v.powf(n)).sum();
        (0..z_max)
            .map(|z| {
                let mut e = 0.0;
                for k in z..z_max {
                    e += column[k].powf(n);
                }
                let d = f64::max(2.0 * e, 2.0 * e0 * 10f64.powf(-t));
                (column[z].powf(n) / d).powf(1.0 / n)
            })
            .collect()
    }

    fn coefficient_of_variation(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        var.sqrt() / mean
    }

    fn no_threshold() -> CompensationParams {
        CompensationParams {
            contrast_exponent: 1.0,
            threshold_exponent: 300.0,
        }
    }

    #[test]
    fn constant_column_closed_form() {
        let z = 40;
        let out = compensate_column(&vec![0.3; z], &no_threshold());
        for (i, v) in out.iter().enumerate() {
            let expected = 1.0 / (2.0 * (z - i) as f64);
            assert!((v - expected).abs() < 1e-14, "z={i}: {v} vs {expected}");
        }
    }

    #[test]
    fn removes_exponential_attenuation() {
        let params = CompensationParams::default();
        let column: Vec<f64> = (0..200).map(|z| (-0.05 * z as f64).exp()).collect();
        let out = compensate_column(&column, &params);
        let reference = formula(&column, 2.0, 12.0);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let top = 160;
        assert!(coefficient_of_variation(&out[..top]) < 0.05);
        assert!(coefficient_of_variation(&column[..top]) > 0.5);
    }

    #[test]
    fn threshold_floor_limits_deep_amplification() {
        let mut column = vec![1.0; 10];
        column.extend(std::iter::repeat_n(1e-4, 10));
        let params = CompensationParams {
            contrast_exponent: 2.0,
            threshold_exponent: 2.0,
        };
        let out = compensate_column(&column, &params);
        let reference = formula(&column, 2.0, 2.0);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-15);
        }
        let unfloored = compensate_column(
            &column,
            &CompensationParams {
                threshold_exponent: 300.0,
                ..params
            },
        );
        assert!(out[19] < unfloored[19] * 1e-2);
    }

    #[test]
    fn scaled_column_gives_identical_output() {
        let image = BScan::from_fn(30, 2, |r, _| 0.2 + 0.7 * ((r as f64) * 0.3).sin().abs());
        let mut halved = image.clone();
        for r in 0..30 {
            halved.set(r, 1, image.get(r, 1) * 0.5);
        }
        let out = compensate_columns(&halved, &CompensationParams::default()).unwrap();
        for r in 0..30 {
            assert!((out.get(r, 0) - out.get(r, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_stays_zero() {
        let mut image = BScan::filled(5, 3, 0.4);
        for r in 0..5 {
            image.set(r, 1, 0.0);
        }
        let out = compensate_bscan(&image, &CompensationParams::default()).unwrap();
        assert!(out.column(1).iter().all(|&v| v == 0.0));
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_input() {
        let params = CompensationParams::default();
        let mut image = BScan::filled(4, 4, 0.5);
        image.set(2, 2, f64::INFINITY);
        assert!(compensate_bscan(&image, &params).is_err());
        assert!(compensate_bscan(&BScan::filled(1, 4, 0.5), &params).is_err());
        let bad = CompensationParams {
            contrast_exponent: 0.5,
            ..params
        };
        assert!(compensate_bscan(&BScan::filled(4, 4, 0.5), &bad).is_err());
        assert!(compensation_profile(&BScan::filled(4, 4, 0.5), 4, &params).is_err());
    }

    #[test]
    fn profile_aligns_raw_and_compensated() {
        let image = BScan::from_fn(20, 3, |r, c| (0.9 - 0.04 * r as f64) * (1.0 - 0.1 * c as f64));
        let params = CompensationParams::default();
        let p = compensation_profile(&image, 2, &params).unwrap();
        assert_eq!(p.raw, image.column(2));
        assert_eq!(p.compensated, compensate_bscan(&image, &params).unwrap().column(2));
    }

    proptest! {
        #[test]
        fn scale_invariance(
            values in prop::collection::vec(0.05f64..1.0, 24),
            k in 0.01f64..=1.0,
        ) {
            let image = BScan::new(8, 3, values).unwrap();
            let scaled = image.map(|v| v * k);
            let params = CompensationParams::default();
            let a = compensate_bscan(&image, &params).unwrap();
            let b = compensate_bscan(&scaled, &params).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn per_pixel_energy_bound_and_unit_range(
            values in prop::collection::vec(0.0f64..=1.0, 30),
            n in 1.0f64..4.0,
        ) {
            let image = BScan::new(10, 3, values).unwrap();
            let params = CompensationParams { contrast_exponent: n, threshold_exponent: 12.0 };
            let raw = compensate_columns(&image, &params).unwrap();
            for v in raw.data() {
                prop_assert!(v.powf(n) <= 0.5 + 1e-9);
            }
            let out = compensate_bscan(&image, &params).unwrap();
            prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(out, compensate_bscan(&image, &params).unwrap());
        }
    }
}
