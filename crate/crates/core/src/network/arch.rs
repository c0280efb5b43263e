use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::NUM_CLASSES;

/// Layer sizes of the three-stage conv/pool network followed by two hidden
/// fully connected layers and the class output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Architecture {
    /// Side of the square single-channel input.
    pub input_size: usize,
    /// Feature maps produced by every convolution.
    pub channels: usize,
    /// Square kernel size of each convolution.
    pub kernels: [usize; 3],
    /// Width of both hidden fully connected layers.
    pub hidden: usize,
    pub classes: usize,
}

/// Spatial side length after each convolution and each pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSizes {
    pub conv: [usize; 3],
    pub pool: [usize; 3],
}

impl Architecture {
    /// 50×50 input, 32 maps of 5×5/3×3/3×3, two layers of 100, 6 classes.
    pub const STANDARD: Architecture = Architecture {
        input_size: 50,
        channels: 32,
        kernels: [5, 3, 3],
        hidden: 100,
        classes: NUM_CLASSES,
    };

    /// Same topology scaled down to a 14×14 input whose last pooling yields
    /// 1×1 maps; cheap enough for whole-network finite differences.
    pub const DOWNSIZED: Architecture = Architecture {
        input_size: 14,
        channels: 3,
        kernels: [3, 3, 1],
        hidden: 5,
        classes: NUM_CLASSES,
    };

    pub fn feature_sizes(&self) -> Result<FeatureSizes> {
        let mut side = self.input_size;
        let mut conv = [0; 3];
        let mut pool = [0; 3];
        for (i, &k) in self.kernels.iter().enumerate() {
            if k == 0 || k > side {
                return Err(Error::invalid(format!(
                    "kernel {k} of convolution {} does not fit a {side}x{side} input",
                    i + 1
                )));
            }
            side = side - k + 1;
            conv[i] = side;
            if side < 2 {
                return Err(Error::invalid(format!(
                    "pooling {} needs at least 2x2 maps, got {side}x{side}",
                    i + 1
                )));
            }
            side /= 2;
            pool[i] = side;
        }
        Ok(FeatureSizes { conv, pool })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::invalid("architecture has an empty layer"));
        }
        self.feature_sizes().map(|_| ())
    }

    /// Length of the flattened input of the first fully connected layer.
    pub fn flatten_len(&self) -> Result<usize> {
        let s = self.feature_sizes()?.pool[2];
        Ok(self.channels * s * s)
    }

    /// Parameter tensor names and shapes in storage order.
    pub fn param_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let c = self.channels;
        let [k1, k2, k3] = self.kernels;
        let flat = self.flatten_len()?;
        Ok(vec![
            ("conv1.weight", vec![c, 1, k1, k1]),
            ("conv1.bias", vec![c]),
            ("conv2.weight", vec![c, c, k2, k2]),
            ("conv2.bias", vec![c]),
            ("conv3.weight", vec![c, c, k3, k3]),
            ("conv3.bias", vec![c]),
            ("fc1.weight", vec![self.hidden, flat]),
            ("fc1.bias", vec![self.hidden]),
            ("fc2.weight", vec![self.hidden, self.hidden]),
            ("fc2.bias", vec![self.hidden]),
            ("out.weight", vec![self.classes, self.hidden]),
            ("out.bias", vec![self.classes]),
        ])
    }

    /// Number of activation units across all layers, input excluded.
    pub fn neuron_count(&self) -> Result<usize> {
        let s = self.feature_sizes()?;
        let maps: usize = s
            .conv
            .iter()
            .chain(&s.pool)
            .map(|side| self.channels * side * side)
            .sum();
        Ok(maps + 2 * self.hidden + self.classes)
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::STANDARD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_dimension_chain() {
        let s = Architecture::STANDARD.feature_sizes().unwrap();
        assert_eq!(s.conv, [46, 21, 8]);
        assert_eq!(s.pool, [23, 10, 4]);
        assert_eq!(Architecture::STANDARD.flatten_len().unwrap(), 512);
    }

    #[test]
    fn standard_parameter_shapes() {
        let shapes = Architecture::STANDARD.param_shapes().unwrap();
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(shapes[6].1, vec![100, 512]);
        assert_eq!(shapes[10].1, vec![6, 100]);
        assert_eq!(total, 832 + 9248 + 9248 + 51_300 + 10_100 + 606);
    }

    #[test]
    fn neuron_count_under_valid_padding() {
        // 32·(46² + 23² + 21² + 10² + 8² + 4²) + 100 + 100 + 6
        assert_eq!(Architecture::STANDARD.neuron_count().unwrap(), 104_718);
    }

    #[test]
    fn downsized_reaches_single_pixel() {
        let s = Architecture::DOWNSIZED.feature_sizes().unwrap();
        assert_eq!(s.pool[2], 1);
        assert_eq!(Architecture::DOWNSIZED.flatten_len().unwrap(), 3);
    }

    #[test]
    fn rejects_impossible_stacks() {
        let mut a = Architecture::DOWNSIZED;
        a.kernels = [3, 3, 3];
        assert!(a.validate().is_err());
        a.input_size = 8;
        a.kernels = [9, 1, 1];
        assert!(a.validate().is_err());
    }
}
