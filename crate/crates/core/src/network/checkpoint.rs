//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "ONHS"  u32 version
//! u32 count, then count × tensor        parameters
//! u64 adam step
//! u32 count, then count × tensor        ADAM moments (m.<name>, v.<name>)
//! u32 length, then UTF-8 JSON           architecture, config, class weights,
//!                                       split and best epoch
//! tensor := u32 name length, name, u32 rank, rank × u32 dims, f32 data
//! ```
//!
//! Saving is a pure function of the contents, so equal checkpoints produce
//! byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::arch::Architecture;
use super::params::NetworkParams;
use super::train::TrainConfig;
use crate::dataset::{ClassWeights, DatasetSplit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ONHS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
    pub class_weights: ClassWeights,
    pub split: Option<DatasetSplit>,
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Metadata {
    architecture: Architecture,
    config: TrainConfig,
    class_weights: ClassWeights,
    split: Option<DatasetSplit>,
    best_epoch: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()?;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()?;
        if !(1..=4).contains(&rank) {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let data = self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::from_vec(&shape, data)?))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor<f32>)>> {
        let n = self.u32()?;
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl Checkpoint {
    pub fn architecture(&self) -> Architecture {
        self.params.architecture()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 * self.params.count() + 4096);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut out, self.params.tensors().len())?;
        for (name, t) in self.params.named() {
            put_tensor(&mut out, name, t)?;
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_u32(&mut out, 2 * self.params.tensors().len())?;
        for (prefix, moments) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (name, t) in moments.named() {
                put_tensor(&mut out, &format!("{prefix}.{name}"), t)?;
            }
        }
        let meta = serde_json::to_vec(&Metadata {
            architecture: self.architecture(),
            config: self.config.clone(),
            class_weights: self.class_weights,
            split: self.split.clone(),
            best_epoch: self.best_epoch,
        })?;
        put_u32(&mut out, meta.len())?;
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing ONHS magic".into()));
        }
        let version = r.u32()? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let params = r.tensors()?;
        let step = r.u64()?;
        let moments = r.tensors()?;
        let len = r.u32()?;
        let meta: Metadata = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        meta.architecture
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let arch = meta.architecture;
        let params = NetworkParams::from_named(arch, params)?;
        let n = params.tensors().len();
        if moments.len() != 2 * n {
            return Err(Error::Checkpoint(format!(
                "expected {} moment tensors, found {}",
                2 * n,
                moments.len()
            )));
        }
        let mut moments = moments.into_iter();
        let mut unprefixed = |prefix: &str| -> Result<Vec<(String, Tensor<f32>)>> {
            moments
                .by_ref()
                .take(n)
                .map(|(name, t)| match name.strip_prefix(prefix) {
                    Some(rest) => Ok((rest.to_string(), t)),
                    None => Err(Error::Checkpoint(format!("moment {name} lacks prefix {prefix}"))),
                })
                .collect()
        };
        let m = NetworkParams::from_named(arch, unprefixed("m.")?)?;
        let v = NetworkParams::from_named(arch, unprefixed("v.")?)?;
        Ok(Checkpoint {
            params,
            adam: AdamState { step, m, v },
            config: meta.config,
            class_weights: meta.class_weights,
            split: meta.split,
            best_epoch: meta.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::io::write_bytes(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let arch = Architecture::DOWNSIZED;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NetworkParams::he_init(arch, &mut rng).unwrap();
        let mut adam = AdamState::new(arch).unwrap();
        adam.update(&mut params.clone(), &params, 0.001);
        Checkpoint {
            params,
            adam,
            config: TrainConfig {
                architecture: arch,
                ..TrainConfig::default()
            },
            class_weights: ClassWeights([0.5, 1.0, 1.5, 1.0, 1.0, 1.0]),
            split: Some(DatasetSplit {
                train: vec!["a".into()],
                validation: vec![],
                test: vec!["b".into(), "c".into()],
            }),
            best_epoch: 3,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..4], b"ONHS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.onhs");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corrupt_input_is_a_checkpoint_error() {
        let bytes = sample().to_bytes().unwrap();
        for bad in [&bytes[..3], &bytes[..bytes.len() - 1], b"XXXX\x01\0\0\0".as_slice()] {
            assert!(matches!(Checkpoint::from_bytes(bad), Err(Error::Checkpoint(_))));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Checkpoint(_))));
    }
}
