use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Params, Tensor};
use crate::scalar::Scalar;

use super::{EncoderConfig, EpochLoss, TrainConfig, Vae};

/// File signature of a checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LRCVAE01";

/// Trained model plus the recipe and loss history that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub vae: Vae<T>,
    pub train_config: TrainConfig,
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept (1-based); `None` for an untrained model.
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    train: TrainConfig,
    init_seed: u64,
    best_epoch: Option<usize>,
    history: Vec<EpochLoss>,
    manifest: Vec<ManifestEntry>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails with a checkpoint error unless the model consumes `bands`-band tiles.
    pub fn require_bands(&self, bands: usize) -> Result<()> {
        if self.vae.config.input_bands != bands {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {} bands, data has {}",
                self.vae.config.input_bands, bands
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Result<Checkpoint<U>> {
        Ok(Checkpoint {
            vae: Vae::from_params(
                self.vae.config.clone(),
                self.vae.params.cast(),
                self.vae.init_seed,
            )?,
            train_config: self.train_config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            encoder: self.vae.config.clone(),
            train: self.train_config.clone(),
            init_seed: self.vae.init_seed,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            manifest: self
                .vae
                .params
                .iter()
                .map(|(name, t)| ManifestEntry {
                    name: name.to_string(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.vae.params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.vae.params.iter() {
            for v in &t.data {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint signature"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(12..12 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        header
            .encoder
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid embedded config: {e}")))?;
        let mut payload = &bytes[12 + len..];
        let mut params = Params::<T>::new();
        for entry in &header.manifest {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 4 * n {
                return Err(bad("truncated parameter payload"));
            }
            let data = payload[..4 * n]
                .chunks_exact(4)
                .map(|c| {
                    T::lit(f64::from(f32::from_le_bytes(
                        c.try_into().expect("4 bytes"),
                    )))
                })
                .collect();
            payload = &payload[4 * n..];
            params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after parameter payload"));
        }
        let vae = Vae::from_params(header.encoder, params, header.init_seed)
            .map_err(|e| Error::Checkpoint(format!("manifest does not match config: {e}")))?;
        Ok(Self {
            vae,
            train_config: header.train,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint(bands: usize) -> Checkpoint<f32> {
        let config = EncoderConfig {
            stage_channels: vec![4, 4, 8, 8],
            latent_dim: 8,
            ..EncoderConfig::with_bands(bands)
        };
        Checkpoint {
            vae: Vae::new(config, 3).unwrap(),
            train_config: TrainConfig::default(),
            history: Vec::new(),
            best_epoch: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = checkpoint(4);
        save_checkpoint(&ck, &path).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.vae.params, ck.vae.params);
        assert_eq!(back.vae.config, ck.vae.config);
        assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes().unwrap());
    }

    #[test]
    fn band_mismatch_is_checkpoint_error() {
        let ck = checkpoint(8);
        assert!(matches!(ck.require_bands(4), Err(Error::Checkpoint(_))));
        assert!(ck.require_bands(8).is_ok());
    }

    #[test]
    fn truncated_file_is_checkpoint_error() {
        let bytes = checkpoint(4).to_bytes().unwrap();
        for cut in [4, 20, bytes.len() - 1] {
            let r = Checkpoint::<f32>::from_bytes(&bytes[..cut]);
            assert!(matches!(r, Err(Error::Checkpoint(_))), "cut {cut}");
        }
    }
}
