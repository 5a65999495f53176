use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Grads};
use crate::raster::Tile;
use crate::rng::{child_seed, Rng};
use crate::scalar::Scalar;

use super::{scale_augment, Checkpoint, EncoderConfig, LossParts, Vae};

/// Samples accumulated sequentially inside one parallel work unit; fixes the
/// reduction tree so results do not depend on the thread count.
const GROUP: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scale_aug_min: f64,
    pub scale_aug_max: f64,
    pub seed: u64,
    pub deterministic: bool,
    /// Fraction of the tiles held out for validation when no validation set is given.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            scale_aug_min: 0.3,
            scale_aug_max: 1.0,
            seed: 7,
            deterministic: true,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        if !(0.0 < self.scale_aug_min
            && self.scale_aug_min <= self.scale_aug_max
            && self.scale_aug_max <= 1.0)
        {
            return Err(Error::Domain(format!(
                "scale range [{}, {}] must satisfy 0 < min ≤ max ≤ 1",
                self.scale_aug_min, self.scale_aug_max
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Domain(format!(
                "validation fraction {} not in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: LossParts,
    pub validation: LossParts,
}

/// Training stopped on a numerical failure; carries the epochs completed so far.
#[derive(Debug, thiserror::Error)]
#[error("{error} (after {} completed epochs)", history.len())]
pub struct TrainAbort {
    pub error: Error,
    pub history: Vec<EpochLoss>,
}

fn mean_parts(sum: LossParts, n: usize) -> LossParts {
    let k = n.max(1) as f64;
    LossParts {
        total: sum.total / k,
        recon_mse: sum.recon_mse / k,
        kl: sum.kl / k,
    }
}

fn add_parts(a: LossParts, b: LossParts) -> LossParts {
    LossParts {
        total: a.total + b.total,
        recon_mse: a.recon_mse + b.recon_mse,
        kl: a.kl + b.kl,
    }
}

fn split_validation<'a>(tiles: &'a [Tile], cfg: &TrainConfig) -> (Vec<&'a Tile>, Vec<&'a Tile>) {
    let mut idx: Vec<usize> = (0..tiles.len()).collect();
    idx.shuffle(&mut Rng::seed_from_u64(child_seed(
        cfg.seed,
        "shuffle",
        u64::MAX,
    )));
    let n_val = (tiles.len() as f64 * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(tiles.len().saturating_sub(1));
    let (val, train) = idx.split_at(n_val);
    let mut train: Vec<usize> = train.to_vec();
    let mut val: Vec<usize> = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.into_iter().map(|i| &tiles[i]).collect(),
        val.into_iter().map(|i| &tiles[i]).collect(),
    )
}

/// Per-sample loss/gradient with its own augmentation and latent noise stream.
fn sample_step<T: Scalar>(
    vae: &Vae<T>,
    tile: &Tile,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<(LossParts, Grads<T>)> {
    let mut rng = Rng::seed_from_u64(child_seed(cfg.seed, "augment", stream));
    let aug = scale_augment(tile, cfg.scale_aug_min, cfg.scale_aug_max, &mut rng);
    let eta: Vec<T> = (0..vae.config.latent_dim)
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect();
    vae.sample_loss_and_grads(&aug, eta, vae.config.beta)
}

fn batch_step<T: Scalar>(
    vae: &Vae<T>,
    batch: &[(&Tile, u64)],
    cfg: &TrainConfig,
) -> Result<(LossParts, Grads<T>)> {
    let groups: Vec<Result<(LossParts, Grads<T>)>> = batch
        .par_chunks(GROUP)
        .map(|group| {
            let mut acc: Option<(LossParts, Grads<T>)> = None;
            for (tile, stream) in group {
                let (l, g) = sample_step(vae, tile, cfg, *stream)?;
                acc = Some(match acc {
                    None => (l, g),
                    Some((al, mut ag)) => {
                        ag.add_assign(&g);
                        (add_parts(al, l), ag)
                    }
                });
            }
            Ok(acc.expect("non-empty group"))
        })
        .collect();
    let mut total: Option<(LossParts, Grads<T>)> = None;
    for r in groups {
        let (l, g) = r?;
        total = Some(match total {
            None => (l, g),
            Some((al, mut ag)) => {
                ag.add_assign(&g);
                (add_parts(al, l), ag)
            }
        });
    }
    let (sum, mut grads) = total.ok_or_else(|| Error::Domain("empty batch".into()))?;
    grads.scale(T::lit(1.0 / batch.len() as f64));
    Ok((mean_parts(sum, batch.len()), grads))
}

fn evaluate<T: Scalar>(vae: &Vae<T>, tiles: &[&Tile]) -> Result<LossParts> {
    let parts: Vec<Result<LossParts>> = tiles
        .par_iter()
        .map(|t| vae.eval_loss(t, vae.config.beta))
        .collect();
    let mut sum = LossParts::default();
    for p in parts {
        sum = add_parts(sum, p?);
    }
    Ok(mean_parts(sum, tiles.len()))
}

/// Trains a freshly initialised model and returns the best-validation checkpoint.
///
/// When `validation` is `None`, a seeded `val_fraction` of `tiles` is held out.
/// With `epochs = 0` the initial model is returned with an empty history.
pub fn train<T: Scalar>(
    tiles: &[Tile],
    validation: Option<&[Tile]>,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> std::result::Result<Checkpoint<T>, TrainAbort> {
    let abort = |error: Error, history: &[EpochLoss]| TrainAbort {
        error,
        history: history.to_vec(),
    };
    cfg.validate().map_err(|e| abort(e, &[]))?;
    let mut vae = Vae::<T>::new(encoder.clone(), cfg.seed).map_err(|e| abort(e, &[]))?;
    if tiles.len() < cfg.batch_size {
        return Err(abort(
            Error::Domain(format!(
                "{} tiles is fewer than one batch of {}",
                tiles.len(),
                cfg.batch_size
            )),
            &[],
        ));
    }
    let (train_set, val_set) = match validation {
        Some(v) => (tiles.iter().collect(), v.iter().collect()),
        None => split_validation(tiles, cfg),
    };

    let mut history: Vec<EpochLoss> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::nn::Params<T>)> = None;
    let mut adam = AdamState::new(&vae.params);
    let n = train_set.len() as u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut Rng::seed_from_u64(child_seed(
            cfg.seed,
            "shuffle",
            epoch as u64,
        )));
        let mut sum = LossParts::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Tile, u64)> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    (
                        train_set[i],
                        epoch as u64 * n + (b * cfg.batch_size + k) as u64,
                    )
                })
                .collect();
            let (loss, grads) = batch_step(&vae, &batch, cfg).map_err(|e| abort(e, &history))?;
            adam_step(&mut vae.params, &grads, &mut adam, cfg.learning_rate)
                .map_err(|e| abort(e, &history))?;
            sum = add_parts(
                sum,
                LossParts {
                    total: loss.total * chunk.len() as f64,
                    recon_mse: loss.recon_mse * chunk.len() as f64,
                    kl: loss.kl * chunk.len() as f64,
                },
            );
        }
        let train_loss = mean_parts(sum, train_set.len());
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            evaluate(&vae, &val_set).map_err(|e| abort(e, &history))?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() || !vae.params.all_finite() {
            return Err(abort(
                Error::TrainingDivergence(format!("non-finite loss at epoch {}", epoch + 1)),
                &history,
            ));
        }
        history.push(EpochLoss {
            epoch: epoch + 1,
            train: train_loss,
            validation: val_loss,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_loss.total < *v) {
            best = Some((val_loss.total, epoch + 1, vae.params.clone()));
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        vae.params = params;
    }
    Ok(Checkpoint {
        vae,
        train_config: cfg.clone(),
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            stage_channels: vec![4, 4, 8, 8],
            latent_dim: 8,
            ..EncoderConfig::default()
        }
    }

    fn tiles(n: usize, seed: u64) -> Vec<Tile> {
        let mut rng = Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let level = rng.random::<f32>() - 0.5;
                Tile::new(
                    0,
                    0,
                    32,
                    4,
                    (0..4096)
                        .map(|_| level + 0.1 * rng.random::<f32>())
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let ck = train::<f32>(&tiles(8, 1), None, &small_encoder(), &cfg).unwrap();
        assert!(ck.history.is_empty());
        assert_eq!(ck.best_epoch, None);
        let fresh = Vae::<f32>::new(small_encoder(), cfg.seed).unwrap();
        assert_eq!(ck.vae.params, fresh.params);
    }

    #[test]
    fn same_seed_gives_identical_checkpoints() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let data = tiles(12, 2);
        let a = train::<f32>(&data, None, &small_encoder(), &cfg).unwrap();
        let b = train::<f32>(&data, None, &small_encoder(), &cfg).unwrap();
        assert_eq!(a.vae.params, b.vae.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 6,
            ..TrainConfig::default()
        };
        let data = tiles(12, 3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train::<f32>(&data, None, &small_encoder(), &cfg).unwrap())
        };
        assert_eq!(run(1).vae.params, run(3).vae.params);
    }

    #[test]
    fn too_few_tiles_is_rejected() {
        let cfg = TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        };
        let err = train::<f32>(&tiles(4, 4), None, &small_encoder(), &cfg).unwrap_err();
        assert!(err.history.is_empty());
        assert!(matches!(err.error, Error::Domain(_)));
    }

    #[test]
    fn huge_learning_rate_aborts_with_history() {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e30,
            ..TrainConfig::default()
        };
        let mut data = tiles(8, 5);
        for t in &mut data {
            for v in &mut t.values {
                *v *= 1e3;
            }
        }
        match train::<f32>(&data, None, &small_encoder(), &cfg) {
            Err(abort) => assert!(abort.error.is_numerical(), "{}", abort.error),
            Ok(ck) => assert!(ck.history.iter().all(|h| h.train.is_finite())),
        }
    }
}
