//! Per-tile change scores for a co-registered scene pair.
//!
//! Four scorers share one output type, [`ScoreMap`]:
//!
//! - [`Method::Lrc`]: cosine distance between VAE posterior means.
//! - [`Method::Cosine`]: cosine distance between flattened tiles (shifted to `[0, 2]`).
//! - [`Method::Cva`]: mean magnitude of the per-pixel spectral difference vector.
//! - [`Method::Irmad`]: mean IR-MAD chi-square statistic over the tile.

mod irmad;

pub use irmad::{chi2_sf, irmad_fit, irmad_fit_pixels, irmad_score, IrmadModel, IrmadOptions};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::percentile;
use crate::raster::{pair_tiles, tile_scene, SceneRaster, Tile, TilePair, DEFAULT_TILE_SIZE};
use crate::scalar::Scalar;
use crate::vae::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lrc,
    Cosine,
    Cva,
    Irmad,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lrc, Method::Cosine, Method::Cva, Method::Irmad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lrc => "lrc",
            Method::Cosine => "cosine",
            Method::Cva => "cva",
            Method::Irmad => "irmad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lrc" => Ok(Method::Lrc),
            "cosine" | "pixelcosine" => Ok(Method::Cosine),
            "cva" => Ok(Method::Cva),
            "irmad" => Ok(Method::Irmad),
            _ => Err(Error::Usage(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigTag {
    #[serde(rename = "4-band")]
    FourBand,
    #[serde(rename = "8-band")]
    EightBand,
    #[serde(rename = "time-series")]
    TimeSeries,
}

impl ConfigTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfigTag::FourBand => "4-band",
            ConfigTag::EightBand => "8-band",
            ConfigTag::TimeSeries => "time-series",
        }
    }
}

impl fmt::Display for ConfigTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "4-band" | "4band" | "four-band" => Ok(ConfigTag::FourBand),
            "8-band" | "8band" | "eight-band" => Ok(ConfigTag::EightBand),
            "time-series" | "timeseries" => Ok(ConfigTag::TimeSeries),
            _ => Err(Error::Usage(format!("unknown config tag '{s}'"))),
        }
    }
}

/// Row-major per-tile scores; `None` marks a tile excluded for nodata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<Option<f64>>,
    pub method: Method,
    pub config_tag: ConfigTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl ScoreMap {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "{} scores for a {}x{} grid",
                self.scores.len(),
                self.rows,
                self.cols
            )));
        }
        if let Some(s) = self
            .scores
            .iter()
            .flatten()
            .find(|s| !s.is_finite() || **s < 0.0)
        {
            return Err(Error::Format(format!("invalid score {s}")));
        }
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.scores[row * self.cols + col]
    }

    /// Scores of all non-excluded tiles in row-major order.
    pub fn present(&self) -> Vec<f64> {
        self.scores.iter().flatten().copied().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let map: ScoreMap = serde_json::from_slice(&fs::read(path)?)?;
        map.validate()?;
        Ok(map)
    }
}

/// `1 − u·v / (‖u‖‖v‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "vector lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if !(uu > 0.0) || !(vv > 0.0) {
        return Err(Error::DegenerateVector(
            "cosine distance of a zero vector".into(),
        ));
    }
    Ok((1.0 - uv / (uu * vv).sqrt()).clamp(0.0, 2.0))
}

/// Posterior mean of the tile under the checkpointed encoder.
pub fn embed_tile<T: Scalar>(tile: &Tile, ckpt: &Checkpoint<T>) -> Result<Vec<f64>> {
    ckpt.require_bands(tile.bands)?;
    if tile.size != ckpt.vae.config.tile_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {}-pixel tiles, got {}",
            ckpt.vae.config.tile_size, tile.size
        )));
    }
    Ok(ckpt
        .vae
        .encode(tile)?
        .mu
        .iter()
        .map(|v| v.as_f64())
        .collect())
}

/// Reference tiles a post tile is compared with: the history when present, else the pre tile.
fn references(pair: &TilePair) -> Vec<&Tile> {
    if pair.pre_history.is_empty() {
        vec![&pair.pre]
    } else {
        pair.pre_history.iter().collect()
    }
}

fn min_over<F: FnMut(&Tile) -> Result<f64>>(refs: Vec<&Tile>, mut f: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for r in refs {
        best = best.min(f(r)?);
    }
    Ok(best)
}

/// Latent cosine distance; with a history, the minimum over the history tiles.
pub fn lrc_score<T: Scalar>(pair: &TilePair, ckpt: &Checkpoint<T>) -> Result<f64> {
    let post = embed_tile(&pair.post, ckpt)?;
    min_over(references(pair), |r| {
        cosine_distance(&embed_tile(r, ckpt)?, &post)
    })
}

fn offset(tile: &Tile) -> Vec<f64> {
    tile.values.iter().map(|v| f64::from(*v) + 1.0).collect()
}

fn check_geometry(a: &Tile, b: &Tile) -> Result<()> {
    if a.size != b.size || a.bands != b.bands {
        return Err(Error::Pairing("tiles differ in size or band count".into()));
    }
    Ok(())
}

/// Cosine distance of the flattened tiles after shifting `[−1, 1]` data by +1.
pub fn pixel_cosine_score(pair: &TilePair) -> Result<f64> {
    let post = offset(&pair.post);
    min_over(references(pair), |r| {
        check_geometry(r, &pair.post)?;
        cosine_distance(&offset(r), &post)
    })
}

/// Per-tile aggregation of per-pixel change magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvaAggregate {
    #[default]
    Mean,
    Max,
}

fn cva_tiles(pre: &Tile, post: &Tile, agg: CvaAggregate) -> Result<f64> {
    check_geometry(pre, post)?;
    let n = pre.size * pre.size;
    let mut acc = 0.0f64;
    for p in 0..n {
        let mut sq = 0.0f64;
        for b in 0..pre.bands {
            let d = f64::from(post.values[b * n + p]) - f64::from(pre.values[b * n + p]);
            sq += d * d;
        }
        let m = sq.sqrt();
        match agg {
            CvaAggregate::Mean => acc += m,
            CvaAggregate::Max => acc = acc.max(m),
        }
    }
    Ok(match agg {
        CvaAggregate::Mean => acc / n as f64,
        CvaAggregate::Max => acc,
    })
}

/// Change-vector magnitude aggregated over the tile.
pub fn cva_score(pair: &TilePair, agg: CvaAggregate) -> Result<f64> {
    min_over(references(pair), |r| cva_tiles(r, &pair.post, agg))
}

/// Tiles flagged by the nominal 95th-percentile rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMap {
    pub rows: usize,
    pub cols: usize,
    pub threshold: f64,
    /// `None` for excluded tiles.
    pub flags: Vec<Option<bool>>,
}

impl BinaryMap {
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|f| **f == Some(true)).count()
    }
}

/// Flags tiles scoring strictly above the 95th percentile of `nominal`.
pub fn threshold_at_95(nominal: &[f64], target: &ScoreMap) -> Result<BinaryMap> {
    if nominal.is_empty() {
        return Err(Error::Domain("no nominal scores to set a threshold".into()));
    }
    let tau = percentile(nominal, 95.0)?;
    Ok(BinaryMap {
        rows: target.rows,
        cols: target.cols,
        threshold: tau,
        flags: target.scores.iter().map(|s| s.map(|s| s > tau)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    pub tile_size: usize,
    pub config_tag: ConfigTag,
    pub cva_aggregate: CvaAggregate,
    pub irmad: IrmadOptions,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            config_tag: ConfigTag::FourBand,
            cva_aggregate: CvaAggregate::Mean,
            irmad: IrmadOptions::default(),
        }
    }
}

/// Tiles, pairs and scores a (preprocessed) scene pair with one method.
///
/// IR-MAD is fitted once per reference scene (the pre scene, or each history
/// scene) and the per-tile minimum over references is reported.
pub fn score_scene<T: Scalar>(
    pre: &SceneRaster,
    post: &SceneRaster,
    method: Method,
    ckpt: Option<&Checkpoint<T>>,
    history: Option<&[SceneRaster]>,
    opts: &ScoreOptions,
) -> Result<ScoreMap> {
    let history = history.filter(|h| !h.is_empty());
    let pre_grid = tile_scene(pre, opts.tile_size)?;
    let post_grid = tile_scene(post, opts.tile_size)?;
    let hist_grids = history
        .map(|h| {
            h.iter()
                .map(|s| tile_scene(s, opts.tile_size))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let pairs = pair_tiles(&pre_grid, &post_grid, hist_grids.as_deref())?;

    let irmad_models = if method == Method::Irmad {
        let refs: Vec<&SceneRaster> = match history {
            Some(h) => h.iter().collect(),
            None => vec![pre],
        };
        refs.iter()
            .map(|r| irmad_fit(r, post, &opts.irmad))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let ckpt = match (method, ckpt) {
        (Method::Lrc, None) => {
            return Err(Error::Usage("LRC scoring requires a checkpoint".into()))
        }
        (_, c) => c,
    };
    if let Some(c) = ckpt {
        c.require_bands(post.bands())?;
    }

    let score_pair = |pair: &TilePair| -> Result<Option<f64>> {
        if pair.excluded {
            return Ok(None);
        }
        let s = match method {
            Method::Lrc => lrc_score(pair, ckpt.expect("checked above"))?,
            Method::Cosine => pixel_cosine_score(pair)?,
            Method::Cva => cva_score(pair, opts.cva_aggregate)?,
            Method::Irmad => {
                let mut best = f64::INFINITY;
                for (model, reference) in irmad_models.iter().zip(references(pair)) {
                    best = best.min(model.tile_score(reference, &pair.post)?);
                }
                best
            }
        };
        Ok(Some(s))
    };
    let scores = pairs
        .par_iter()
        .map(score_pair)
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreMap {
        rows: post_grid.rows,
        cols: post_grid.cols,
        scores,
        method,
        config_tag: opts.config_tag,
        threshold: None,
    })
}

#[cfg(test)]
mod tests;
