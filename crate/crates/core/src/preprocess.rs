//! Two-stage radiometric normalization.
//!
//! 1. Per-band spectral alignment `x_cal = α·x + β`, with (α, β) fitted by
//!    major-axis regression on paired samples.
//! 2. Log compression `x' = ln(max(x_cal, 0) + ε)` followed by robust scaling
//!    `x'' = 2·(x' − p1)/(p99 − p1) − 1`, clipped to [−1, 1], where p1/p99 are
//!    per-band percentiles of `x'` over the training scenes.
//!
//! Fitted parameters are archived as JSON and reused unchanged at inference.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{SceneRaster, Tile};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Linear-interpolated percentile over sorted ranks `(p/100)·(n−1)`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("percentile of non-finite values".into()));
    }
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// As [`percentile`] for input already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Domain(format!("percentile {p} outside [0, 100]")));
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Major-axis (orthogonal) regression of `y` on `x`, returning `(slope, intercept)`.
pub fn fit_ma_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "sample lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Domain(format!(
            "major-axis regression needs at least 3 samples, got {}",
            x.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let denom = (x.len() - 1) as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    sxx /= denom;
    syy /= denom;
    sxy /= denom;
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateFit(
            "zero variance in regression samples".into(),
        ));
    }
    if sxy == 0.0 {
        return Err(Error::DegenerateFit(
            "zero covariance in regression samples".into(),
        ));
    }
    let d = syy - sxx;
    let slope = (d + (d * d + 4.0 * sxy * sxy).sqrt()) / (2.0 * sxy);
    if !slope.is_finite() || slope == 0.0 {
        return Err(Error::DegenerateFit(format!("unusable slope {slope}")));
    }
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAlignParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SpectralAlignParams {
    pub fn identity(bands: usize) -> Self {
        Self {
            alpha: vec![1.0; bands],
            beta: vec![0.0; bands],
        }
    }

    /// Fits one (α, β) per band from paired samples `source[b]` → `reference[b]`.
    pub fn fit(source: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Self> {
        if source.len() != reference.len() || source.is_empty() {
            return Err(Error::Domain(format!(
                "alignment samples cover {} source and {} reference bands",
                source.len(),
                reference.len()
            )));
        }
        let (alpha, beta) = source
            .iter()
            .zip(reference)
            .map(|(x, y)| fit_ma_regression(x, y))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self { alpha, beta })
    }

    pub fn bands(&self) -> usize {
        self.alpha.len()
    }
}

pub fn apply_spectral_alignment(
    scene: &SceneRaster,
    params: &SpectralAlignParams,
) -> Result<SceneRaster> {
    if params.bands() != scene.bands() || params.beta.len() != params.bands() {
        return Err(Error::Domain(format!(
            "alignment has {} bands, scene has {}",
            params.bands(),
            scene.bands()
        )));
    }
    if let Some(a) = params.alpha.iter().find(|a| !a.is_finite() || **a == 0.0) {
        return Err(Error::Domain(format!("invalid gain {a}")));
    }
    let mut out = scene.clone();
    for b in 0..scene.bands() {
        let (a, o) = (params.alpha[b], params.beta[b]);
        for v in out.band_mut(b) {
            if !scene.header.is_nodata(*v) {
                *v = (a * f64::from(*v) + o) as f32;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub epsilon: f64,
    pub p1: Vec<f64>,
    pub p99: Vec<f64>,
}

impl NormalizationParams {
    pub fn bands(&self) -> usize {
        self.p1.len()
    }

    #[inline]
    pub fn log_value(&self, x: f64) -> f64 {
        (x.max(0.0) + self.epsilon).ln()
    }

    /// Scaled value before clipping.
    #[inline]
    pub fn scale_unclipped(&self, band: usize, x: f64) -> f64 {
        let (lo, hi) = (self.p1[band], self.p99[band]);
        2.0 * (self.log_value(x) - lo) / (hi - lo) - 1.0
    }

    #[inline]
    pub fn scale(&self, band: usize, x: f64) -> f64 {
        self.scale_unclipped(band, x).clamp(-1.0, 1.0)
    }

    fn check_bands(&self, bands: usize) -> Result<()> {
        if self.bands() != bands || self.p99.len() != bands {
            return Err(Error::Domain(format!(
                "normalization fitted for {} bands, input has {bands}",
                self.bands()
            )));
        }
        Ok(())
    }
}

/// Per-band 1st/99th percentiles of log reflectance pooled over all training scenes.
pub fn fit_normalization(scenes: &[SceneRaster], epsilon: f64) -> Result<NormalizationParams> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let bands = scenes
        .first()
        .ok_or_else(|| Error::Domain("no training scenes".into()))?
        .bands();
    if scenes.iter().any(|s| s.bands() != bands) {
        return Err(Error::Domain("training scenes differ in band count".into()));
    }
    let mut p1 = Vec::with_capacity(bands);
    let mut p99 = Vec::with_capacity(bands);
    for b in 0..bands {
        let mut logs: Vec<f64> = scenes
            .iter()
            .flat_map(|s| {
                s.band(b)
                    .iter()
                    .filter(|v| !s.header.is_nodata(**v))
                    .map(|v| (f64::from(*v).max(0.0) + epsilon).ln())
            })
            .collect();
        logs.sort_by(f64::total_cmp);
        let lo = percentile_sorted(&logs, 1.0)?;
        let hi = percentile_sorted(&logs, 99.0)?;
        if !(hi > lo) {
            return Err(Error::DegenerateNormalization(format!(
                "band {b} has no spread between its 1st and 99th percentiles ({lo})"
            )));
        }
        p1.push(lo);
        p99.push(hi);
    }
    Ok(NormalizationParams { epsilon, p1, p99 })
}

pub fn apply_lognorm(tile: &Tile, params: &NormalizationParams) -> Result<Tile> {
    params.check_bands(tile.bands)?;
    let n = tile.pixels();
    let mut out = tile.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        *v = params.scale(i / n, f64::from(*v)) as f32;
    }
    Ok(out)
}

/// Normalizes every non-nodata pixel of a scene.
pub fn apply_lognorm_scene(
    scene: &SceneRaster,
    params: &NormalizationParams,
) -> Result<SceneRaster> {
    params.check_bands(scene.bands())?;
    let mut out = scene.clone();
    for b in 0..scene.bands() {
        for v in out.band_mut(b) {
            if !scene.header.is_nodata(*v) {
                *v = params.scale(b, f64::from(*v)) as f32;
            }
        }
    }
    Ok(out)
}

/// Archived preprocessing state: alignment then normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessArchive {
    pub epsilon: f64,
    pub p1: Vec<f64>,
    pub p99: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl PreprocessArchive {
    pub fn new(align: &SpectralAlignParams, norm: &NormalizationParams) -> Self {
        Self {
            epsilon: norm.epsilon,
            p1: norm.p1.clone(),
            p99: norm.p99.clone(),
            alpha: align.alpha.clone(),
            beta: align.beta.clone(),
        }
    }

    pub fn alignment(&self) -> SpectralAlignParams {
        SpectralAlignParams {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
        }
    }

    pub fn normalization(&self) -> NormalizationParams {
        NormalizationParams {
            epsilon: self.epsilon,
            p1: self.p1.clone(),
            p99: self.p99.clone(),
        }
    }

    /// Alignment followed by log-normalization.
    pub fn apply(&self, scene: &SceneRaster) -> Result<SceneRaster> {
        let aligned = apply_spectral_alignment(scene, &self.alignment())?;
        apply_lognorm_scene(&aligned, &self.normalization())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let archive: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let n = archive.p1.len();
        if archive.p99.len() != n || archive.alpha.len() != n || archive.beta.len() != n {
            return Err(Error::Format(
                "preprocess archive band counts differ".into(),
            ));
        }
        Ok(archive)
    }
}

/// Fits normalization on aligned training scenes (order: align → log → percentiles).
pub fn fit_archive(
    training: &[SceneRaster],
    align: &SpectralAlignParams,
    epsilon: f64,
) -> Result<PreprocessArchive> {
    let aligned = training
        .iter()
        .map(|s| apply_spectral_alignment(s, align))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreprocessArchive::new(
        align,
        &fit_normalization(&aligned, epsilon)?,
    ))
}
