//! Seeded synthetic scene pairs with planted burn scars and nuisance perturbations.
//!
//! A pair is built from one smooth multiband background field. The post scene
//! receives elliptical burns (visible and NIR darkening plus char texture) and
//! then global nuisances: per-band gain, integer misregistration and sensor
//! noise. Tile labels follow from the exact burned-pixel masks.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{default_band_names, SceneHeader, SceneRaster, DEFAULT_TILE_SIZE};
use crate::rng::{child_seed, Rng};

pub const NODATA: f32 = -9999.0;
pub const CHAR_TEXTURE_SIGMA: f64 = 0.02;
pub const REFLECTANCE_RANGE: (f32, f32) = (0.05, 0.6);
const MIN_BURN_AREA: f64 = 100.0;
const PLACEMENT_TRIES: usize = 400;
const PREVALENCE_SLACK_TILES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub n_burns: usize,
    pub burn_visible_gain: f64,
    pub burn_nir_gain: f64,
    pub nuisance_gain_range: [f64; 2],
    pub noise_sigma: f64,
    pub misregistration_px: usize,
    pub target_prevalence: f64,
    pub label_coverage_theta: f64,
    pub tile_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            bands: 4,
            n_burns: 3,
            burn_visible_gain: 0.4,
            burn_nir_gain: 0.3,
            nuisance_gain_range: [0.9, 1.1],
            noise_sigma: 0.01,
            misregistration_px: 1,
            target_prevalence: 0.08,
            label_coverage_theta: 0.25,
            tile_size: DEFAULT_TILE_SIZE,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Strong burns with mild nuisance: the smoke benchmark setting.
    pub fn easy_burn() -> Self {
        Self {
            nuisance_gain_range: [0.97, 1.03],
            noise_sigma: 0.005,
            misregistration_px: 0,
            ..Self::default()
        }
    }

    /// Default burns under strong radiometric and geometric nuisance.
    pub fn heavy() -> Self {
        Self {
            nuisance_gain_range: [0.8, 1.2],
            noise_sigma: 0.02,
            misregistration_px: 2,
            ..Self::default()
        }
    }

    /// Burns and nuisances switched off; post equals pre.
    pub fn quiet() -> Self {
        Self {
            n_burns: 0,
            nuisance_gain_range: [1.0, 1.0],
            noise_sigma: 0.0,
            misregistration_px: 0,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "easy-burn" => Ok(Self::easy_burn()),
            "heavy" => Ok(Self::heavy()),
            "quiet" => Ok(Self::quiet()),
            other => Err(Error::Usage(format!("unknown synth preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands != 4 && self.bands != 8 {
            return Err(Error::Domain(format!(
                "bands must be 4 or 8, got {}",
                self.bands
            )));
        }
        if self.tile_size == 0 || self.width < self.tile_size || self.height < self.tile_size {
            return Err(Error::Domain(format!(
                "scene {}x{} cannot hold a {}-pixel tile",
                self.width, self.height, self.tile_size
            )));
        }
        for (name, g) in [
            ("burn_visible_gain", self.burn_visible_gain),
            ("burn_nir_gain", self.burn_nir_gain),
        ] {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Domain(format!("{name} must be in (0, 1], got {g}")));
            }
        }
        let [lo, hi] = self.nuisance_gain_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Domain(format!(
                "invalid nuisance gain range [{lo}, {hi}]"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.misregistration_px > 2 {
            return Err(Error::Domain(format!(
                "misregistration_px must be in 0..=2, got {}",
                self.misregistration_px
            )));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence <= 0.10) {
            return Err(Error::Domain(format!(
                "target_prevalence must be in (0, 0.10], got {}",
                self.target_prevalence
            )));
        }
        if !(self.label_coverage_theta > 0.0 && self.label_coverage_theta <= 1.0) {
            return Err(Error::Domain(format!(
                "label_coverage_theta must be in (0, 1], got {}",
                self.label_coverage_theta
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.tile_size, self.width / self.tile_size)
    }

    pub fn target_positive_tiles(&self) -> usize {
        let (r, c) = self.grid();
        (self.target_prevalence * (r * c) as f64).round() as usize
    }

    fn header(&self) -> SceneHeader {
        SceneHeader::new(self.width, self.height, default_band_names(self.bands))
    }

    fn stream(&self, index: u64) -> Rng {
        Rng::seed_from_u64(child_seed(self.seed, "synth", index))
    }
}

/// Ground truth for one scene pair, one entry per tile in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub rows: usize,
    pub cols: usize,
    pub theta: f64,
    pub labels: Vec<bool>,
    pub burned_fraction: Vec<f64>,
}

impl SceneLabels {
    pub fn from_mask(
        mask: &[bool],
        width: usize,
        height: usize,
        tile_size: usize,
        theta: f64,
    ) -> Self {
        let rows = height / tile_size;
        let cols = width / tile_size;
        let area = (tile_size * tile_size) as f64;
        let mut burned_fraction = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut n = 0usize;
                for y in r * tile_size..(r + 1) * tile_size {
                    let row = &mask[y * width + c * tile_size..y * width + (c + 1) * tile_size];
                    n += row.iter().filter(|m| **m).count();
                }
                burned_fraction.push(n as f64 / area);
            }
        }
        let labels = burned_fraction.iter().map(|f| *f >= theta).collect();
        Self {
            rows,
            cols,
            theta,
            labels,
            burned_fraction,
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn prevalence(&self) -> f64 {
        self.positives() as f64 / self.labels.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows * self.cols;
        if self.labels.len() != n || self.burned_fraction.len() != n {
            return Err(Error::Format(format!(
                "labels for a {}x{} grid must have {n} entries, got {} and {}",
                self.rows,
                self.cols,
                self.labels.len(),
                self.burned_fraction.len()
            )));
        }
        for (l, f) in self.labels.iter().zip(&self.burned_fraction) {
            if !(0.0..=1.0).contains(f) || *l != (*f >= self.theta) {
                return Err(Error::Format(format!(
                    "label {l} inconsistent with burned fraction {f} at theta {}",
                    self.theta
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let labels: Self = serde_json::from_slice(&fs::read(path)?)?;
        labels.validate()?;
        Ok(labels)
    }
}

/// Rotated ellipse in pixel coordinates; a pixel belongs to it when its centre does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_major * self.semi_minor
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hx = ((self.semi_major * c).powi(2) + (self.semi_minor * s).powi(2)).sqrt();
        let hy = ((self.semi_major * s).powi(2) + (self.semi_minor * c).powi(2)).sqrt();
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }

    pub fn rasterize(&self, width: usize, height: usize) -> Result<Vec<bool>> {
        let (x0, y0, x1, y1) = self.bounds();
        let valid = self.semi_major > 0.0
            && self.semi_minor > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite();
        if !valid || x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
            return Err(Error::Domain(format!(
                "ellipse {self:?} is not inside a {width}x{height} scene"
            )));
        }
        let mut mask = vec![false; width * height];
        for y in y0.floor() as usize..(y1.ceil() as usize).min(height) {
            for x in x0.floor() as usize..(x1.ceil() as usize).min(width) {
                mask[y * width + x] = self.contains(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
        Ok(mask)
    }
}

fn is_nir(name: &str) -> bool {
    name.eq_ignore_ascii_case("nir")
}

/// Darkens the scene inside `region` and returns the burned-pixel mask.
///
/// Visible bands are multiplied by `burn_visible_gain` and the NIR band by
/// `burn_nir_gain`; every darkened band then receives char texture noise.
/// A band whose gain is exactly 1 is left untouched.
pub fn inject_burn(
    scene: &SceneRaster,
    region: &Ellipse,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Result<(SceneRaster, Vec<bool>)> {
    let (w, h) = (scene.width(), scene.height());
    let mask = region.rasterize(w, h)?;
    let mut out = scene.clone();
    let texture = Normal::new(0.0, CHAR_TEXTURE_SIGMA).expect("valid sigma");
    for b in 0..scene.bands() {
        let gain = if is_nir(&scene.header.band_names[b]) {
            cfg.burn_nir_gain
        } else {
            cfg.burn_visible_gain
        };
        if gain == 1.0 {
            continue;
        }
        let band = out.band_mut(b);
        for (p, burned) in mask.iter().enumerate() {
            if !*burned || scene.header.is_nodata(band[p]) {
                continue;
            }
            let v = f64::from(band[p]) * gain + texture.sample(rng);
            band[p] = v.max(0.001) as f32;
        }
    }
    Ok((out, mask))
}

/// Multiplies every valid value of band `b` by `gains[b]`.
pub fn apply_gain(scene: &SceneRaster, gains: &[f64]) -> Result<SceneRaster> {
    if gains.len() != scene.bands() {
        return Err(Error::Shape(format!(
            "{} gains for {} bands",
            gains.len(),
            scene.bands()
        )));
    }
    let mut out = scene.clone();
    for (b, g) in gains.iter().enumerate() {
        let nodata = scene.header.nodata_value;
        for v in out.band_mut(b) {
            if nodata != Some(*v) {
                *v = (f64::from(*v) * g) as f32;
            }
        }
    }
    Ok(out)
}

/// Shifts content by `(dy, dx)` pixels; uncovered rows and columns become nodata.
pub fn translate(scene: &SceneRaster, dy: i64, dx: i64) -> SceneRaster {
    if dy == 0 && dx == 0 {
        return scene.clone();
    }
    let (w, h) = (scene.width() as i64, scene.height() as i64);
    let mut out = scene.clone();
    let nodata = *out.header.nodata_value.get_or_insert(NODATA);
    for b in 0..scene.bands() {
        let src = scene.band(b);
        let dst = out.band_mut(b);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = (y - dy, x - dx);
                dst[(y * w + x) as usize] = if (0..h).contains(&sy) && (0..w).contains(&sx) {
                    src[(sy * w + sx) as usize]
                } else {
                    nodata
                };
            }
        }
    }
    out
}

/// Global per-band gain, then integer misregistration, then additive sensor noise.
pub fn inject_nuisance(scene: &SceneRaster, cfg: &SynthConfig, rng: &mut Rng) -> SceneRaster {
    let [lo, hi] = cfg.nuisance_gain_range;
    let gains: Vec<f64> = (0..scene.bands())
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    let m = cfg.misregistration_px as i64;
    let dy = rng.random_range(-m..=m);
    let dx = rng.random_range(-m..=m);
    let gained = apply_gain(scene, &gains).expect("one gain per band");
    let mut out = translate(&gained, dy, dx);
    if cfg.noise_sigma > 0.0 {
        let nodata = out.header.nodata_value;
        for v in out.values.iter_mut() {
            if nodata != Some(*v) {
                let n: f64 = rng.sample(StandardNormal);
                *v = (f64::from(*v) + cfg.noise_sigma * n).max(0.0) as f32;
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let reflect = |i: i64, n: i64| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[y * w + reflect(x as i64 + j as i64 - r, w as i64)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect(y as i64 + j as i64 - r, h as i64) * w + x])
                .sum();
        }
    }
    out
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Smooth, spatially structured unit-variance field mixing a coarse and a fine scale.
fn smooth_field(w: usize, h: usize, rng: &mut Rng) -> Vec<f64> {
    let mut coarse: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    let mut fine: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    coarse = blur(&coarse, w, h, 8.0);
    fine = blur(&fine, w, h, 1.5);
    standardize(&mut coarse);
    standardize(&mut fine);
    let mut f: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| c + 0.5 * f).collect();
    standardize(&mut f);
    f
}

fn band_mean(name: &str) -> f64 {
    match name {
        "coastal_blue" => 0.10,
        "blue" => 0.11,
        "green_i" => 0.12,
        "green" => 0.13,
        "yellow" => 0.14,
        "red" => 0.15,
        "red_edge" => 0.24,
        "nir" => 0.32,
        _ => 0.15,
    }
}

const SHARED_LOADING: f64 = 0.85;
const RELATIVE_SPREAD: f64 = 0.3;

/// Background reflectance drawn from `rng`: one shared field plus one field per band.
pub fn background_scene(cfg: &SynthConfig, rng: &mut Rng) -> SceneRaster {
    let header = cfg.header();
    let (w, h) = (cfg.width, cfg.height);
    let shared = smooth_field(w, h, rng);
    let own_loading = (1.0 - SHARED_LOADING * SHARED_LOADING).sqrt();
    let mut values = Vec::with_capacity(w * h * cfg.bands);
    for name in &header.band_names {
        let own = smooth_field(w, h, rng);
        let mean = band_mean(name);
        values.extend(shared.iter().zip(&own).map(|(s, o)| {
            let z = SHARED_LOADING * s + own_loading * o;
            ((mean * (1.0 + RELATIVE_SPREAD * z)) as f32)
                .clamp(REFLECTANCE_RANGE.0, REFLECTANCE_RANGE.1)
        }));
    }
    SceneRaster { header, values }
}

/// Nominal (burn-free) scene `index` from the same landscape distribution as the pairs.
pub fn gen_nominal_scene(cfg: &SynthConfig, index: u64) -> Result<SceneRaster> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(child_seed(cfg.seed, "synth.nominal", index));
    Ok(background_scene(cfg, &mut rng))
}

/// Earlier acquisitions of the pre scene: the same background under fresh nuisance draws.
pub fn gen_pre_history(cfg: &SynthConfig, count: usize) -> Result<Vec<SceneRaster>> {
    cfg.validate()?;
    let base = background_scene(cfg, &mut cfg.stream(0));
    Ok((0..count)
        .map(|i| {
            let mut rng = Rng::seed_from_u64(child_seed(cfg.seed, "synth.history", i as u64));
            inject_nuisance(&base, cfg, &mut rng)
        })
        .collect())
}

fn count_positives(mask: &[bool], cfg: &SynthConfig) -> usize {
    SceneLabels::from_mask(
        mask,
        cfg.width,
        cfg.height,
        cfg.tile_size,
        cfg.label_coverage_theta,
    )
    .positives()
}

/// Draws burn ellipses whose union hits the target positive-tile count.
fn place_burns(cfg: &SynthConfig, rng: &mut Rng) -> Result<Vec<Ellipse>> {
    let target = cfg.target_positive_tiles();
    let tile_area = (cfg.tile_size * cfg.tile_size) as f64;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut union = vec![false; cfg.width * cfg.height];
    let mut placed = Vec::with_capacity(cfg.n_burns);
    for k in 0..cfg.n_burns {
        let left = cfg.n_burns - k;
        let current = count_positives(&union, cfg);
        let wanted = (target.saturating_sub(current) as f64 / left as f64).max(0.3);
        let last = left == 1;
        let mut accepted = None;
        for attempt in 0..PLACEMENT_TRIES {
            let slack = if attempt < PLACEMENT_TRIES / 2 {
                1
            } else {
                PREVALENCE_SLACK_TILES
            };
            let area = (wanted * tile_area * rng.random_range(0.8..1.6)).max(MIN_BURN_AREA);
            let aspect: f64 = rng.random_range(1.0..2.0);
            let semi_minor = (area / (std::f64::consts::PI * aspect)).sqrt();
            let semi_major = semi_minor * aspect;
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let margin = semi_major + 1.0;
            if 2.0 * margin >= w.min(h) {
                continue;
            }
            let e = Ellipse {
                cx: rng.random_range(margin..w - margin),
                cy: rng.random_range(margin..h - margin),
                semi_major,
                semi_minor,
                angle,
            };
            let mask = e.rasterize(cfg.width, cfg.height)?;
            if mask.iter().zip(&union).any(|(m, u)| *m && *u) {
                continue;
            }
            let merged: Vec<bool> = mask.iter().zip(&union).map(|(m, u)| *m || *u).collect();
            let pos = count_positives(&merged, cfg);
            if pos > target + slack || (last && pos + slack < target) {
                continue;
            }
            accepted = Some((e, merged));
            break;
        }
        let Some((e, merged)) = accepted else {
            return Err(Error::Placement(format!(
                "could not place burn {} of {} within {} +/- {} positive tiles",
                k + 1,
                cfg.n_burns,
                target,
                PREVALENCE_SLACK_TILES
            )));
        };
        union = merged;
        placed.push(e);
    }
    Ok(placed)
}

/// A generated pair with its ground truth and the burns that were planted.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub pre: SceneRaster,
    pub post: SceneRaster,
    pub labels: SceneLabels,
    pub burns: Vec<Ellipse>,
}

pub fn gen_scene_pair(cfg: &SynthConfig) -> Result<SynthPair> {
    cfg.validate()?;
    let pre = background_scene(cfg, &mut cfg.stream(0));
    let burns = place_burns(cfg, &mut cfg.stream(1))?;
    let mut texture_rng = cfg.stream(2);
    let mut post = pre.clone();
    let mut union = vec![false; cfg.width * cfg.height];
    for e in &burns {
        let (burned, mask) = inject_burn(&post, e, cfg, &mut texture_rng)?;
        post = burned;
        union.iter_mut().zip(&mask).for_each(|(u, m)| *u |= *m);
    }
    let post = inject_nuisance(&post, cfg, &mut cfg.stream(3));
    let labels = SceneLabels::from_mask(
        &union,
        cfg.width,
        cfg.height,
        cfg.tile_size,
        cfg.label_coverage_theta,
    );
    Ok(SynthPair {
        pre,
        post,
        labels,
        burns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 128,
            height: 128,
            ..SynthConfig::default()
        }
    }

    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let mb = b.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (f64::from(*x) - ma, f64::from(*y) - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn quiet_config_gives_identical_scenes() {
        let p = gen_scene_pair(&SynthConfig {
            width: 128,
            height: 128,
            ..SynthConfig::quiet()
        })
        .unwrap();
        assert_eq!(p.pre, p.post);
        assert!(p.labels.labels.iter().all(|l| !l));
        assert!(p.burns.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_scene_pair(&small()).unwrap();
        let b = gen_scene_pair(&small()).unwrap();
        assert_eq!(a.pre.values, b.pre.values);
        assert_eq!(a.post.values, b.post.values);
        assert_eq!(a.labels, b.labels);
        let c = gen_scene_pair(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.pre.values, c.pre.values);
    }

    #[test]
    fn background_range_and_band_correlation() {
        for bands in [4, 8] {
            let cfg = SynthConfig { bands, ..small() };
            let s = background_scene(&cfg, &mut cfg.stream(0));
            assert!(s.values.iter().all(|v| (0.05..=0.6).contains(v)));
            for i in 0..bands {
                for j in i + 1..bands {
                    let r = pearson(s.band(i), s.band(j));
                    assert!(r >= 0.5, "bands {i},{j}: {r}");
                }
            }
        }
    }

    #[test]
    fn default_prevalence_hits_target() {
        for seed in 0..10 {
            let cfg = SynthConfig {
                seed,
                ..SynthConfig::default()
            };
            let p = gen_scene_pair(&cfg).unwrap();
            let prev = p.labels.prevalence();
            assert!((0.05..=0.10).contains(&prev), "seed {seed}: {prev}");
            p.labels.validate().unwrap();
        }
    }

    #[test]
    fn impossible_placement_is_reported() {
        let cfg = SynthConfig {
            n_burns: 60,
            target_prevalence: 0.02,
            ..SynthConfig::default()
        };
        assert!(matches!(gen_scene_pair(&cfg), Err(Error::Placement(_))));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        for cfg in [
            SynthConfig {
                target_prevalence: 0.5,
                ..SynthConfig::default()
            },
            SynthConfig {
                bands: 3,
                ..SynthConfig::default()
            },
            SynthConfig {
                burn_nir_gain: 0.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                misregistration_px: 3,
                ..SynthConfig::default()
            },
            SynthConfig {
                nuisance_gain_range: [1.2, 1.0],
                ..SynthConfig::default()
            },
        ] {
            assert!(
                matches!(gen_scene_pair(&cfg), Err(Error::Domain(_))),
                "{cfg:?}"
            );
        }
    }

    fn flat(v: f32) -> SceneRaster {
        let header = SceneHeader::new(64, 64, default_band_names(4));
        SceneRaster {
            values: vec![v; 64 * 64 * 4],
            header,
        }
    }

    #[test]
    fn burn_gain_arithmetic_and_identity() {
        let e = Ellipse {
            cx: 32.0,
            cy: 32.0,
            semi_major: 12.0,
            semi_minor: 8.0,
            angle: 0.4,
        };
        let unit = SynthConfig {
            burn_visible_gain: 1.0,
            burn_nir_gain: 1.0,
            ..SynthConfig::default()
        };
        let scene = flat(0.5);
        let (out, mask) = inject_burn(&scene, &e, &unit, &mut unit.stream(9)).unwrap();
        assert_eq!(out, scene);
        assert!(mask.iter().any(|m| *m));

        let cfg = SynthConfig::default();
        let (out, mask) = inject_burn(&scene, &e, &cfg, &mut cfg.stream(9)).unwrap();
        let inside: Vec<usize> = (0..mask.len()).filter(|p| mask[*p]).collect();
        let mean = |b: usize| {
            inside
                .iter()
                .map(|p| f64::from(out.band(b)[*p]))
                .sum::<f64>()
                / inside.len() as f64
        };
        assert!(
            (mean(0) - 0.2).abs() < 3.0 * CHAR_TEXTURE_SIGMA / (inside.len() as f64).sqrt() + 1e-3
        );
        assert!(
            (mean(3) - 0.15).abs() < 3.0 * CHAR_TEXTURE_SIGMA / (inside.len() as f64).sqrt() + 1e-3
        );
        for p in (0..mask.len()).filter(|p| !mask[*p]) {
            assert!((0..4).all(|b| out.band(b)[p] == 0.5));
        }
    }

    #[test]
    fn burn_mask_area_matches_ellipse() {
        let cfg = SynthConfig::default();
        let mut rng = cfg.stream(4);
        for _ in 0..50 {
            let semi_minor = rng.random_range(8.0..20.0);
            let e = Ellipse {
                cx: 128.0 + rng.random_range(-10.0..10.0),
                cy: 128.0 + rng.random_range(-10.0..10.0),
                semi_major: semi_minor * rng.random_range(1.0..2.0),
                semi_minor,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            };
            let n = e
                .rasterize(256, 256)
                .unwrap()
                .iter()
                .filter(|m| **m)
                .count() as f64;
            assert!(
                (n / e.area() - 1.0).abs() <= 0.02,
                "{e:?}: {n} vs {}",
                e.area()
            );
        }
    }

    #[test]
    fn burn_outside_scene_is_domain_error() {
        let e = Ellipse {
            cx: 60.0,
            cy: 32.0,
            semi_major: 10.0,
            semi_minor: 5.0,
            angle: 0.0,
        };
        let cfg = SynthConfig::default();
        assert!(matches!(
            inject_burn(&flat(0.3), &e, &cfg, &mut cfg.stream(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn burns_lower_nir_mean() {
        let cfg = SynthConfig {
            noise_sigma: 0.01,
            misregistration_px: 0,
            ..SynthConfig::default()
        };
        let p = gen_scene_pair(&cfg).unwrap();
        let nir = cfg.bands - 1;
        for e in &p.burns {
            let mask = e.rasterize(cfg.width, cfg.height).unwrap();
            let idx: Vec<usize> = (0..mask.len()).filter(|i| mask[*i]).collect();
            assert!(idx.len() >= 100);
            let mean = |s: &SceneRaster| {
                idx.iter().map(|i| f64::from(s.band(nir)[*i])).sum::<f64>() / idx.len() as f64
            };
            assert!(mean(&p.post) < mean(&p.pre));
        }
    }

    #[test]
    fn nuisance_identity_gain_and_shift() {
        let cfg = SynthConfig::default();
        let scene = background_scene(
            &SynthConfig {
                width: 64,
                height: 64,
                ..cfg.clone()
            },
            &mut cfg.stream(0),
        );
        let off = SynthConfig {
            nuisance_gain_range: [1.0, 1.0],
            misregistration_px: 0,
            noise_sigma: 0.0,
            ..cfg.clone()
        };
        assert_eq!(inject_nuisance(&scene, &off, &mut cfg.stream(1)), scene);

        let gained = apply_gain(&scene, &[1.1; 4]).unwrap();
        for (a, b) in gained.values.iter().zip(&scene.values) {
            assert_eq!(*a, (f64::from(*b) * 1.1) as f32);
        }

        let shifted = translate(&scene, 2, 2);
        assert_eq!(shifted.header.nodata_value, Some(NODATA));
        for b in 0..4 {
            for y in 0..64 {
                for x in 0..64 {
                    let v = shifted.get(b, y, x);
                    if y < 2 || x < 2 {
                        assert_eq!(v, NODATA);
                    } else {
                        assert_eq!(v, scene.get(b, y - 2, x - 2));
                    }
                }
            }
        }
        let back = translate(&scene, -2, 0);
        assert!((0..64).all(|x| back.get(0, 63, x) == NODATA && back.get(0, 62, x) == NODATA));
        assert_eq!(back.get(1, 0, 5), scene.get(1, 2, 5));
    }

    #[test]
    fn pre_history_varies_around_the_background() {
        let cfg = SynthConfig {
            misregistration_px: 0,
            ..small()
        };
        let hist = gen_pre_history(&cfg, 3).unwrap();
        let p = gen_scene_pair(&cfg).unwrap();
        assert_eq!(hist.len(), 3);
        assert_ne!(hist[0].values, hist[1].values);
        let r = pearson(&hist[0].values, &p.pre.values);
        assert!(r > 0.9, "{r}");
    }

    #[test]
    fn labels_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = gen_scene_pair(&small()).unwrap();
        let path = dir.path().join("labels.json");
        p.labels.save(&path).unwrap();
        assert_eq!(SceneLabels::load(&path).unwrap(), p.labels);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["rows", "cols", "theta", "labels", "burned_fraction"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
