//! Scene files, tiling and pre/post pairing.
//!
//! A scene is stored as two files sharing a stem: `<name>.bin` holds raw
//! little-endian `f32` values in band-major then row-major order
//! (`[band][row][col]`), and `<name>.json` holds the header.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::changedet::ScoreMap;
use crate::error::{Error, Result};

pub const DEFAULT_TILE_SIZE: usize = 32;
pub const MIN_TILE_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub band_names: Vec<String>,
    pub nodata_value: Option<f32>,
    pub resolution_m: f64,
}

impl SceneHeader {
    pub fn new(width: usize, height: usize, band_names: Vec<String>) -> Self {
        Self {
            width,
            height,
            bands: band_names.len(),
            band_names,
            nodata_value: None,
            resolution_m: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Format(format!(
                "header dimensions must be positive, got {}x{}x{}",
                self.width, self.height, self.bands
            )));
        }
        if self.band_names.len() != self.bands {
            return Err(Error::Format(format!(
                "{} band names for {} bands",
                self.band_names.len(),
                self.bands
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        match self.nodata_value {
            Some(nd) if nd.is_nan() => v.is_nan(),
            Some(nd) => v == nd,
            None => false,
        }
    }
}

/// Default band names for `bands` channels (red, green, blue, NIR for four).
pub fn default_band_names(bands: usize) -> Vec<String> {
    match bands {
        4 => ["red", "green", "blue", "nir"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        8 => [
            "coastal_blue",
            "blue",
            "green_i",
            "green",
            "yellow",
            "red",
            "red_edge",
            "nir",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        n => (0..n).map(|i| format!("b{}", i + 1)).collect(),
    }
}

/// Multiband reflectance grid, band-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRaster {
    pub header: SceneHeader,
    pub values: Vec<f32>,
}

impl SceneRaster {
    pub fn new(header: SceneHeader, values: Vec<f32>) -> Result<Self> {
        let scene = Self { header, values };
        scene.validate()?;
        Ok(scene)
    }

    pub fn zeros(header: SceneHeader) -> Self {
        let n = header.pixel_count() * header.bands;
        Self {
            header,
            values: vec![0.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        let expected = self.header.pixel_count() * self.header.bands;
        if self.values.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} values, header implies {}",
                self.values.len(),
                expected
            )));
        }
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !v.is_finite() && !self.header.is_nodata(**v))
        {
            return Err(Error::Format(format!("non-finite value {v} in scene")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn bands(&self) -> usize {
        self.header.bands
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.header.height + row) * self.header.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[self.index(band, row, col)]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.header.pixel_count();
        &self.values[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.header.pixel_count();
        &mut self.values[band * n..(band + 1) * n]
    }

    /// True when any band at pixel `(row, col)` holds the nodata sentinel.
    pub fn pixel_is_nodata(&self, row: usize, col: usize) -> bool {
        self.header.nodata_value.is_some()
            && (0..self.bands()).any(|b| self.header.is_nodata(self.get(b, row, col)))
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

/// Reads `<stem>.json` + `<stem>.bin`. `path` may name either file or the bare stem.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneRaster> {
    let (bin, json) = sidecar_paths(path.as_ref());
    let text = fs::read_to_string(&json)?;
    let header: SceneHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    header.validate()?;
    let bytes = fs::read(&bin)?;
    let expected = header.pixel_count() * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {}",
            bin.display(),
            bytes.len(),
            expected
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SceneRaster::new(header, values)
}

pub fn save_scene(scene: &SceneRaster, path: impl AsRef<Path>) -> Result<()> {
    scene.validate()?;
    let (bin, json) = sidecar_paths(path.as_ref());
    let mut payload = Vec::with_capacity(scene.values.len() * 4);
    for v in &scene.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, payload)?;
    fs::write(&json, serde_json::to_string_pretty(&scene.header)?)?;
    Ok(())
}

/// A `size`×`size`×C patch, band-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub bands: usize,
    pub values: Vec<f32>,
    /// Set when any source pixel was nodata; such tiles are never scored.
    pub has_nodata: bool,
}

impl Tile {
    pub fn new(row: usize, col: usize, size: usize, bands: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), size * size * bands, "tile payload length");
        Self {
            row,
            col,
            size,
            bands,
            values,
            has_nodata: false,
        }
    }

    pub fn constant(size: usize, bands: usize, v: f32) -> Self {
        Self::new(0, 0, size, bands, vec![v; size * size * bands])
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    #[inline]
    pub fn get(&self, band: usize, y: usize, x: usize) -> f32 {
        self.values[(band * self.size + y) * self.size + x]
    }

    pub fn same_geometry(&self, other: &Tile) -> bool {
        self.row == other.row
            && self.col == other.col
            && self.size == other.size
            && self.bands == other.bands
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub size: usize,
    pub tiles: Vec<Tile>,
    pub source_header: SceneHeader,
}

impl TileGrid {
    pub fn bands(&self) -> usize {
        self.source_header.bands
    }

    pub fn tile(&self, row: usize, col: usize) -> &Tile {
        &self.tiles[row * self.cols + col]
    }

    /// Band-major raster of the covered `rows·size × cols·size` region.
    pub fn reassemble(&self) -> Vec<f32> {
        let (h, w) = (self.rows * self.size, self.cols * self.size);
        let bands = self.bands();
        let mut out = vec![0.0; h * w * bands];
        for t in &self.tiles {
            for b in 0..bands {
                for y in 0..self.size {
                    let dst = (b * h + t.row * self.size + y) * w + t.col * self.size;
                    let src = (b * self.size + y) * self.size;
                    out[dst..dst + self.size].copy_from_slice(&t.values[src..src + self.size]);
                }
            }
        }
        out
    }
}

/// Partitions a scene into `size`×`size` tiles; partial edge strips are dropped.
pub fn tile_scene(scene: &SceneRaster, size: usize) -> Result<TileGrid> {
    if size < MIN_TILE_SIZE {
        return Err(Error::Domain(format!(
            "tile size {size} below minimum {MIN_TILE_SIZE}"
        )));
    }
    let rows = scene.height() / size;
    let cols = scene.width() / size;
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyGrid(format!(
            "{}x{} scene is smaller than one {size}x{size} tile",
            scene.width(),
            scene.height()
        )));
    }
    let bands = scene.bands();
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut values = Vec::with_capacity(size * size * bands);
            for b in 0..bands {
                for y in 0..size {
                    let start = scene.index(b, r * size + y, c * size);
                    values.extend_from_slice(&scene.values[start..start + size]);
                }
            }
            let has_nodata = scene.header.nodata_value.is_some()
                && values.iter().any(|v| scene.header.is_nodata(*v));
            let mut tile = Tile::new(r, c, size, bands, values);
            tile.has_nodata = has_nodata;
            tiles.push(tile);
        }
    }
    Ok(TileGrid {
        rows,
        cols,
        size,
        tiles,
        source_header: scene.header.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePair {
    pub pre: Tile,
    pub post: Tile,
    /// Earlier acquisitions for time-series scoring (oldest first).
    pub pre_history: Vec<Tile>,
    pub excluded: bool,
}

impl TilePair {
    pub fn new(pre: Tile, post: Tile) -> Self {
        let excluded = pre.has_nodata || post.has_nodata;
        Self {
            pre,
            post,
            pre_history: Vec::new(),
            excluded,
        }
    }

    pub fn row(&self) -> usize {
        self.post.row
    }

    pub fn col(&self) -> usize {
        self.post.col
    }
}

fn same_grid_shape(a: &TileGrid, b: &TileGrid) -> bool {
    a.rows == b.rows && a.cols == b.cols && a.size == b.size && a.bands() == b.bands()
}

/// Pairs co-located tiles in row-major order.
pub fn pair_tiles(
    pre: &TileGrid,
    post: &TileGrid,
    history: Option<&[TileGrid]>,
) -> Result<Vec<TilePair>> {
    let describe = |g: &TileGrid| {
        format!(
            "{}x{} (size {}, {} bands)",
            g.rows,
            g.cols,
            g.size,
            g.bands()
        )
    };
    if !same_grid_shape(pre, post) {
        return Err(Error::Pairing(format!(
            "pre grid {} does not match post grid {}",
            describe(pre),
            describe(post)
        )));
    }
    let history = history.unwrap_or(&[]);
    if let Some(h) = history.iter().find(|h| !same_grid_shape(h, post)) {
        return Err(Error::Pairing(format!(
            "history grid {} does not match post grid {}",
            describe(h),
            describe(post)
        )));
    }
    Ok(pre
        .tiles
        .iter()
        .zip(&post.tiles)
        .enumerate()
        .map(|(i, (a, b))| {
            let mut pair = TilePair::new(a.clone(), b.clone());
            pair.pre_history = history.iter().map(|h| h.tiles[i].clone()).collect();
            pair.excluded |= pair.pre_history.iter().any(|t| t.has_nodata);
            pair
        })
        .collect())
}

/// Maps scores linearly onto 0..=255 (min → 0, max → 255); a constant map is all 128.
pub fn score_to_gray(scores: &[Option<f64>]) -> Vec<u8> {
    let present = scores.iter().flatten().copied();
    let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    scores
        .iter()
        .map(|s| match s {
            None => 0,
            Some(_) if hi <= lo => 128,
            Some(s) => (255.0 * (s - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8,
        })
        .collect()
}

/// Binary P5 greyscale image of a score map, one pixel per tile.
pub fn export_pgm(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    if map.scores.is_empty() || map.scores.iter().all(Option::is_none) {
        return Err(Error::Domain("cannot export an empty score map".into()));
    }
    let pixels = score_to_gray(&map.scores);
    let mut f = fs::File::create(path.as_ref())?;
    write!(f, "P5\n{} {}\n255\n", map.cols, map.rows)?;
    f.write_all(&pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::changedet::{ConfigTag, Method};
    use rand::{Rng, SeedableRng};

    fn random_scene(w: usize, h: usize, bands: usize, seed: u64) -> SceneRaster {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let header = SceneHeader::new(w, h, default_band_names(bands));
        let values = (0..w * h * bands).map(|_| rng.random::<f32>()).collect();
        SceneRaster::new(header, values).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let scene = random_scene(64, 64, 4, 1);
        save_scene(&scene, dir.path().join("s")).unwrap();
        let back = load_scene(dir.path().join("s.bin")).unwrap();
        assert_eq!(back.header, scene.header);
        let bits = |s: &SceneRaster| s.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&scene));
    }

    #[test]
    fn payload_length_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let scene = random_scene(8, 8, 3, 2);
        save_scene(&scene, dir.path().join("s")).unwrap();
        let mut header = scene.header.clone();
        header.bands = 4;
        header.band_names.push("extra".into());
        fs::write(
            dir.path().join("s.json"),
            serde_json::to_string(&header).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load_scene(dir.path().join("s")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn corrupt_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.json"), "{not json").unwrap();
        fs::write(dir.path().join("s.bin"), [0u8; 16]).unwrap();
        assert!(matches!(
            load_scene(dir.path().join("s")),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn nodata_sentinel_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut scene = random_scene(16, 16, 4, 3);
        scene.header.nodata_value = Some(-9999.0);
        scene.values[5] = -9999.0;
        save_scene(&scene, dir.path().join("s")).unwrap();
        let back = load_scene(dir.path().join("s")).unwrap();
        assert_eq!(back.values[5], -9999.0);
        assert_eq!(back.header.nodata_value, Some(-9999.0));
    }

    #[test]
    fn small_scene_payload_is_sixteen_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let header = SceneHeader::new(2, 2, vec!["b1".into()]);
        let scene = SceneRaster::new(header, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        save_scene(&scene, dir.path().join("s")).unwrap();
        let bytes = fs::read(dir.path().join("s.bin")).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[4..8], &0.5f32.to_le_bytes());
    }

    #[test]
    fn empty_band_names_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut scene = random_scene(4, 4, 1, 4);
        scene.header.band_names.clear();
        assert!(save_scene(&scene, dir.path().join("s")).is_err());
        assert!(!dir.path().join("s.bin").exists());
    }

    #[test]
    fn overwrite_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&random_scene(8, 8, 1, 5), dir.path().join("s")).unwrap();
        let second = random_scene(8, 8, 1, 6);
        save_scene(&second, dir.path().join("s")).unwrap();
        assert_eq!(load_scene(dir.path().join("s")).unwrap(), second);
    }

    #[test]
    fn tiling_counts_and_edge_policy() {
        assert_eq!(
            tile_scene(&random_scene(96, 96, 4, 7), 32)
                .unwrap()
                .tiles
                .len(),
            9
        );
        let g = tile_scene(&random_scene(100, 100, 4, 8), 32).unwrap();
        assert_eq!((g.rows, g.cols), (3, 3));
        assert!(matches!(
            tile_scene(&random_scene(20, 20, 4, 9), 32),
            Err(Error::EmptyGrid(_))
        ));
    }

    #[test]
    fn reassembly_reproduces_covered_region() {
        let scene = random_scene(100, 70, 2, 10);
        let g = tile_scene(&scene, 16).unwrap();
        let out = g.reassemble();
        let (h, w) = (g.rows * 16, g.cols * 16);
        for b in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(out[(b * h + y) * w + x], scene.get(b, y, x));
                }
            }
        }
    }

    #[test]
    fn nodata_tiles_are_flagged() {
        let mut scene = random_scene(64, 64, 4, 11);
        scene.header.nodata_value = Some(-1.0);
        let idx = scene.index(2, 40, 5);
        scene.values[idx] = -1.0;
        let g = tile_scene(&scene, 32).unwrap();
        let flagged: Vec<bool> = g.tiles.iter().map(|t| t.has_nodata).collect();
        assert_eq!(flagged, vec![false, false, true, false]);
    }

    #[test]
    fn pairing_counts_and_mismatch() {
        let a = tile_scene(&random_scene(96, 96, 4, 12), 32).unwrap();
        let b = tile_scene(&random_scene(96, 96, 4, 13), 32).unwrap();
        assert_eq!(pair_tiles(&a, &b, None).unwrap().len(), 9);
        let c = tile_scene(&random_scene(128, 96, 4, 14), 32).unwrap();
        assert!(matches!(pair_tiles(&a, &c, None), Err(Error::Pairing(_))));
        let hist = vec![a.clone(), a.clone(), a.clone()];
        let pairs = pair_tiles(&a, &b, Some(&hist)).unwrap();
        assert!(pairs.iter().all(|p| p.pre_history.len() == 3));
    }

    fn map(scores: Vec<Option<f64>>) -> ScoreMap {
        ScoreMap {
            rows: 1,
            cols: scores.len(),
            scores,
            method: Method::Cva,
            config_tag: ConfigTag::FourBand,
            threshold: None,
        }
    }

    #[test]
    fn gray_mapping_endpoints_and_degenerate_range() {
        assert_eq!(score_to_gray(&[Some(0.0), Some(1.0)]), vec![0, 255]);
        assert_eq!(score_to_gray(&[Some(0.7), Some(0.7)]), vec![128, 128]);
        // 127.5 rounds half away from zero
        assert_eq!(
            score_to_gray(&[Some(0.0), Some(0.5), Some(1.0)]),
            vec![0, 128, 255]
        );
    }

    #[test]
    fn pgm_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        export_pgm(&map(vec![Some(0.0), Some(1.0)]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes, b"P5\n2 1\n255\n\x00\xff");
        assert!(export_pgm(&map(vec![]), &p).is_err());
    }
}
