use rand::Rng;

use crate::raster::Tile;

/// Bilinear resampling of a band-major `C×n×n` square to `C×m×m` (half-pixel centres, clamped edges).
pub fn resample_bilinear(values: &[f32], bands: usize, n: usize, m: usize) -> Vec<f32> {
    let axis: Vec<(usize, usize, f64)> = (0..m)
        .map(|i| {
            let src = ((i as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(bands * m * m);
    for b in 0..bands {
        let plane = &values[b * n * n..(b + 1) * n * n];
        for &(y0, y1, fy) in &axis {
            for &(x0, x1, fx) in &axis {
                let p = |y: usize, x: usize| f64::from(plane[y * n + x]);
                let top = p(y0, x0) + (p(y0, x1) - p(y0, x0)) * fx;
                let bot = p(y1, x0) + (p(y1, x1) - p(y1, x0)) * fx;
                out.push((top + (bot - top) * fy) as f32);
            }
        }
    }
    out
}

/// Resample to `round(size·s)` and back to `size`, simulating a coarser ground sampling distance.
pub fn scale_augment_with(tile: &Tile, s: f64) -> Tile {
    let n = tile.size;
    let m = ((n as f64 * s).round() as usize).clamp(1, n);
    if m == n {
        return tile.clone();
    }
    let down = resample_bilinear(&tile.values, tile.bands, n, m);
    let values = resample_bilinear(&down, tile.bands, m, n);
    Tile {
        values,
        ..tile.clone()
    }
}

/// [`scale_augment_with`] at a scale drawn uniformly from `[min, max]`.
pub fn scale_augment<R: Rng + ?Sized>(tile: &Tile, min: f64, max: f64, rng: &mut R) -> Tile {
    let s = if max > min {
        rng.random_range(min..=max)
    } else {
        min
    };
    scale_augment_with(tile, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tile(seed: u64) -> Tile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tile::new(
            0,
            0,
            32,
            4,
            (0..4096).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect(),
        )
    }

    #[test]
    fn unit_scale_is_identity() {
        let t = random_tile(1);
        let out = resample_bilinear(&t.values, 4, 32, 32);
        for (a, b) in out.iter().zip(&t.values) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(scale_augment_with(&t, 1.0), t);
    }

    #[test]
    fn constants_survive_any_scale() {
        let t = Tile::constant(32, 4, 0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let out = scale_augment(&t, 0.3, 1.0, &mut rng);
            assert!(out.values.iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn same_seed_same_output() {
        let t = random_tile(3);
        let a = scale_augment(&t, 0.3, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = scale_augment(&t, 0.3, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 4096);
    }

    #[test]
    fn downscaling_smooths() {
        let t = random_tile(4);
        let out = scale_augment_with(&t, 0.3);
        let var = |v: &[f32]| {
            let m = v.iter().map(|x| f64::from(*x)).sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (f64::from(*x) - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&out.values) < 0.5 * var(&t.values));
    }
}
