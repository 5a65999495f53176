use super::*;
use crate::raster::{SceneHeader, SceneRaster};
use crate::vae::{EncoderConfig, TrainConfig, Vae};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_tile(bands: usize, seed: u64) -> Tile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tile::new(
        0,
        0,
        32,
        bands,
        (0..32 * 32 * bands)
            .map(|_| rng.random::<f32>() * 2.0 - 1.0)
            .collect(),
    )
}

fn small_checkpoint(bands: usize) -> Checkpoint<f32> {
    let config = EncoderConfig {
        stage_channels: vec![4, 4, 8, 8],
        ..EncoderConfig::with_bands(bands)
    };
    Checkpoint {
        vae: Vae::new(config, 5).unwrap(),
        train_config: TrainConfig::default(),
        history: Vec::new(),
        best_epoch: None,
    }
}

/// Correlated pre/post pixel arrays (row-major n×c).
fn correlated_pixels(n: usize, c: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * c);
    let mut y = Vec::with_capacity(n * c);
    for _ in 0..n {
        let common: f64 = rng.sample(StandardNormal);
        for b in 0..c {
            let own: f64 = rng.sample(StandardNormal);
            let xv = 0.3 + 0.1 * (common + 0.5 * own);
            let noise: f64 = rng.sample(StandardNormal);
            x.push(xv);
            y.push(0.8 * xv + 0.05 * b as f64 + 0.02 * noise);
        }
    }
    (x, y)
}

fn scene_from_pixels(px: &[f64], w: usize, h: usize, c: usize) -> SceneRaster {
    let mut s = SceneRaster::zeros(SceneHeader::new(w, h, crate::raster::default_band_names(c)));
    for p in 0..w * h {
        for b in 0..c {
            s.values[b * w * h + p] = px[p * c + b] as f32;
        }
    }
    s
}

#[test]
fn cosine_distance_examples() {
    assert_eq!(
        cosine_distance(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap(),
        0.0
    );
    assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    let d = cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
    assert!((d - 0.29289).abs() < 1e-5);
    assert!(matches!(
        cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
        Err(Error::DegenerateVector(_))
    ));
}

#[test]
fn cosine_distance_is_zero_for_identical_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let u: Vec<f64> = (0..128).map(|_| rng.random::<f64>() - 0.5).collect();
        assert_eq!(cosine_distance(&u, &u).unwrap(), 0.0);
    }
}

#[test]
fn pixel_cosine_examples() {
    let t = random_tile(4, 2);
    assert_eq!(
        pixel_cosine_score(&TilePair::new(t.clone(), t.clone())).unwrap(),
        0.0
    );

    // doubling in offset space: (x + 1)·2 − 1
    let doubled = Tile {
        values: t.values.iter().map(|v| (v + 1.0) * 2.0 - 1.0).collect(),
        ..t.clone()
    };
    assert!(pixel_cosine_score(&TilePair::new(t.clone(), doubled)).unwrap() < 1e-7);

    let pre = Tile::new(0, 0, 1, 4, vec![1.0, 1.0, 1.0, 1.0]);
    let post = Tile::new(0, 0, 1, 4, vec![1.0, 1.0, 1.0, 0.0]);
    let expected = 1.0 - 14.0 / (4.0 * (4.0f64 * 3.25).sqrt() * 2.0) * 2.0;
    let got = pixel_cosine_score(&TilePair::new(pre, post)).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");

    let dead = Tile::constant(32, 4, -1.0);
    assert!(matches!(
        pixel_cosine_score(&TilePair::new(dead, t)),
        Err(Error::DegenerateVector(_))
    ));
}

#[test]
fn cva_examples() {
    let t = random_tile(4, 3);
    assert_eq!(
        cva_score(&TilePair::new(t.clone(), t.clone()), CvaAggregate::Mean).unwrap(),
        0.0
    );

    let pre = Tile::constant(32, 4, 0.0);
    let post = Tile::constant(32, 4, 1.0);
    assert_eq!(
        cva_score(&TilePair::new(pre, post), CvaAggregate::Mean).unwrap(),
        2.0
    );

    let shift = |tile: &Tile| Tile {
        values: tile.values.iter().map(|v| v + 0.25).collect(),
        ..tile.clone()
    };
    let u = random_tile(4, 4);
    let base = cva_score(&TilePair::new(t.clone(), u.clone()), CvaAggregate::Mean).unwrap();
    let moved = cva_score(&TilePair::new(shift(&t), shift(&u)), CvaAggregate::Mean).unwrap();
    assert!((base - moved).abs() < 1e-6);
    let max = cva_score(&TilePair::new(t, u), CvaAggregate::Max).unwrap();
    assert!(max >= base);
}

#[test]
fn lrc_examples() {
    let ck = small_checkpoint(4);
    let t = random_tile(4, 5);
    assert_eq!(
        lrc_score(&TilePair::new(t.clone(), t.clone()), &ck).unwrap(),
        0.0
    );
    for seed in 0..5 {
        let s = lrc_score(&TilePair::new(t.clone(), random_tile(4, 10 + seed)), &ck).unwrap();
        assert!((0.0..=2.0).contains(&s));
    }
    let e = embed_tile(&t, &ck).unwrap();
    assert_eq!(e.len(), 128);
    assert_eq!(e, embed_tile(&t.clone(), &ck).unwrap());
    assert!(matches!(
        embed_tile(&random_tile(8, 1), &ck),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn time_series_takes_minimum_over_history() {
    let ck = small_checkpoint(4);
    let post = random_tile(4, 20);
    let far = random_tile(4, 21);
    let mut pair = TilePair::new(far.clone(), post.clone());
    pair.pre_history = vec![far.clone(), post.clone(), random_tile(4, 22)];
    assert_eq!(lrc_score(&pair, &ck).unwrap(), 0.0);
    assert_eq!(cva_score(&pair, CvaAggregate::Mean).unwrap(), 0.0);
    assert_eq!(pixel_cosine_score(&pair).unwrap(), 0.0);
}

#[test]
fn chi2_sf_examples() {
    for k in 1..10 {
        assert_eq!(chi2_sf(0.0, k), 1.0);
    }
    assert!((chi2_sf(2.0, 2) - (-1.0f64).exp()).abs() < 1e-12);
    for k in [1, 4, 8] {
        let mut prev = 1.0;
        for i in 1..200 {
            let v = chi2_sf(i as f64 * 0.25, k);
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
    }
}

#[test]
fn threshold_examples() {
    let nominal: Vec<f64> = (1..=100).map(f64::from).collect();
    let map = ScoreMap {
        rows: 10,
        cols: 10,
        scores: nominal.iter().map(|v| Some(*v)).collect(),
        method: Method::Cva,
        config_tag: ConfigTag::FourBand,
        threshold: None,
    };
    let b = threshold_at_95(&nominal, &map).unwrap();
    assert!((b.threshold - 95.05).abs() < 1e-12);
    assert_eq!(b.flagged(), 5);
    assert!(b.flags[95..].iter().all(|f| *f == Some(true)));

    let low = ScoreMap {
        scores: vec![Some(0.5); 100],
        ..map.clone()
    };
    assert_eq!(threshold_at_95(&nominal, &low).unwrap().flagged(), 0);

    let flat = vec![2.0; 10];
    let mixed = ScoreMap {
        rows: 1,
        cols: 3,
        scores: vec![Some(2.0), Some(2.1), None],
        ..map.clone()
    };
    let b = threshold_at_95(&flat, &mixed).unwrap();
    assert_eq!(b.flags, vec![Some(false), Some(true), None]);
    assert!(matches!(threshold_at_95(&[], &map), Err(Error::Domain(_))));
}

#[test]
fn irmad_exact_affine_pair_has_unit_correlations() {
    let (x, _) = correlated_pixels(4096, 4, 7);
    let y: Vec<f64> = x
        .chunks_exact(4)
        .flat_map(|p| {
            p.iter()
                .enumerate()
                .map(|(b, v)| 1.7 * v - 0.1 * b as f64)
                .collect::<Vec<_>>()
        })
        .collect();
    let m = irmad_fit_pixels(&x, &y, 4, &IrmadOptions::default()).unwrap();
    assert!(m.rho.iter().all(|r| (r - 1.0).abs() < 1e-6), "{:?}", m.rho);
    let t = m.chi_square_pixels(&x, &y);
    assert!(t.iter().all(|v| *v < 1e-6));
}

#[test]
fn irmad_is_affine_invariant() {
    let (x, y) = correlated_pixels(4096, 4, 8);
    let opts = IrmadOptions::default();
    let base = irmad_fit_pixels(&x, &y, 4, &opts).unwrap();
    let t0 = base.chi_square_pixels(&x, &y);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mix: Vec<f64> = (0..16)
        .map(|i| if i % 5 == 0 { 2.0 } else { 0.0 } + rng.random::<f64>() - 0.5)
        .collect();
    let shift: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
    let y2: Vec<f64> = y
        .chunks_exact(4)
        .flat_map(|p| {
            (0..4)
                .map(|i| (0..4).map(|j| mix[i * 4 + j] * p[j]).sum::<f64>() + shift[i])
                .collect::<Vec<_>>()
        })
        .collect();
    let moved = irmad_fit_pixels(&x, &y2, 4, &opts).unwrap();
    let t1 = moved.chi_square_pixels(&x, &y2);
    let worst = t0
        .iter()
        .zip(&t1)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
    for (a, b) in base.rho.iter().zip(&moved.rho) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn irmad_on_independent_noise_reports_convergence_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..4096 * 4).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..4096 * 4).map(|_| rng.sample(StandardNormal)).collect();
    // Reweighting keeps raising ρ on structureless noise; the 1e−6 tolerance
    // is only reached after roughly 200 iterations.
    let capped = irmad_fit_pixels(&x, &y, 4, &IrmadOptions::default()).unwrap();
    assert_eq!(capped.iterations_used, 30);
    assert!(!capped.converged);
    let long = irmad_fit_pixels(
        &x,
        &y,
        4,
        &IrmadOptions {
            max_iter: 400,
            ..IrmadOptions::default()
        },
    )
    .unwrap();
    assert!(long.converged && long.iterations_used < 400);
    for m in [&capped, &long] {
        assert!(m.rho.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.rho.iter().all(|r| (0.0..=1.0).contains(r)));
        assert!(m.sigma2.iter().all(|s| *s > 0.0));
    }
}

#[test]
fn irmad_tile_scores_grow_with_planted_shift() {
    let (x, y) = correlated_pixels(64 * 64, 4, 11);
    let pre = scene_from_pixels(&x, 64, 64, 4);
    let mut last = -1.0;
    for shift in [0.0f32, 0.05, 0.1, 0.2] {
        let mut post = scene_from_pixels(&y, 64, 64, 4);
        for b in 0..4 {
            for r in 0..32 {
                for c in 0..32 {
                    let i = post.index(b, r, c);
                    post.values[i] += if b == 3 { -shift } else { shift };
                }
            }
        }
        let map = score_scene::<f32>(
            &pre,
            &post,
            Method::Irmad,
            None,
            None,
            &ScoreOptions::default(),
        )
        .unwrap();
        let s = map.get(0, 0).unwrap();
        assert!(s > last, "{s} after {last}");
        assert!(map.present().iter().all(|v| *v >= 0.0));
        last = s;
    }
}

#[test]
fn score_scene_contracts() {
    let (x, y) = correlated_pixels(96 * 96, 4, 12);
    let pre = scene_from_pixels(&x, 96, 96, 4);
    let post = scene_from_pixels(&y, 96, 96, 4);
    let opts = ScoreOptions::default();
    let cva = score_scene::<f32>(&pre, &pre, Method::Cva, None, None, &opts).unwrap();
    assert_eq!((cva.rows, cva.cols), (3, 3));
    assert!(cva.scores.iter().all(|s| *s == Some(0.0)));
    let cos = score_scene::<f32>(&pre, &pre, Method::Cosine, None, None, &opts).unwrap();
    assert!(cos.scores.iter().all(|s| *s == Some(0.0)));
    let ir = score_scene::<f32>(&pre, &pre, Method::Irmad, None, None, &opts).unwrap();
    assert!(ir.present().iter().all(|s| *s < 1e-6));
    assert!(matches!(
        score_scene::<f32>(&pre, &post, Method::Lrc, None, None, &opts),
        Err(Error::Usage(_))
    ));
    let ck = small_checkpoint(4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| score_scene(&pre, &post, Method::Lrc, Some(&ck), None, &opts).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert!(a.present().iter().all(|s| (0.0..=2.0).contains(s)));
    assert!(matches!(
        score_scene(
            &pre,
            &post,
            Method::Lrc,
            Some(&small_checkpoint(8)),
            None,
            &opts
        ),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn nodata_tiles_are_excluded() {
    let (x, y) = correlated_pixels(64 * 64, 4, 13);
    let mut pre = scene_from_pixels(&x, 64, 64, 4);
    pre.header.nodata_value = Some(-9999.0);
    pre.values[0] = -9999.0;
    let post = scene_from_pixels(&y, 64, 64, 4);
    let map = score_scene::<f32>(
        &pre,
        &post,
        Method::Cva,
        None,
        None,
        &ScoreOptions::default(),
    )
    .unwrap();
    assert_eq!(map.scores[0], None);
    assert!(map.scores[1..].iter().all(Option::is_some));
}

#[test]
fn score_map_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.json");
    let map = ScoreMap {
        rows: 1,
        cols: 3,
        scores: vec![Some(0.25), None, Some(1.5)],
        method: Method::Irmad,
        config_tag: ConfigTag::TimeSeries,
        threshold: Some(0.7),
    };
    map.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(
        text.contains("\"irmad\"") && text.contains("\"time-series\"") && text.contains("null")
    );
    assert_eq!(ScoreMap::load(&path).unwrap(), map);
}

#[test]
fn method_and_tag_parse() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
    }
    assert_eq!("IR-MAD".parse::<Method>().unwrap(), Method::Irmad);
    assert!("ssim".parse::<Method>().is_err());
    assert_eq!(
        "time-series".parse::<ConfigTag>().unwrap(),
        ConfigTag::TimeSeries
    );
}
