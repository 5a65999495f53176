//! The five pipeline commands. Each reads its inputs from the run
//! configuration (or the default locations under `out`) and writes its
//! outputs under `out/{scenes,checkpoints,scores,reports}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use latentcd::changedet::{
    score_scene, threshold_at_95, ConfigTag, Method, ScoreMap, ScoreOptions,
};
use latentcd::eval::{compare_methods, CompareOptions, EvalReport, LabeledScores};
use latentcd::preprocess::{fit_archive, PreprocessArchive, SpectralAlignParams};
use latentcd::raster::{export_pgm, load_scene, save_scene, tile_scene, SceneRaster, Tile};
use latentcd::synth::{
    gen_nominal_scene, gen_pre_history, gen_scene_pair, SceneLabels, SynthConfig,
};
use latentcd::vae::{load_checkpoint, save_checkpoint, train, Checkpoint, EpochLoss};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::CliError;

/// Output directory tree of a run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn scenes(&self) -> PathBuf {
        self.root.join("scenes")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn scene(&self, stem: &str) -> PathBuf {
        self.scenes().join(format!("{stem}.bin"))
    }

    pub fn labels(&self) -> PathBuf {
        self.scenes().join("labels.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoints().join("vae.ckpt")
    }

    pub fn archive(&self) -> PathBuf {
        self.checkpoints().join("preprocess.json")
    }

    pub fn score_map(&self, method: Method, nominal: bool) -> PathBuf {
        let prefix = if nominal { "nominal_" } else { "" };
        self.scores()
            .join(format!("{prefix}{}.json", method.as_str()))
    }

    pub fn report_json(&self) -> PathBuf {
        self.reports().join("eval.json")
    }
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    let json = path.with_extension("json");
    if path.exists() || json.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn load_input_scene(path: &Path, what: &str) -> Result<SceneRaster, CliError> {
    require(path, what)?;
    Ok(load_scene(path)?)
}

/// Stems of `scenes/<prefix>_<i>` files in index order.
fn numbered_scenes(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for i in 0.. {
        let p = dir.join(format!("{prefix}_{i}.bin"));
        if !p.exists() {
            break;
        }
        found.push(p);
    }
    found
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub config: SynthConfig,
    pub positives: usize,
    pub tiles: usize,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutput, CliError> {
    let synth = cfg.synth.resolve()?;
    synth.validate()?;
    let layout = Layout::new(&cfg.paths.out);
    let dir = layout.scenes();
    mkdir(&dir)?;

    let pair = gen_scene_pair(&synth)?;
    save_scene(&pair.pre, layout.scene("pre"))?;
    save_scene(&pair.post, layout.scene("post"))?;
    pair.labels.save(layout.labels())?;
    fs::write(
        dir.join("synth_config.json"),
        serde_json::to_string_pretty(&synth).map_err(latentcd::Error::from)?,
    )
    .map_err(|e| CliError::Core(e.into()))?;
    fs::write(
        dir.join("burns.json"),
        serde_json::to_string_pretty(&pair.burns).map_err(latentcd::Error::from)?,
    )
    .map_err(|e| CliError::Core(e.into()))?;

    for i in 0..cfg.synth.train_scenes {
        save_scene(
            &gen_nominal_scene(&synth, i as u64)?,
            layout.scene(&format!("train_{i}")),
        )?;
    }
    for (i, h) in gen_pre_history(&synth, cfg.synth.history)?
        .iter()
        .enumerate()
    {
        save_scene(h, layout.scene(&format!("history_{i}")))?;
    }
    if cfg.synth.nominal_pair {
        let quiet = SynthConfig {
            n_burns: 0,
            seed: latentcd::rng::child_seed(synth.seed, "synth.nominal-pair", 0),
            ..synth.clone()
        };
        let nominal = gen_scene_pair(&quiet)?;
        save_scene(&nominal.pre, layout.scene("nominal_pre"))?;
        save_scene(&nominal.post, layout.scene("nominal_post"))?;
    }
    Ok(SynthOutput {
        positives: pair.labels.positives(),
        tiles: pair.labels.labels.len(),
        config: synth,
    })
}

#[derive(Debug, Deserialize)]
struct AlignmentSamples {
    source: Vec<Vec<f64>>,
    reference: Vec<Vec<f64>>,
}

fn alignment(cfg: &RunConfig, bands: usize) -> Result<SpectralAlignParams, CliError> {
    match &cfg.preprocess.alignment_samples {
        None => Ok(SpectralAlignParams::identity(bands)),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("alignment samples {}: {e}", p.display())))?;
            let s: AlignmentSamples = serde_json::from_str(&text).map_err(latentcd::Error::from)?;
            Ok(SpectralAlignParams::fit(&s.source, &s.reference)?)
        }
    }
}

pub fn write_loss_history(history: &[EpochLoss], path: &Path) -> Result<(), CliError> {
    let mut csv =
        String::from("epoch,train_total,train_recon,train_kl,val_total,val_recon,val_kl\n");
    for e in history {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            e.epoch,
            e.train.total,
            e.train.recon_mse,
            e.train.kl,
            e.validation.total,
            e.validation.recon_mse,
            e.validation.kl
        );
    }
    fs::write(path, csv).map_err(|e| CliError::Core(e.into()))
}

/// Valid (nodata-free) tiles of the preprocessed scenes, in scene then row-major order.
fn training_tiles(
    scenes: &[SceneRaster],
    archive: &PreprocessArchive,
    size: usize,
) -> Result<Vec<Tile>, CliError> {
    let mut tiles = Vec::new();
    for s in scenes {
        let grid = tile_scene(&archive.apply(s)?, size)?;
        tiles.extend(grid.tiles.into_iter().filter(|t| !t.has_nodata));
    }
    Ok(tiles)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub history: Vec<EpochLoss>,
    pub best_epoch: Option<usize>,
    pub tiles: usize,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let paths = if cfg.paths.train_scenes.is_empty() {
        numbered_scenes(&layout.scenes(), "train")
    } else {
        cfg.paths.train_scenes.clone()
    };
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no training scenes given and none found under {}",
            layout.scenes().display()
        )));
    }
    let scenes = paths
        .iter()
        .map(|p| load_input_scene(p, "training scene"))
        .collect::<Result<Vec<_>, _>>()?;
    let bands = scenes[0].bands();
    let mut encoder = cfg.train.encoder.clone();
    encoder.input_bands = bands;
    encoder.tile_size = cfg.score.tile_size;
    encoder.validate()?;
    let archive = fit_archive(&scenes, &alignment(cfg, bands)?, cfg.preprocess.epsilon)?;

    let mut tiles = training_tiles(&scenes, &archive, encoder.tile_size)?;
    if tiles.len() < cfg.train.tiles {
        return Err(CliError::Usage(format!(
            "training scenes hold {} valid tiles, {} requested",
            tiles.len(),
            cfg.train.tiles
        )));
    }
    tiles.truncate(cfg.train.tiles);

    mkdir(&layout.checkpoints())?;
    archive.save(layout.archive())?;
    let history_path = layout.checkpoints().join("loss_history.csv");
    match train::<f32>(&tiles, None, &encoder, &cfg.train.config) {
        Ok(ckpt) => {
            write_loss_history(&ckpt.history, &history_path)?;
            save_checkpoint(&ckpt, layout.checkpoint())?;
            Ok(TrainOutput {
                history: ckpt.history.clone(),
                best_epoch: ckpt.best_epoch,
                tiles: tiles.len(),
            })
        }
        Err(abort) => {
            write_loss_history(&abort.history, &history_path)?;
            Err(CliError::Core(abort.error))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOutput {
    pub maps: BTreeMap<Method, ScoreMap>,
}

fn scene_or_default(given: &Option<PathBuf>, layout: &Layout, stem: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| layout.scene(stem))
}

pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutput, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let sc = &cfg.score;
    let pre = load_input_scene(
        &scene_or_default(&cfg.paths.pre, &layout, "pre"),
        "pre scene",
    )?;
    let post = load_input_scene(
        &scene_or_default(&cfg.paths.post, &layout, "post"),
        "post scene",
    )?;
    let history_paths = match (sc.config_tag, cfg.paths.history.is_empty()) {
        (ConfigTag::TimeSeries, true) => numbered_scenes(&layout.scenes(), "history"),
        (ConfigTag::TimeSeries, false) => cfg.paths.history.clone(),
        _ => Vec::new(),
    };
    if sc.config_tag == ConfigTag::TimeSeries && history_paths.is_empty() {
        return Err(CliError::Usage(
            "time-series scoring needs pre-incident history scenes".into(),
        ));
    }
    let history = history_paths
        .iter()
        .map(|p| load_input_scene(p, "history scene"))
        .collect::<Result<Vec<_>, _>>()?;

    let wants_lrc = sc.methods.contains(&Method::Lrc);
    let ckpt_path = sc
        .checkpoint
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| layout.checkpoint());
    let ckpt: Option<Checkpoint<f32>> = if wants_lrc {
        if !ckpt_path.exists() {
            return Err(CliError::Usage(format!(
                "LRC needs a checkpoint; {} not found",
                ckpt_path.display()
            )));
        }
        Some(load_checkpoint(&ckpt_path)?)
    } else {
        None
    };
    let archive_path = cfg
        .paths
        .preprocess
        .clone()
        .unwrap_or_else(|| layout.archive());
    let archive = if archive_path.exists() {
        PreprocessArchive::load(&archive_path)?
    } else if wants_lrc {
        return Err(CliError::Usage(format!(
            "LRC needs the preprocessing archive saved at training; {} not found",
            archive_path.display()
        )));
    } else {
        let mut fit_on = vec![pre.clone()];
        fit_on.extend(history.iter().cloned());
        fit_archive(
            &fit_on,
            &alignment(cfg, pre.bands())?,
            cfg.preprocess.epsilon,
        )?
    };

    let pre_n = archive.apply(&pre)?;
    let post_n = archive.apply(&post)?;
    let hist_n = history
        .iter()
        .map(|h| archive.apply(h))
        .collect::<Result<Vec<_>, _>>()?;
    let nominal_pre = scene_or_default(&cfg.paths.nominal_pre, &layout, "nominal_pre");
    let nominal_post = scene_or_default(&cfg.paths.nominal_post, &layout, "nominal_post");
    let nominal = if nominal_pre.with_extension("json").exists()
        && nominal_post.with_extension("json").exists()
    {
        Some((
            archive.apply(&load_scene(&nominal_pre)?)?,
            archive.apply(&load_scene(&nominal_post)?)?,
        ))
    } else {
        None
    };

    let opts = ScoreOptions {
        tile_size: sc.tile_size,
        config_tag: sc.config_tag,
        cva_aggregate: sc.cva_aggregate,
        irmad: sc.irmad.clone(),
    };
    mkdir(&layout.scores())?;
    let mut maps = BTreeMap::new();
    for &m in &sc.methods {
        let hist = (!hist_n.is_empty()).then_some(hist_n.as_slice());
        let mut map = score_scene(&pre_n, &post_n, m, ckpt.as_ref(), hist, &opts)?;
        if let Some((np, nq)) = &nominal {
            let nominal_opts = ScoreOptions {
                config_tag: ConfigTag::FourBand,
                ..opts.clone()
            };
            let mut nmap = score_scene(np, nq, m, ckpt.as_ref(), None, &nominal_opts)?;
            nmap.config_tag = sc.config_tag;
            let binary = threshold_at_95(&nmap.present(), &map)?;
            map.threshold = Some(binary.threshold);
            nmap.save(layout.score_map(m, true))?;
            fs::write(
                layout.scores().join(format!("{}_binary.json", m.as_str())),
                serde_json::to_string_pretty(&binary).map_err(latentcd::Error::from)?,
            )
            .map_err(|e| CliError::Core(e.into()))?;
        }
        map.save(layout.score_map(m, false))?;
        if sc.pgm {
            export_pgm(&map, layout.scores().join(format!("{}.pgm", m.as_str())))?;
        }
        maps.insert(m, map);
    }
    Ok(ScoreOutput { maps })
}

/// Joins score maps with tile labels, keeping tiles every method scored.
pub fn labeled_scores(
    maps: &BTreeMap<Method, ScoreMap>,
    labels: &SceneLabels,
) -> Result<BTreeMap<Method, LabeledScores>, CliError> {
    for (m, map) in maps {
        if map.rows != labels.rows || map.cols != labels.cols {
            return Err(CliError::Core(latentcd::Error::Pairing(format!(
                "{m} scores cover a {}x{} grid, labels a {}x{} grid",
                map.rows, map.cols, labels.rows, labels.cols
            ))));
        }
    }
    let keep: Vec<usize> = (0..labels.labels.len())
        .filter(|i| maps.values().all(|m| m.scores[*i].is_some()))
        .collect();
    let mut out = BTreeMap::new();
    for (&m, map) in maps {
        let scores = keep
            .iter()
            .map(|i| map.scores[*i].expect("kept tiles are scored"))
            .collect();
        let lab = keep.iter().map(|i| labels.labels[*i]).collect();
        out.insert(m, LabeledScores::new(scores, lab, "synthetic")?);
    }
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let labels_path = cfg.paths.labels.clone().unwrap_or_else(|| layout.labels());
    if !labels_path.exists() {
        return Err(CliError::Usage(format!(
            "labels not found: {}",
            labels_path.display()
        )));
    }
    let labels = SceneLabels::load(&labels_path)?;
    let mut maps = BTreeMap::new();
    for &m in &cfg.score.methods {
        let p = layout.score_map(m, false);
        if !p.exists() {
            return Err(CliError::Usage(format!(
                "score map for {m} not found: {}",
                p.display()
            )));
        }
        maps.insert(m, ScoreMap::load(&p)?);
    }
    if !maps.contains_key(&cfg.eval.reference) {
        return Err(CliError::Usage(format!(
            "reference method {} was not scored",
            cfg.eval.reference
        )));
    }
    let data = labeled_scores(&maps, &labels)?;
    let opts = CompareOptions {
        site: cfg.eval.site.clone(),
        config_tag: cfg.score.config_tag,
        n_boot: cfg.eval.n_boot,
        seed: cfg.eval.seed,
        thresholds: maps
            .iter()
            .filter_map(|(m, s)| s.threshold.map(|t| (*m, t)))
            .collect(),
        effect_mode: cfg.eval.effect_mode,
    };
    let report = compare_methods(&data, cfg.eval.reference, &opts)?;
    mkdir(&layout.reports())?;
    report.save_json(layout.report_json())?;
    fs::write(layout.reports().join("eval.csv"), report.to_csv())
        .map_err(|e| CliError::Core(e.into()))?;
    Ok(report)
}

/// Renders the saved evaluation report as a table (also written to `reports/table.md`).
pub fn cmd_report(cfg: &RunConfig) -> Result<String, CliError> {
    let layout = Layout::new(&cfg.paths.out);
    let path = layout.report_json();
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "no evaluation report at {}; run eval first",
            path.display()
        )));
    }
    let report = EvalReport::load_json(&path)?;
    let table = report.to_table();
    fs::write(layout.reports().join("table.md"), &table).map_err(|e| CliError::Core(e.into()))?;
    Ok(table)
}
