//! The JSON run configuration and its command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use latentcd::changedet::{ConfigTag, CvaAggregate, IrmadOptions, Method};
use latentcd::eval::EffectMode;
use latentcd::preprocess::DEFAULT_EPSILON;
use latentcd::synth::SynthConfig;
use latentcd::vae::{EncoderConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; when set it replaces the seeds of every stage block.
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub synth: SynthBlock,
    pub preprocess: PreprocessBlock,
    pub train: TrainBlock,
    pub score: ScoreBlock,
    pub eval: EvalBlock,
}

/// Input and output locations. Unset inputs default to the files the earlier
/// commands write under `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    pub pre: Option<PathBuf>,
    pub post: Option<PathBuf>,
    pub history: Vec<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train_scenes: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub preprocess: Option<PathBuf>,
    pub nominal_pre: Option<PathBuf>,
    pub nominal_post: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            pre: None,
            post: None,
            history: Vec::new(),
            labels: None,
            train_scenes: Vec::new(),
            checkpoint: None,
            preprocess: None,
            nominal_pre: None,
            nominal_post: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthBlock {
    /// Named starting point ("default", "easy-burn", "heavy", "quiet"); keys in
    /// `config` that are present override it.
    pub preset: Option<String>,
    pub config: serde_json::Value,
    /// Burn-free scenes written for training.
    pub train_scenes: usize,
    /// Extra pre-incident acquisitions for time-series scoring.
    pub history: usize,
    /// Also write a burn-free pair used to set the nominal thresholds.
    pub nominal_pair: bool,
}

impl Default for SynthBlock {
    fn default() -> Self {
        Self {
            preset: None,
            config: serde_json::Value::Object(Default::default()),
            train_scenes: 4,
            history: 0,
            nominal_pair: true,
        }
    }
}

impl SynthBlock {
    pub fn resolve(&self) -> Result<SynthConfig, CliError> {
        let base = SynthConfig::preset(self.preset.as_deref().unwrap_or("default"))?;
        let mut merged = serde_json::to_value(base).map_err(latentcd::Error::from)?;
        match (&mut merged, &self.config) {
            (serde_json::Value::Object(m), serde_json::Value::Object(o)) => {
                for (k, v) in o {
                    if !m.contains_key(k) {
                        return Err(CliError::Usage(format!("unknown synth key '{k}'")));
                    }
                    m.insert(k.clone(), v.clone());
                }
            }
            (_, serde_json::Value::Null) => {}
            _ => return Err(CliError::Usage("synth.config must be an object".into())),
        }
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("synth.config: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessBlock {
    pub epsilon: f64,
    /// JSON file `{ "source": [[..], ..], "reference": [[..], ..] }` with one
    /// sample list per band; identity alignment when absent.
    pub alignment_samples: Option<PathBuf>,
}

impl Default for PreprocessBlock {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            alignment_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub config: TrainConfig,
    pub encoder: EncoderConfig,
    /// Number of training tiles drawn from the training scenes.
    pub tiles: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        Self {
            config: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            tiles: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreBlock {
    pub methods: Vec<Method>,
    pub config_tag: ConfigTag,
    pub checkpoint: Option<PathBuf>,
    pub tile_size: usize,
    pub cva_aggregate: CvaAggregate,
    pub irmad: IrmadOptions,
    /// Write grey-level PGM previews next to the score maps.
    pub pgm: bool,
}

impl Default for ScoreBlock {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            config_tag: ConfigTag::FourBand,
            checkpoint: None,
            tile_size: latentcd::raster::DEFAULT_TILE_SIZE,
            cva_aggregate: CvaAggregate::Mean,
            irmad: IrmadOptions::default(),
            pgm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub n_boot: usize,
    pub seed: u64,
    pub reference: Method,
    pub site: String,
    pub effect_mode: EffectMode,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            seed: 7,
            reference: Method::Irmad,
            site: "synthetic".into(),
            effect_mode: EffectMode::PerResample,
        }
    }
}

/// Values given on the command line; each one wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies flag overrides, propagates the root seed and checks invariants.
    pub fn finalize(mut self, o: &Overrides) -> Result<Self, CliError> {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if o.deterministic {
            self.deterministic = true;
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        if self.deterministic && self.seed.is_none() {
            return Err(CliError::Usage(
                "deterministic runs need a seed (--seed or \"seed\")".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        if let Some(seed) = self.seed {
            self.synth.config = match std::mem::take(&mut self.synth.config) {
                serde_json::Value::Object(mut m) => {
                    m.insert("seed".into(), seed.into());
                    serde_json::Value::Object(m)
                }
                serde_json::Value::Null => serde_json::json!({ "seed": seed }),
                other => other,
            };
            self.train.config.seed = seed;
            self.eval.seed = seed;
        }
        self.train.config.deterministic = self.deterministic || self.train.config.deterministic;
        if self.score.methods.is_empty() {
            return Err(CliError::Usage("score.methods is empty".into()));
        }
        Ok(self)
    }
}
