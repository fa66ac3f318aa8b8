//! Run configuration: every knob of a corpus, training and evaluation run in
//! one TOML document, stored verbatim in each run directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_pipeline::PipelineConfig;
use crate::error::{invalid, io_err, Error, Result};
use crate::evalprobe::{ProbeConfig, SsimParams};
use crate::networks::NetSpec;
use crate::objectives::ObjectiveConfig;
use crate::scene_synth::CorpusParams;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 64-pixel scenes, quarter-width networks, a few thousand iterations on one CPU core.
    Desk,
    /// 256-pixel crops, full-width networks, 200k iterations, batch 4.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => Err(invalid(format!("unknown preset `{other}` (expected desk or full)"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Full => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: PathBuf::from("corpus"), run_dir: PathBuf::from("runs/desk") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub embedder: String,
    pub ssim: SsimParams,
    pub diversity_pairs: usize,
    pub probe: ProbeConfig,
    pub alphas: Vec<f64>,
    /// Seed of the untrained networks used as the equivariance baseline.
    pub baseline_seed: u64,
    /// Cap on held-out scenes per evaluation (`0` uses all).
    pub max_scenes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            embedder: "random-conv-frozen".into(),
            ssim: SsimParams::default(),
            diversity_pairs: 100,
            probe: ProbeConfig::default(),
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            baseline_seed: 1_000_003,
            max_scenes: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub preset: String,
    pub scenes: usize,
    pub paths: Paths,
    pub corpus: CorpusParams,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
    pub network: NetSpec,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                version: CONFIG_VERSION,
                preset: preset.name().into(),
                scenes: 200,
                paths: Paths::default(),
                corpus: CorpusParams::default(),
                pipeline: PipelineConfig { crop_size: 64, batch_size: 1, shuffle_seed: 0, workers: 0 },
                train: TrainConfig { total_iters: 3000, checkpoint_every: 1000, ..TrainConfig::default() },
                objective: ObjectiveConfig::default(),
                network: NetSpec::desk(),
                eval: EvalConfig::default(),
            },
            Preset::Full => Self {
                version: CONFIG_VERSION,
                preset: preset.name().into(),
                scenes: 4000,
                paths: Paths { corpus: PathBuf::from("corpus-full"), run_dir: PathBuf::from("runs/full") },
                corpus: CorpusParams { width: 256, height: 256, ..CorpusParams::default() },
                pipeline: PipelineConfig { crop_size: 256, batch_size: 4, shuffle_seed: 0, workers: 2 },
                train: TrainConfig::default(),
                objective: ObjectiveConfig::default(),
                network: NetSpec::default(),
                eval: EvalConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        if self.scenes == 0 {
            return Err(invalid("scenes must be at least 1"));
        }
        self.corpus.validate()?;
        self.pipeline.validate()?;
        self.train.validate()?;
        self.objective.weights.validate()?;
        self.network.validate()?;
        let side = self.corpus.width.min(self.corpus.height);
        if self.pipeline.crop_size > side {
            return Err(invalid(format!("crop_size {} exceeds the {side}-pixel scene side", self.pipeline.crop_size)));
        }
        if self.eval.alphas.is_empty() || self.eval.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("eval alphas must be a non-empty list within [0, 1]"));
        }
        if self.eval.alphas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("eval alphas must be sorted ascending"));
        }
        crate::evalprobe::embedder_by_name(&self.eval.embedder)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a document layered over its preset (`preset` key, default
    /// desk): keys absent from the document keep the preset's values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match doc.get("preset") {
            Some(toml::Value::String(name)) => name.parse()?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Preset::Desk,
        };
        let mut merged = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        overlay(&mut merged, doc);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(io_err(path))
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
