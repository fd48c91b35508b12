//! Run configuration: one TOML file with a section per component.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::WorldConfig;
use crate::encoder::EncoderConfig;
use crate::landmarks::{SelectionStrategy, DEFAULT_BETA};
use crate::lm::LmConfig;
use crate::model::ModelConfig;
use crate::stmt::StmtConfig;
use crate::world::Style;
use crate::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;
pub const DEFAULT_SEED: u64 = 17;
/// Parameter groups of the model.
pub const GROUPS: [&str; 5] = ["adapters", "embeddings", "encoder", "lm", "stmt"];

/// Encoder settings that are not implied by `[world]` (K, D_raw) or `[lm]` (width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub m: usize,
    pub d_i: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub t_max: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSection {
            m: e.m,
            d_i: e.d_i,
            n_blocks: e.n_blocks,
            heads: e.heads,
            mlp_hidden: e.mlp_hidden,
            t_max: e.t_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarkConfig {
    pub beta: f64,
    pub strategy: SelectionStrategy,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        LandmarkConfig {
            beta: DEFAULT_BETA,
            strategy: SelectionStrategy::Full,
        }
    }
}

/// Sampling proportions of the five sample pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixRatios {
    pub instruction_fine: f64,
    pub instruction_high: f64,
    pub landmark_fine: f64,
    pub landmark_high: f64,
    pub stmt: f64,
}

impl Default for MixRatios {
    fn default() -> Self {
        MixRatios {
            instruction_fine: 0.3,
            instruction_high: 0.3,
            landmark_fine: 0.1,
            landmark_high: 0.1,
            stmt: 0.2,
        }
    }
}

impl MixRatios {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.instruction_fine,
            self.instruction_high,
            self.landmark_fine,
            self.landmark_high,
            self.stmt,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config(format!("mixing ratios must be non-negative: {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("mixing ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Validation every this many steps (and after the last one); 0 disables.
    pub eval_every: usize,
    /// Cap on validation items per task.
    pub eval_samples: usize,
    pub ratios: MixRatios,
    /// Learning-rate multipliers by parameter group.
    pub lr_scale: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 2,
            lr: 1e-3,
            lr_floor: 0.1,
            warmup: 100,
            weight_decay: 0.01,
            grad_clip: 1.0,
            eval_every: 500,
            eval_samples: 40,
            ratios: MixRatios::default(),
            lr_scale: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub temperature_fine: f64,
    pub temperature_high: f64,
    pub max_landmark_tokens: usize,
    pub max_instruction_tokens: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            temperature_fine: 0.1,
            temperature_high: 0.1,
            max_landmark_tokens: 16,
            max_instruction_tokens: 48,
        }
    }
}

impl GenerateConfig {
    pub fn temperature(&self, style: Style) -> f64 {
        match style {
            Style::FineGrained => self.temperature_fine,
            Style::HighLevel => self.temperature_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub world: WorldConfig,
    pub encoder: EncoderSection,
    pub lm: LmConfig,
    pub stmt: StmtConfig,
    pub landmarks: LandmarkConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA,
            seed: DEFAULT_SEED,
            out_dir: None,
            world: WorldConfig::default(),
            encoder: EncoderSection::default(),
            lm: LmConfig::default(),
            stmt: StmtConfig::default(),
            landmarks: LandmarkConfig::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(s) = value.get("schema") {
            let found = s.as_integer().unwrap_or(-1);
            if found != i64::from(CONFIG_SCHEMA) {
                return Err(Error::Config(format!(
                    "config schema {found} is not supported (expected {CONFIG_SCHEMA})"
                )));
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                k: self.world.k,
                m: self.encoder.m,
                d_raw: self.world.d_raw,
                d_i: self.encoder.d_i,
                d_p: self.lm.width,
                n_blocks: self.encoder.n_blocks,
                heads: self.encoder.heads,
                mlp_hidden: self.encoder.mlp_hidden,
                t_max: self.encoder.t_max,
            },
            lm: self.lm.clone(),
            stmt: self.stmt.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        self.world.validate()?;
        self.model_config().validate()?;
        if self.world.max_len > self.encoder.t_max {
            return Err(Error::Config(format!(
                "world.max_len {} exceeds encoder.t_max {}",
                self.world.max_len, self.encoder.t_max
            )));
        }
        if !(self.landmarks.beta >= 0.0) {
            return Err(Error::Config("landmarks.beta must be non-negative".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(t.lr >= 0.0 && t.weight_decay >= 0.0 && t.grad_clip >= 0.0) {
            return Err(Error::Config("train.lr, weight_decay and grad_clip must be non-negative".into()));
        }
        t.ratios.validate()?;
        for (group, &v) in &t.lr_scale {
            if !GROUPS.contains(&group.as_str()) {
                return Err(Error::Config(format!("train.lr_scale: unknown group {group:?}")));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("train.lr_scale.{group} must be non-negative")));
            }
        }
        if !(self.stmt.weight >= 0.0) {
            return Err(Error::Config("stmt.weight must be non-negative".into()));
        }
        let g = &self.generate;
        if !(g.temperature_fine > 0.0 && g.temperature_high > 0.0) {
            return Err(Error::Config("generation temperatures must be positive".into()));
        }
        Ok(())
    }
}
