//! Pipeline configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::additive::{AdditiveConfig, DEFAULT_SIGMA_GRID, DEFAULT_TAU_GRID};
use crate::arima::RollingMode;
use crate::error::{Error, Result};
use crate::ingest::DEFAULT_Z_THRESHOLD;
use crate::neural::grid::default_repeats;
use crate::neural::{Family, TrainConfig};
use crate::weekly::{ScalingMethod, DEFAULT_MAX_GAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Order-line CSV. Relative paths resolve against the config file.
    pub input: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub article: String,
    /// Last order date kept (inclusive).
    pub cutoff: NaiveDate,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    #[serde(default = "default_max_gap")]
    pub max_gap: usize,
    /// Last training week (inclusive).
    pub train_end: NaiveDate,
    /// Last validation week (inclusive); later weeks are the test set.
    pub valid_end: NaiveDate,
    #[serde(default)]
    pub scaling: ScalingMethod,
    #[serde(default)]
    pub arima: ArimaSection,
    #[serde(default)]
    pub additive: AdditiveSection,
    #[serde(default)]
    pub nn: NnSection,
}

fn default_delimiter() -> char {
    ','
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_z() -> f64 {
    DEFAULT_Z_THRESHOLD
}
fn default_max_gap() -> usize {
    DEFAULT_MAX_GAP
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArimaSection {
    pub enabled: bool,
    pub p_max: usize,
    pub q_max: usize,
    pub rolling: RollingMode,
}

impl Default for ArimaSection {
    fn default() -> Self {
        Self { enabled: true, p_max: 3, q_max: 3, rolling: RollingMode::Frozen }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdditiveSection {
    pub enabled: bool,
    pub taus: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub n_changepoints: usize,
    pub changepoint_fraction: f64,
    pub fourier_order: usize,
    pub period: f64,
}

impl Default for AdditiveSection {
    fn default() -> Self {
        let base = AdditiveConfig::default();
        Self {
            enabled: true,
            taus: DEFAULT_TAU_GRID.to_vec(),
            sigmas: DEFAULT_SIGMA_GRID.to_vec(),
            n_changepoints: base.n_changepoints,
            changepoint_fraction: base.changepoint_fraction,
            fourier_order: base.fourier_order,
            period: base.period,
        }
    }
}

impl AdditiveSection {
    pub fn base(&self) -> AdditiveConfig {
        AdditiveConfig {
            n_changepoints: self.n_changepoints,
            changepoint_fraction: self.changepoint_fraction,
            fourier_order: self.fourier_order,
            period: self.period,
            ..AdditiveConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub a: FamilySection,
    pub b: FamilySection,
}

impl Default for NnSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            a: FamilySection::default(),
            b: FamilySection::default(),
        }
    }
}

impl NnSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn family(&self, family: Family) -> &FamilySection {
        match family {
            Family::A => &self.a,
            Family::B => &self.b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Trainings per configuration; the family default when absent.
    pub repeats: Option<usize>,
    /// Grid positions to search; the whole grid when absent.
    pub indices: Option<Vec<usize>>,
}

impl Default for FamilySection {
    fn default() -> Self {
        Self { enabled: true, repeats: None, indices: None }
    }
}

impl FamilySection {
    pub fn repeats_for(&self, family: Family) -> usize {
        self.repeats.unwrap_or_else(|| default_repeats(family))
    }
}

impl PipelineConfig {
    /// Parses JSON when the extension is `.json`, TOML otherwise, and
    /// resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train_end >= self.valid_end {
            return bad("train_end must precede valid_end");
        }
        if !self.delimiter.is_ascii() {
            return bad("delimiter must be a single ASCII character");
        }
        if !(self.z_threshold > 0.0) {
            return bad("z_threshold must be positive");
        }
        if self.additive.enabled && (self.additive.taus.is_empty() || self.additive.sigmas.is_empty()) {
            return bad("additive grids must be non-empty");
        }
        if self.nn.patience >= self.nn.max_epochs || self.nn.batch_size == 0 {
            return bad("nn needs batch_size >= 1 and patience < max_epochs");
        }
        for (f, s) in [(Family::A, &self.nn.a), (Family::B, &self.nn.b)] {
            if s.enabled && s.repeats_for(f) == 0 {
                return bad("nn repeats must be at least 1");
            }
        }
        Ok(())
    }
}
