//! Run configuration, read from TOML.
//!
//! Unknown keys are rejected; every offending key is reported with its full
//! path. `out_dir` is resolved relative to the directory holding the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_BUCKETS, DEFAULT_TIE_TOLERANCE};
use crate::cascade::{AdaptiveConfig, SweepGrid};
use crate::diffusion::{ClassMixture, DataDistribution, ScheduleSpec};
use crate::distill::CdConfig;
use crate::error::{Error, Result};
use crate::solvers::SolverSpec;
use crate::teacher::TeacherConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPreset {
    /// Four classes of three isotropic components each, in two dimensions.
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Preset { preset: DataPreset },
    Explicit { dim: usize, classes: Vec<ClassMixture> },
}

impl DataSpec {
    pub fn build(&self) -> Result<DataDistribution> {
        let d = match self {
            Self::Preset {
                preset: DataPreset::Benchmark,
            } => DataDistribution::benchmark(),
            Self::Explicit { dim, classes } => DataDistribution {
                dim: *dim,
                classes: classes.clone(),
            },
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Classifier-free guidance scale shared by teacher and student.
    pub guidance: f64,
    /// Teacher solver producing the reference samples for comparisons.
    pub teacher_reference: SolverSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub holdout: usize,
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunAdaptiveConfig {
    pub samples: usize,
    pub pipeline: AdaptiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub pairs: usize,
    #[serde(default = "default_buckets")]
    pub buckets: Vec<[f64; 2]>,
    #[serde(default = "default_tie")]
    pub tie_tolerance: f64,
    pub bootstrap_resamples: usize,
    pub confidence_level: f64,
}

fn default_buckets() -> Vec<[f64; 2]> {
    DEFAULT_BUCKETS.iter().map(|&(a, b)| [a, b]).collect()
}

fn default_tie() -> f64 {
    DEFAULT_TIE_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOracleConfig {
    pub accuracies: Vec<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBudgetConfig {
    pub samples: usize,
    pub grid: SweepGrid,
    /// Average-step caps for which the best grid cell is reported.
    pub budgets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub teacher: TeacherConfig,
    pub distill: CdConfig,
    pub sampling: SamplingConfig,
    pub calibrate: CalibrateConfig,
    pub adaptive: RunAdaptiveConfig,
    pub analysis: AnalysisConfig,
    pub sweep_oracle: SweepOracleConfig,
    pub sweep_budget: SweepBudgetConfig,
}

/// Deserialize, collecting every unknown key before giving up.
fn parse_collecting_unknown(text: &str) -> Result<RunConfig> {
    let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    loop {
        match serde_path_to_error::deserialize::<_, RunConfig>(value.clone()) {
            Ok(cfg) if unknown.is_empty() => return Ok(cfg),
            Ok(_) => break,
            Err(e) => {
                let msg = e.inner().to_string();
                let path = e.path().to_string();
                match unknown_field_name(&msg) {
                    Some(key) if unknown.len() < 64 => {
                        // The reported path may or may not already end in the key.
                        let parent = match path.strip_suffix(key.as_str()) {
                            Some("") => ".".to_string(),
                            Some(p) if p.ends_with('.') => p.trim_end_matches('.').to_string(),
                            _ => path.clone(),
                        };
                        if !remove_key(&mut value, &parent, &key) {
                            return Err(Error::Config(format!("at `{path}`: {msg}")));
                        }
                        unknown.push(if parent == "." { key } else { format!("{parent}.{key}") });
                    }
                    _ if unknown.is_empty() => {
                        return Err(Error::Config(format!("at `{path}`: {msg}")));
                    }
                    _ => break,
                }
            }
        }
    }
    Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))))
}

fn unknown_field_name(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn remove_key(value: &mut toml::Value, path: &str, key: &str) -> bool {
    let mut cur = value;
    if path != "." {
        for seg in path.split('.') {
            cur = match cur {
                toml::Value::Table(t) => match t.get_mut(seg) {
                    Some(v) => v,
                    None => return false,
                },
                toml::Value::Array(a) => match seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)) {
                    Some(v) => v,
                    None => return false,
                },
                _ => return false,
            };
        }
    }
    match cur {
        toml::Value::Table(t) => t.remove(key).is_some(),
        _ => false,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = parse_collecting_unknown(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and resolve `out_dir` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.out_dir.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = crate::diffusion::NoiseSchedule::new(self.schedule)?;
        self.data.build()?;
        self.teacher.validate()?;
        self.distill.validate(&schedule)?;
        self.sampling.teacher_reference.validate()?;
        if !(self.sampling.guidance.is_finite() && self.sampling.guidance >= 0.0) {
            return Err(Error::Config(format!("sampling.guidance {}", self.sampling.guidance)));
        }
        if self.calibrate.holdout == 0 || !(0.0..=100.0).contains(&self.calibrate.percentile) {
            return Err(Error::Config("calibrate: holdout must be positive, percentile in [0, 100]".into()));
        }
        self.adaptive.pipeline.validate()?;
        if self.adaptive.samples == 0 || self.analysis.pairs < 3 || self.sweep_oracle.samples == 0 || self.sweep_budget.samples == 0 {
            return Err(Error::Config("sample counts must be positive (analysis.pairs >= 3)".into()));
        }
        if self.analysis.bootstrap_resamples == 0 || !(0.0 < self.analysis.confidence_level && self.analysis.confidence_level < 1.0) {
            return Err(Error::Config("analysis: bootstrap_resamples > 0, confidence_level in (0, 1)".into()));
        }
        if self.analysis.buckets.iter().any(|[lo, hi]| !(0.0 <= *lo && lo < hi && *hi <= 100.0)) {
            return Err(Error::Config("analysis.buckets must be ranges within [0, 100]".into()));
        }
        if self.sweep_oracle.accuracies.iter().any(|a| !(0.5..=1.0).contains(a)) {
            return Err(Error::Config("sweep_oracle.accuracies must lie in [0.5, 1]".into()));
        }
        let g = &self.sweep_budget.grid;
        if g.sigmas.is_empty() || g.teacher_steps.is_empty() || g.percentiles.is_empty() {
            return Err(Error::Config("sweep_budget grid axes must be non-empty".into()));
        }
        if g.sigmas.iter().any(|s| !(0.0..=1.0).contains(s))
            || g.percentiles.iter().any(|k| !(0.0..=100.0).contains(k))
            || g.teacher_steps.contains(&0)
        {
            return Err(Error::Config("sweep_budget grid values out of range".into()));
        }
        Ok(())
    }

    /// Canonical bytes for digesting: JSON of the config with `out_dir`
    /// blanked, so the digest does not depend on where outputs go.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        Ok(serde_json::to_vec(&c)?)
    }
}
