//! Experiment configuration files (TOML).
//!
//! A single-task config names a domain (preset, generator spec, or document
//! file), an environment row or explicit environment fields, a policy kind,
//! learner hyperparameters, the training/evaluation schedule, and seeds. A
//! benchmark config expands to the full domains x environments x policies
//! grid.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{benchmark_envs, EnvConfig, PolicyKind, Schedule};
use crate::ontology::{generate_domain, load_ontology, Database, DomainError, DomainSpec, Ontology};
use crate::qlearner::LearnerConfig;
use crate::user_sim::UserKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Domain selection: exactly one of `file`, `generate`, or `preset`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub generate: Option<DomainSpec>,
    /// Seed for preset generation (ignored for file/generate sources).
    pub seed: Option<u64>,
}

impl DomainSection {
    pub fn resolve(&self) -> Result<(Arc<Ontology>, Arc<Database>), ConfigError> {
        let sources =
            self.preset.is_some() as u8 + self.file.is_some() as u8 + self.generate.is_some() as u8;
        if sources > 1 {
            return Err(ConfigError::Invalid(
                "domain: set only one of preset/file/generate".into(),
            ));
        }
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let (ont, db) = load_ontology(&text)?;
            return Ok((Arc::new(ont), Arc::new(db)));
        }
        if let Some(spec) = &self.generate {
            let (ont, db) = generate_domain(spec)?;
            return Ok((Arc::new(ont), Arc::new(db)));
        }
        let preset = self.preset.as_deref().unwrap_or("cr");
        let seed = self.seed.unwrap_or(7);
        let spec = DomainSpec::by_preset(preset, seed)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown domain preset `{preset}`")))?;
        let (ont, db) = generate_domain(&spec)?;
        Ok((Arc::new(ont), Arc::new(db)))
    }
}

/// Environment selection: a benchmark row (1..=6) and/or explicit overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub row: Option<usize>,
    pub ser: Option<f64>,
    pub masks: Option<bool>,
    pub user: Option<UserKind>,
}

impl EnvSection {
    pub fn resolve(&self) -> Result<EnvConfig, ConfigError> {
        let mut env = match self.row {
            Some(r) if (1..=6).contains(&r) => benchmark_envs()[r - 1],
            Some(r) => {
                return Err(ConfigError::Invalid(format!(
                    "env.row {r} outside the benchmark grid 1..=6"
                )))
            }
            None => benchmark_envs()[0],
        };
        if let Some(ser) = self.ser {
            if !(0.0..=1.0).contains(&ser) {
                return Err(ConfigError::Invalid(format!("env.ser {ser} outside [0,1]")));
            }
            env.ser = ser;
        }
        if let Some(masks) = self.masks {
            env.masks = masks;
        }
        if let Some(user) = self.user {
            env.user = user;
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Feudal,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

/// One training/evaluation task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub domain: DomainSection,
    pub env: EnvSection,
    pub policy: PolicySection,
    pub learner: LearnerConfig,
    pub schedule: Schedule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            seeds: default_seeds(),
            domain: DomainSection::default(),
            env: EnvSection::default(),
            policy: PolicySection::default(),
            learner: LearnerConfig::default(),
            schedule: Schedule::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        if cfg.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        cfg.learner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn task_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let row = self.env.row.map(|r| format!("env{r}")).unwrap_or_else(|| "env".into());
        format!(
            "{}-{}",
            self.domain.preset.as_deref().unwrap_or("domain"),
            row
        )
    }
}

/// Grid config: domains x env rows x policies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub domains: Vec<String>,
    pub envs: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub domain_seed: u64,
    pub learner: LearnerConfig,
    pub schedule: Schedule,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            domains: vec!["cr".into(), "sfr".into(), "lap".into()],
            envs: vec![1, 2, 3, 4, 5, 6],
            policies: vec![PolicyKind::Feudal],
            seeds: default_seeds(),
            domain_seed: 7,
            learner: LearnerConfig::default(),
            schedule: Schedule::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: BenchmarkConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.domains.is_empty() || self.envs.is_empty() || self.policies.is_empty() {
            return Err(ConfigError::Invalid(
                "benchmark grid needs domains, envs, and policies".into(),
            ));
        }
        if let Some(r) = self.envs.iter().find(|r| !(1..=6).contains(*r)) {
            return Err(ConfigError::Invalid(format!(
                "env row {r} outside the benchmark grid 1..=6"
            )));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// Expand into per-task experiment tuples: (task name, domain preset, env row).
    pub fn tasks(&self) -> Vec<(String, String, usize)> {
        let mut v = Vec::new();
        for d in &self.domains {
            for &e in &self.envs {
                v.push((format!("{d}-env{e}"), d.clone(), e));
            }
        }
        v
    }
}
