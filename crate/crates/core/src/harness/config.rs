use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use super::experiment::ReportFormat;
use super::{Algo, DecodeSettings, HarnessError};
use crate::model::{GenSpec, ModelPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Parses the flat `key = value` format. `#` starts a comment; later
/// occurrences of a key win.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            text: raw.to_string(),
        })?;
        out.insert(key.trim().trim_start_matches("--").to_string(), value.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Files { draft: PathBuf, target: PathBuf },
    Gen(GenSpec),
}

impl ModelSource {
    pub fn load(&self, temperature: f64) -> Result<ModelPair, HarnessError> {
        Ok(match self {
            ModelSource::Files { draft, target } => ModelPair::load(draft, target, temperature)?,
            ModelSource::Gen(spec) => ModelPair::generate(spec, temperature)?,
        })
    }
}

/// One cell family of an experiment: fixed algorithm and knobs, run over
/// `trials` seeds and `prompts` prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub k: usize,
    pub l: usize,
    pub temperature: f64,
    pub models: ModelSource,
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub trials: usize,
    pub stop_at_eos: bool,
    pub timing: bool,
}

impl RunConfig {
    /// Checks ranges and forces `K = 1` for the single-draft algorithms.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        if self.k == 0 || self.l == 0 {
            return Err(ConfigError::Invalid(format!("need K >= 1 and L >= 1, got K={} L={}", self.k, self.l)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError::Invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.algo.single_draft() {
            self.k = 1;
        }
        Ok(self)
    }

    pub fn settings(&self) -> DecodeSettings {
        DecodeSettings {
            stop_at_eos: self.stop_at_eos,
            timing: self.timing,
            ..DecodeSettings::new(self.algo, self.k, self.l, self.max_tokens)
        }
    }
}

/// A grid of run configurations, as read from a config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub algos: Vec<Algo>,
    pub ks: Vec<usize>,
    pub ls: Vec<usize>,
    pub temperatures: Vec<f64>,
    pub models: ModelSource,
    pub prompts: usize,
    pub prompt_len: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub trials: usize,
    pub stop_at_eos: bool,
    pub timing: bool,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            algos: vec![Algo::SpectrGbv],
            ks: vec![2],
            ls: vec![4],
            temperatures: vec![1.0],
            models: ModelSource::Gen(GenSpec {
                vocab_size: 8,
                order: 1,
                seed: 0,
                concentration: 1.0,
                lambda: Some(0.5),
            }),
            prompts: 4,
            prompt_len: 4,
            max_tokens: 64,
            seed: 0,
            trials: 1,
            stop_at_eos: true,
            timing: false,
            out: None,
            format: ReportFormat::Csv,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    let items = value
        .split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                reason: format!("cannot parse {:?}", s.trim()),
            })
        })
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
            reason: "empty list".into(),
        });
    }
    Ok(items)
}

fn one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: "cannot parse".into(),
    })
}

impl ExperimentSpec {
    pub const KEYS: [&'static str; 16] = [
        "algo",
        "K",
        "L",
        "temperature",
        "draft-model",
        "target-model",
        "gen",
        "prompts",
        "prompt-len",
        "max-tokens",
        "seed",
        "trials",
        "stop-at-eos",
        "timing",
        "out",
        "format",
    ];

    /// Sets one key; list-valued keys (`algo`, `K`, `L`, `temperature`)
    /// take comma-separated values.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "algo" => self.algos = list(key, value)?,
            "K" | "k" => self.ks = list(key, value)?,
            "L" | "l" => self.ls = list(key, value)?,
            "temperature" | "T" => self.temperatures = list(key, value)?,
            "draft-model" | "target-model" => {
                let path = PathBuf::from(value);
                let (mut draft, mut target) = match &self.models {
                    ModelSource::Files { draft, target } => (draft.clone(), target.clone()),
                    ModelSource::Gen(_) => (PathBuf::new(), PathBuf::new()),
                };
                if key == "draft-model" {
                    draft = path;
                } else {
                    target = path;
                }
                self.models = ModelSource::Files { draft, target };
            }
            "gen" => {
                let spec: GenSpec = value.parse().map_err(|e: crate::model::ModelError| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    reason: e.to_string(),
                })?;
                self.models = ModelSource::Gen(spec);
            }
            "prompts" => self.prompts = one(key, value)?,
            "prompt-len" => self.prompt_len = one(key, value)?,
            "max-tokens" => self.max_tokens = one(key, value)?,
            "seed" => self.seed = one(key, value)?,
            "trials" => self.trials = one(key, value)?,
            "stop-at-eos" => self.stop_at_eos = one(key, value)?,
            "timing" => self.timing = one(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "format" => self.format = one(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn apply_all(&mut self, map: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        for (k, v) in map {
            self.apply(k, v)?;
        }
        Ok(())
    }

    pub fn from_config_text(text: &str) -> Result<Self, ConfigError> {
        let mut spec = Self::default();
        spec.apply_all(&parse_config_file(text)?)?;
        Ok(spec)
    }

    /// Expands the grid in `algo × K × L × T` order. Single-draft
    /// algorithms appear once per `(L, T)`.
    pub fn configs(&self) -> Result<Vec<RunConfig>, ConfigError> {
        if let ModelSource::Files { draft, target } = &self.models {
            if draft.as_os_str().is_empty() || target.as_os_str().is_empty() {
                return Err(ConfigError::Invalid("both draft-model and target-model are required".into()));
            }
        }
        let mut out: Vec<RunConfig> = Vec::new();
        for &algo in &self.algos {
            for &k in &self.ks {
                for &l in &self.ls {
                    for &temperature in &self.temperatures {
                        let cfg = RunConfig {
                            algo,
                            k,
                            l,
                            temperature,
                            models: self.models.clone(),
                            prompts: self.prompts,
                            prompt_len: self.prompt_len,
                            max_tokens: self.max_tokens,
                            seed: self.seed,
                            trials: self.trials,
                            stop_at_eos: self.stop_at_eos,
                            timing: self.timing,
                        }
                        .validated()?;
                        if !out.contains(&cfg) {
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let text = "# grid\nalgo = sd, spectr-gbv\nK = 1,3 # drafts\nL=4\n\nseed = 7\ngen = 6,1,3,0.5,0.8\n";
        let spec = ExperimentSpec::from_config_text(text).unwrap();
        assert_eq!(spec.algos, vec![Algo::Sd, Algo::SpectrGbv]);
        assert_eq!(spec.ks, vec![1, 3]);
        assert_eq!(spec.seed, 7);
        let cfgs = spec.configs().unwrap();
        // sd collapses to K = 1
        assert_eq!(cfgs.len(), 3);
        assert!(cfgs.iter().all(|c| c.algo != Algo::Sd || c.k == 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_config_file("algo sd"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ExperimentSpec::from_config_text("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ExperimentSpec::from_config_text("K = two"), Err(ConfigError::Value { .. })));
        let spec = ExperimentSpec::from_config_text("temperature = 0").unwrap();
        assert!(spec.configs().is_err());
        let spec = ExperimentSpec::from_config_text("draft-model = a.json").unwrap();
        assert!(spec.configs().is_err());
    }

    #[test]
    fn later_values_override() {
        let mut spec = ExperimentSpec::from_config_text("L = 2\nseed = 1").unwrap();
        spec.apply("L", "8").unwrap();
        assert_eq!(spec.ls, vec![8]);
        assert_eq!(spec.seed, 1);
    }
}
