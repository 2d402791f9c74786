use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use advfeat_core::attack::AttackSpec;
use advfeat_core::experiment::{DatasetParams, EpsilonScaling, EvalConfig, ExperimentConfig, FlippedConfig, Scenario};
use advfeat_core::net::NetworkConfig;
use advfeat_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub m_plus: usize,
    pub m_minus: usize,
    pub gamma: f64,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub scenario: Scenario,
    pub student: TrainConfig,
    #[serde(default)]
    pub epsilon_scaling: Option<EpsilonScaling>,
    #[serde(default)]
    pub flipped: Option<FlippedConfig>,
    pub eval: EvalConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// One document holding every knob; `train` configures the teacher (and
/// the standalone `train` command), `experiment.student` the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: DatasetParams,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub attack: AttackSpec,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

impl CliConfig {
    pub fn from_experiment(e: &ExperimentConfig) -> CliConfig {
        CliConfig {
            dataset: e.dataset.clone(),
            network: NetworkSection {
                m_plus: e.network.m_plus,
                m_minus: e.network.m_minus,
                gamma: e.network.gamma,
                init_scale: e.network.init_scale,
            },
            train: e.teacher.clone(),
            attack: e.attack.clone(),
            experiment: ExperimentSection {
                name: e.name.clone(),
                scenario: e.scenario,
                student: e.student.clone(),
                epsilon_scaling: e.epsilon_scaling,
                flipped: e.flipped.clone(),
                eval: e.eval.clone(),
                seed: e.seed,
            },
            output: OutputSection { dir: PathBuf::from("runs") },
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            d: self.dataset.d,
            m_plus: self.network.m_plus,
            m_minus: self.network.m_minus,
            gamma: self.network.gamma,
            init_scale: self.network.init_scale,
        }
    }

    /// The experiment this document describes. When
    /// `experiment.epsilon_scaling` is set it overrides `attack.epsilon`.
    pub fn experiment_config(&self) -> ExperimentConfig {
        let mut e = ExperimentConfig {
            name: self.experiment.name.clone(),
            scenario: self.experiment.scenario,
            dataset: self.dataset.clone(),
            network: self.network_config(),
            teacher: self.train.clone(),
            student: self.experiment.student.clone(),
            attack: self.attack.clone(),
            epsilon_scaling: self.experiment.epsilon_scaling,
            flipped: self.experiment.flipped.clone(),
            eval: self.experiment.eval.clone(),
            seed: self.experiment.seed,
        };
        e.set_d(self.dataset.d);
        e
    }
}

/// Resolves preset, file and overrides, in that order, into a config.
pub fn resolve(preset: Option<&str>, file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<CliConfig> {
    let base = match preset {
        Some(name) => ExperimentConfig::preset(name)
            .ok_or_else(|| anyhow!("unknown preset `{name}` (known: {})", ExperimentConfig::PRESETS.join(", ")))?,
        None => ExperimentConfig::desk_noise(),
    };
    let mut doc = serde_json::to_value(CliConfig::from_experiment(&base))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        let user: Value = serde_json::from_str(&text).with_context(|| format!("config file {} is not valid JSON", path.display()))?;
        merge(&mut doc, user);
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        doc["experiment"]["seed"] = Value::from(seed);
    }
    let text = doc.to_string();
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: CliConfig = serde_path_to_error::deserialize(de).map_err(|e| anyhow!("config error at `{}`: {}", e.path(), e.inner()))?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is read as JSON when it parses and as a
/// string otherwise.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects <dotted.path>=<value>, got `{assignment}`"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set path `{path}` has an empty segment");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for (i, key) in keys.iter().enumerate() {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| anyhow!("--set path `{}` does not name an object", keys[..i].join(".")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        slot = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
    }
    unreachable!("loop returns on the last key")
}
