//! Run configuration: one TOML document for corpus, models, training,
//! sampling, evaluation and ablation, with `key=value` overrides.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decode::SamplingConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind, TrainConfig};
use crate::synth::CorpusConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerKind<T> {
    pub mplm: T,
    pub elm: T,
    pub plm: T,
}

impl<T> PerKind<T> {
    pub fn get(&self, kind: ModelKind) -> &T {
        match kind {
            ModelKind::Mplm => &self.mplm,
            ModelKind::Elm => &self.elm,
            ModelKind::Plm => &self.plm,
        }
    }
}

impl Default for PerKind<ModelConfig> {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self { mplm: m.clone(), elm: ModelConfig { num_layers: 1, ..m.clone() }, plm: m }
    }
}

impl Default for PerKind<TrainConfig> {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mplm: TrainConfig { seed: 1, ..t.clone() },
            elm: TrainConfig { seed: 2, ..t.clone() },
            plm: TrainConfig { lr: 1e-4, seed: 3, ..t },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pairs: usize,
    /// Target prompt length in semantic frames.
    pub prompt_frames: usize,
    pub max_source_frames: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { pairs: 100, prompt_frames: 10, max_source_frames: 20, seed: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub windows: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub sampling_seeds: Vec<u64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { windows: vec![5, 10, 20, 30], lambdas: vec![0.0, 0.1, 0.3, 0.5, 0.8, 1.0], sampling_seeds: vec![1, 2, 3] }
    }
}

/// Locations relative to the run root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: String,
    pub models: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { corpus: "corpus".into(), models: "models".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: PerKind<ModelConfig>,
    pub train: PerKind<TrainConfig>,
    pub sampling: SamplingConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        for kind in [ModelKind::Mplm, ModelKind::Elm, ModelKind::Plm] {
            self.model.get(kind).validate()?;
            self.train.get(kind).validate()?;
        }
        self.sampling.validate()?;
        if self.eval.prompt_frames == 0 || self.eval.max_source_frames == 0 {
            return Err(Error::config("eval prompt and source lengths must be positive"));
        }
        if self.ablate.windows.contains(&0) || self.ablate.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("ablation windows must be positive and lambdas non-negative"));
        }
        Ok(())
    }

    /// Parses `text`, applies `key.path=value` overrides, then validates.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Resolved config with every key marked `# published` when its default comes
    /// from the published setup, `# toy` otherwise.
    pub fn annotated(&self) -> String {
        let mut out = String::new();
        for line in self.to_toml().lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if line.starts_with('[') || key.is_empty() {
                out.push_str(line);
            } else {
                let origin = if PUBLISHED_KEYS.contains(&key) { "published" } else { "toy" };
                write!(out, "{line:<40} # {origin}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Keys whose defaults follow the published setup.
const PUBLISHED_KEYS: &[&str] = &[
    "acoustic_vocab",
    "dropout",
    "window",
    "lr",
    "decay_ratio",
    "mask_ratio_min",
    "mask_ratio_max",
    "span",
    "fusion_weight",
    "lambdas",
];

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::config(format!("{part} is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}
