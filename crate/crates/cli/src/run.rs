//! Run root layout: shared corpus and models, plus one folder per invocation
//! holding the echoed config and that invocation's outputs.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use lmvc_core::model::load_checkpoint;
use lmvc_core::{Error, LmModel, ModelKind, Result, RunConfig};

use crate::Common;

pub struct Run {
    pub root: PathBuf,
    pub dir: PathBuf,
    pub config: RunConfig,
}

impl Run {
    pub fn open(common: &Common, name: &str) -> Result<Self> {
        let text = match &common.config {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.clone())),
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        let config = RunConfig::from_toml_with(&text, &common.overrides)?;
        let runs = common.run_root.join("runs");
        fs::create_dir_all(&runs)?;
        let dir = (1..)
            .map(|n| runs.join(format!("{name}-{n:03}")))
            .find_map(|d| match fs::create_dir(&d) {
                Ok(()) => Some(Ok(d)),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => None,
                Err(e) => Some(Err(e)),
            })
            .expect("unbounded search")?;
        fs::write(dir.join("config.toml"), &text)?;
        fs::write(dir.join("overrides.txt"), common.overrides.iter().map(|o| format!("{o}\n")).collect::<String>())?;
        fs::write(dir.join("resolved.toml"), config.annotated())?;
        Ok(Self { root: common.run_root.clone(), dir, config })
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.corpus)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.models)
    }

    pub fn model_path(&self, kind: ModelKind) -> PathBuf {
        self.models_dir().join(format!("{}.ckpt", kind.name()))
    }

    pub fn load_model(&self, kind: ModelKind) -> Result<LmModel> {
        load_model_at(&self.model_path(kind), kind)
    }
}

pub fn load_model_at(path: &Path, kind: ModelKind) -> Result<LmModel> {
    let ck = load_checkpoint(path)?;
    if ck.model.kind() != kind {
        return Err(Error::Config(format!("{} holds a {} model, expected {}", path.display(), ck.model.kind().name(), kind.name())));
    }
    Ok(ck.model)
}
