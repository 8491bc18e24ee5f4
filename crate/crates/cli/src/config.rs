//! Run configuration: a scenario preset patched by a JSON file and flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use psro_core::pipeline::PipelineConfig;
use psro_core::training::SearchConfig;
use psro_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub out: PathBuf,
    /// Replaces the preset hyperparameters by a random search when set.
    pub search: Option<SearchConfig>,
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_OUT: &str = "psro-out";

impl RunConfig {
    pub fn load(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let doc = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::MissingInput(p.display().to_string()),
                    _ => Error::Io(e),
                })?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        Self::from_value(doc, flags)
    }

    /// Accepted keys: `preset`, `out`, `search`, and any field of
    /// [`PipelineConfig`], merged recursively over the preset.
    pub fn from_value(doc: Value, flags: &Overrides) -> Result<Self> {
        let Value::Object(mut doc) = doc else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let preset = match doc.remove("preset") {
            Some(Value::String(s)) => Some(s),
            None => None,
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let name = flags.scenario.clone().or(preset).unwrap_or_else(|| "table".into());
        let out = match doc.remove("out") {
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            None => None,
            Some(v) => return Err(Error::Config(format!("out must be a path string, got {v}"))),
        };
        let search = match doc.remove("search") {
            Some(v) => Some(serde_json::from_value::<SearchConfig>(v).map_err(|e| Error::Config(format!("search: {e}")))?),
            None => None,
        };
        let mut base = serde_json::to_value(PipelineConfig::preset(&name)?)?;
        merge(&mut base, Value::Object(doc), "")?;
        let mut pipeline: PipelineConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(format!("schema: {e}")))?;
        if let Some(seed) = flags.seed {
            pipeline.seed = seed;
        }
        pipeline.validate()?;
        if let Some(s) = &search {
            if s.budget == 0 || s.repeats == 0 || s.epochs == 0 {
                return Err(Error::Config("search needs positive budget, repeats and epochs".into()));
            }
        }
        let out = flags.out.clone().or(out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Ok(Self { pipeline, out, search })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn reduced_dir(&self) -> PathBuf {
        self.out.join("reduced")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoint")
    }
}

/// Object-wise merge that refuses keys the preset does not have. Optional
/// fields serialized as `null` accept any value.
fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(Error::Config(format!("unknown key {here}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
