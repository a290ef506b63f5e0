use std::path::{Path, PathBuf};

use qfreg::health_stage::HealthConfig;
use qfreg::quantile_stage::QuantileModelConfig;
use qfreg::simkit::{FitMode, ScenarioId, ScenarioSpec};
use qfreg::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// JSON run configuration shared by all sub-commands.
///
/// The `scenario`, `quantile` and `health` objects are partial: listed keys
/// override the defaults, everything else keeps its default value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario_id: Option<ScenarioId>,
    /// Desk scale (n = 200, 20 replicates) unless set to `false`.
    pub desk_scale: Option<bool>,
    pub scenario: Option<Value>,
    pub quantile: Option<Value>,
    pub health: Option<Value>,
    pub modes: Option<Vec<FitMode>>,
    pub resample_exposures: Option<bool>,

    pub exposures: Option<PathBuf>,
    pub counts: Option<PathBuf>,
    pub means: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// JSON file with a `theta` matrix, e.g. a `truth.json` from `simulate`.
    pub theta: Option<PathBuf>,
    pub theta_summary: Option<PathBuf>,
    /// `chain:n` or the path of an edge-list CSV.
    pub adjacency: Option<String>,
    /// Health chain CSV read by `effects`.
    pub chain: Option<PathBuf>,

    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Settings resolved from the config file and the command line.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub desk_scale: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.exists() {
            return Err(Error::Config(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative input paths are taken relative to the config file
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.exposures,
                &mut cfg.counts,
                &mut cfg.means,
                &mut cfg.covariates,
                &mut cfg.theta,
                &mut cfg.theta_summary,
                &mut cfg.chain,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let Some(a) = &mut cfg.adjacency {
                if !a.starts_with("chain:") && Path::new(a).is_relative() {
                    *a = dir.join(&*a).display().to_string();
                }
            }
        }
        Ok(cfg)
    }

    pub fn resolve(
        self,
        seed: Option<u64>,
        out: Option<PathBuf>,
        desk_flag: bool,
    ) -> Result<Resolved> {
        let seed = seed
            .or(self.seed)
            .ok_or_else(|| Error::Config("a seed is required (--seed or \"seed\")".into()))?;
        let out = out
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        let desk_scale = desk_flag || self.desk_scale.unwrap_or(true);
        for p in [
            &self.exposures,
            &self.counts,
            &self.means,
            &self.covariates,
            &self.theta,
            &self.theta_summary,
            &self.chain,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "input {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(Resolved {
            raw: self,
            seed,
            out,
            desk_scale,
        })
    }
}

impl Resolved {
    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let id = self.raw.scenario_id.unwrap_or(ScenarioId::S1);
        let base = if self.desk_scale {
            ScenarioSpec::desk(id)
        } else {
            ScenarioSpec::full(id)
        };
        let mut spec: ScenarioSpec = overlay(&base, self.raw.scenario.as_ref(), "scenario")?;
        spec.seed = self.seed;
        spec.validate()?;
        Ok(spec)
    }

    pub fn quantile(&self) -> Result<QuantileModelConfig> {
        let mut q: QuantileModelConfig = overlay(
            &QuantileModelConfig::default(),
            self.raw.quantile.as_ref(),
            "quantile",
        )?;
        q.seed = self.seed;
        q.validate()?;
        Ok(q)
    }

    pub fn health(&self) -> Result<HealthConfig> {
        let mut h: HealthConfig =
            overlay(&HealthConfig::default(), self.raw.health.as_ref(), "health")?;
        h.seed = self.seed;
        h.validate()?;
        Ok(h)
    }

    pub fn require<'a, T>(&self, v: &'a Option<T>, key: &str, command: &str) -> Result<&'a T> {
        v.as_ref()
            .ok_or_else(|| Error::Config(format!("`{command}` needs \"{key}\" in the config")))
    }
}

/// Applies the keys of `over` on top of the serialized `base`.
fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    over: Option<&Value>,
    what: &str,
) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Some(o) = over {
        if !o.is_object() {
            return Err(Error::Config(format!("\"{what}\" must be an object")));
        }
        merge(&mut v, o);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("\"{what}\": {e}")))
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
