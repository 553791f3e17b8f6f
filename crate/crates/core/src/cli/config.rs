use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_tabulated;
use crate::noise::SpectralModel;
use crate::simulate::{Engine, Schedule, SequenceFamily, SuiteOptions};
use crate::spectro::Method;

/// Rate extraction and inversion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Points with `t <= 3 tau_b_hint` are left out of rate fits. Defaults to
    /// the model correlation time.
    pub tau_b_hint: Option<f64>,
    pub tail_window: Option<[usize; 2]>,
    pub method: Method,
    pub baseline: bool,
    pub baseline_window: Option<[usize; 2]>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tau_b_hint: None,
            tail_window: None,
            method: Method::Corrected,
            baseline: false,
            baseline_window: None,
        }
    }
}

fn default_trials() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tau_max: f64,
    pub m: usize,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub model: SpectralModel,
    #[serde(default)]
    pub sequence: SequenceFamily,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub fit: FitConfig,
}

/// Default tail window: the upper half of the suite, `[19, 40]` for `m = 40`.
pub fn default_window(m: usize) -> [usize; 2] {
    [((19 * m + 20) / 40).max(1), m]
}

fn check_window(name: &str, w: [usize; 2], m: usize) -> Result<()> {
    if w[0] < 1 || w[1] > m || w[1] < w[0] + 3 {
        return Err(Error::Config(format!(
            "fit.{name} = [{}, {}] must satisfy 1 <= lo, lo + 3 <= hi <= m = {m}",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return Err(Error::Config(format!("tau_max = {} must be a positive number of seconds", self.tau_max)));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        self.model.validate().map_err(cfg)?;
        self.schedule.validate().map_err(cfg)?;
        self.sequence.at(self.tau_max).map_err(cfg)?;
        if self.engine == Engine::MonteCarlo && self.trials < 100 {
            return Err(Error::Config(format!(
                "trials = {} is below the Monte Carlo minimum of 100",
                self.trials
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt = {dt} must be positive")));
            }
        }
        if let Some(h) = self.fit.tau_b_hint {
            if !(h >= 0.0) {
                return Err(Error::Config(format!("fit.tau_b_hint = {h} must be non-negative")));
            }
        }
        if let Some(w) = self.fit.tail_window {
            check_window("tail_window", w, self.m)?;
        }
        if let Some(w) = self.fit.baseline_window {
            check_window("baseline_window", w, self.m)?;
        }
        Ok(())
    }

    pub fn suite_options(&self) -> SuiteOptions {
        SuiteOptions {
            family: self.sequence.clone(),
            schedule: self.schedule.clone(),
            trials: self.trials,
            seed: self.seed,
            dt: self.dt,
        }
    }

    pub fn tau_b_hint(&self) -> f64 {
        self.fit
            .tau_b_hint
            .or_else(|| self.model.correlation_time())
            .unwrap_or(0.0)
    }

    pub fn tail_window(&self) -> [usize; 2] {
        self.fit.tail_window.unwrap_or_else(|| default_window(self.m))
    }
}

/// A model table, with a tabulated `path = "..."` replaced by inline arrays.
/// Relative paths resolve against `base`.
pub fn resolve_model(mut value: toml::Value, base: &Path) -> Result<SpectralModel> {
    if let Some(table) = value.as_table_mut() {
        if table.get("kind").and_then(|k| k.as_str()) == Some("tabulated") {
            if let Some(p) = table.remove("path") {
                let p = p
                    .as_str()
                    .ok_or_else(|| Error::Config("model.path must be a string".into()))?;
                let path = base.join(p);
                let (w, s) = read_tabulated(&path)?;
                table.insert("omega".into(), w.into());
                table.insert("s".into(), s.into());
            }
        }
    }
    let model: SpectralModel = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("model: {}", e.message())))?;
    model.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(model)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a TOML run configuration, or the `config` recorded in a suite
/// manifest (`.json`).
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read(path)?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let c = v.get("config").cloned().ok_or_else(|| {
            Error::Config(format!("{} has no 'config' entry", path.display()))
        })?;
        serde_json::from_value(c).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        let mut v: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if let Some(m) = v.remove("model") {
            let model = resolve_model(m, &base_dir(path))?;
            v.insert(
                "model".into(),
                toml::Value::try_from(&model).map_err(|e| Error::Config(e.to_string()))?,
            );
        }
        v.try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// A reference spectrum from a model file (a `[model]` table or a bare
/// model), a run configuration or a suite manifest. Also returns the suite
/// `tau_max` when the source records one.
pub fn load_truth(path: &Path) -> Result<(SpectralModel, Option<f64>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let c = load_config(path)?;
        return Ok((c.model, Some(c.tau_max)));
    }
    let text = read(path)?;
    let v: toml::Table = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    if v.contains_key("tau_max") {
        let c = load_config(path)?;
        return Ok((c.model, Some(c.tau_max)));
    }
    let model = match v.get("model") {
        Some(m) => m.clone(),
        None => toml::Value::Table(v),
    };
    Ok((resolve_model(model, &base_dir(path))?, None))
}
