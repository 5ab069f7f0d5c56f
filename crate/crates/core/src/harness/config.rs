//! Run configuration: defaults, config files (JSON or flat key=value),
//! and CLI flag overrides (flags win).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the root directory for all run outputs.
pub const OUTPUT_ROOT_ENV: &str = "ALDA_LAB_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

/// Full training budget; the desk-scale default is `DESK_TRAIN_STEPS`.
pub const FULL_TRAIN_STEPS: usize = 300_000;
pub const DESK_TRAIN_STEPS: usize = 50_000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub episodes: usize,
    pub perturbation: String,
    pub group_order: usize,
    pub beta: f32,
    pub w_recon: f32,
    pub w_commit: f32,
    pub lambda: f32,
    pub beta_prior: f32,
    pub finetune_steps: usize,
    /// When true, `steps` defaults to the full budget instead of desk scale.
    pub full_scale: bool,
    pub demos: PathBuf,
    pub out: PathBuf,
    pub model: PathBuf,
    pub baseline_model: PathBuf,
    pub run_id: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            task: "reachgrasp".into(),
            seed: 0,
            steps: DESK_TRAIN_STEPS,
            batch: 8,
            lr: 1e-4,
            episodes: 500,
            perturbation: "none".into(),
            group_order: 4,
            beta: 100.0,
            w_recon: 1.0,
            w_commit: 0.1,
            lambda: 0.1,
            beta_prior: 0.1,
            finetune_steps: 500,
            full_scale: false,
            demos: PathBuf::from("demos"),
            out: output_root(),
            model: PathBuf::from("model"),
            baseline_model: PathBuf::from("baseline"),
            run_id: "run".into(),
        }
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn bad(msg: String) -> NumError {
    NumError::InvalidArgument(msg)
}

impl RunConfig {
    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| bad(format!("config key `{key}`: cannot parse `{v}`")))
        }
        match key {
            "schema_version" => {
                let v: u32 = parse(key, value)?;
                if v != CONFIG_SCHEMA_VERSION {
                    return Err(bad(format!(
                        "unsupported config schema_version {v} (expected {CONFIG_SCHEMA_VERSION})"
                    )));
                }
            }
            "task" => self.task = value.to_string(),
            "seed" => self.seed = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "perturbation" => self.perturbation = value.to_string(),
            "group_order" => self.group_order = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "w_recon" => self.w_recon = parse(key, value)?,
            "w_commit" => self.w_commit = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta_prior" => self.beta_prior = parse(key, value)?,
            "finetune_steps" => self.finetune_steps = parse(key, value)?,
            "full_scale" => self.full_scale = parse(key, value)?,
            "demos" => self.demos = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "model" => self.model = PathBuf::from(value),
            "baseline_model" => self.baseline_model = PathBuf::from(value),
            "run_id" => self.run_id = value.to_string(),
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Loads a config file: JSON object (keys as in `set`) or flat
    /// `key=value` lines (`#` comments and blank lines ignored).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)?;
            for (k, v) in map {
                let s = match &v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                self.set(&k, &s)?;
            }
        } else {
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    bad(format!(
                        "{}:{}: expected key=value, got `{line}`",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                self.set(k.trim(), v.trim())?;
            }
        }
        Ok(())
    }

    /// Builds a config from an optional file plus flag overrides, in
    /// precedence order: defaults < file < flags.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if cfg.full_scale && cfg.steps == DESK_TRAIN_STEPS {
            cfg.steps = FULL_TRAIN_STEPS;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 || self.episodes == 0 {
            return Err(bad("steps, batch, and episodes must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad(format!("learning rate {} out of range", self.lr)));
        }
        crate::factorworld::env::Task::parse(&self.task)
            .ok_or_else(|| bad(format!("unknown task `{}`", self.task)))?;
        crate::factorworld::perturb::Perturbation::parse(&self.perturbation)
            .ok_or_else(|| bad(format!("unknown perturbation `{}`", self.perturbation)))?;
        crate::equiadapt::CyclicGroup::new(self.group_order).map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// Writes the fully resolved config into the run's output manifest.
    pub fn write_manifest(&self, dir: &Path, extra: serde_json::Value) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let manifest = serde_json::json!({
            "schema_version": CONFIG_SCHEMA_VERSION,
            "config": self,
            "results": extra,
        });
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
