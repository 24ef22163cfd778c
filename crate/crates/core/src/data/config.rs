//! `key = value` run configuration.
//!
//! Recognised keys (paths are relative to the configuration file):
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `model` | base model name | `vldm-lite-baseline` |
//! | `cycle` | drive cycle CSV | required |
//! | `data` | measurement CSV | required |
//! | `t_end` | end of the training window [s] | cycle duration |
//! | `seed` | network initialization and batch order | `0` |
//! | `epochs` | passes over the batch elements | `1` |
//! | `max_steps` | cap on optimizer steps | none |
//! | `batch_element_length` | element length [s] | `10` |
//! | `batching` | `sequential` or `snapshot` | `sequential` |
//! | `pretrain` | `nipt`, `ccpt` or `none` | `none` |
//! | `freeze_gates` | keep the gates fixed | `false` |
//! | `hidden` | hidden layer width | `32` |
//! | `step_initial`, `step_multiplier`, `step_floor` | step-size schedule | `1e-3`, `0.95`, `1e-5` |
//! | `rel_tol`, `abs_tol` | solver tolerances | `1e-6`, `1e-8` |
//! | `history` | history CSV to write | `history.csv` |
//! | `checkpoint` | checkpoint to write | `model.ckpt` |
//! | `init_checkpoint` | checkpoint to start from | none |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMode {
    None,
    Nipt,
    Ccpt,
}

impl FromStr for PretrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "nipt" => Ok(Self::Nipt),
            "ccpt" => Ok(Self::Ccpt),
            _ => Err(format!("unknown pre-training `{s}` (nipt, ccpt, none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: String,
    pub cycle: PathBuf,
    pub data: PathBuf,
    pub t_end: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    pub batch_element_length: f64,
    pub snapshot_batching: bool,
    pub pretrain: PretrainMode,
    pub freeze_gates: bool,
    pub hidden: usize,
    pub step_initial: f64,
    pub step_multiplier: f64,
    pub step_floor: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub history: PathBuf,
    pub checkpoint: PathBuf,
    pub init_checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cycle = None;
        let mut data = None;
        let mut cfg = RunConfig {
            model: "vldm-lite-baseline".into(),
            cycle: PathBuf::new(),
            data: PathBuf::new(),
            t_end: None,
            seed: 0,
            epochs: 1,
            max_steps: None,
            batch_element_length: 10.0,
            snapshot_batching: false,
            pretrain: PretrainMode::None,
            freeze_gates: false,
            hidden: 32,
            step_initial: 1e-3,
            step_multiplier: 0.95,
            step_floor: 1e-5,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            history: base.join("history.csv"),
            checkpoint: base.join("model.ckpt"),
            init_checkpoint: None,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    msg: format!("expected `key = value`, found `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| ConfigError::Line { line, msg };
            fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String>
            where
                T::Err: std::fmt::Display,
            {
                value.parse::<T>().map_err(|e| format!("bad value for `{key}`: {e}"))
            }
            match key {
                "model" => cfg.model = value.to_string(),
                "cycle" => cycle = Some(base.join(value)),
                "data" => data = Some(base.join(value)),
                "t_end" => cfg.t_end = Some(num(key, value).map_err(bad)?),
                "seed" => cfg.seed = num(key, value).map_err(bad)?,
                "epochs" => cfg.epochs = num(key, value).map_err(bad)?,
                "max_steps" => cfg.max_steps = Some(num(key, value).map_err(bad)?),
                "batch_element_length" => cfg.batch_element_length = num(key, value).map_err(bad)?,
                "batching" => {
                    cfg.snapshot_batching = match value {
                        "sequential" => false,
                        "snapshot" => true,
                        _ => return Err(bad(format!("unknown batching `{value}` (sequential, snapshot)"))),
                    }
                }
                "pretrain" => cfg.pretrain = value.parse().map_err(bad)?,
                "freeze_gates" => cfg.freeze_gates = num(key, value).map_err(bad)?,
                "hidden" => cfg.hidden = num(key, value).map_err(bad)?,
                "step_initial" => cfg.step_initial = num(key, value).map_err(bad)?,
                "step_multiplier" => cfg.step_multiplier = num(key, value).map_err(bad)?,
                "step_floor" => cfg.step_floor = num(key, value).map_err(bad)?,
                "rel_tol" => cfg.rel_tol = num(key, value).map_err(bad)?,
                "abs_tol" => cfg.abs_tol = num(key, value).map_err(bad)?,
                "history" => cfg.history = base.join(value),
                "checkpoint" => cfg.checkpoint = base.join(value),
                "init_checkpoint" => cfg.init_checkpoint = Some(base.join(value)),
                _ => return Err(bad(format!("unknown key `{key}`"))),
            }
        }
        cfg.cycle = cycle.ok_or(ConfigError::Missing("cycle"))?;
        cfg.data = data.ok_or(ConfigError::Missing("data"))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_resolves_paths() {
        let text = "# run\ncycle = c.csv\ndata = m.csv  # two runs\nepochs = 3\npretrain = nipt\nbatching = snapshot\nt_end=60\n";
        let cfg = RunConfig::parse(text, Path::new("/runs")).unwrap();
        assert_eq!(cfg.cycle, PathBuf::from("/runs/c.csv"));
        assert_eq!(cfg.data, PathBuf::from("/runs/m.csv"));
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.pretrain, PretrainMode::Nipt);
        assert!(cfg.snapshot_batching);
        assert_eq!(cfg.t_end, Some(60.0));
        assert_eq!(cfg.step_initial, 1e-3);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("cycle = c\nepochs = many\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = RunConfig::parse("cycle = c\ncolour = red\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("unknown key"));
        let err = RunConfig::parse("cycle = c\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Missing("data")));
    }
}
