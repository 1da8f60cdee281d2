use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Every key accepted in config files and as flags.
pub const KNOWN_KEYS: &[&str] = &[
    "d",
    "m",
    "n_samples",
    "kappa",
    "teacher_mode",
    "eta",
    "lambda0",
    "lambda1",
    "t1_iters",
    "t2_iters",
    "j_max",
    "log_every",
    "seed_teacher",
    "seed_data",
    "seed_init",
    "gradient_mode",
    "learner_activation",
    "threshold_factor",
    "r",
    "q_collections",
    "n_features",
    "ridge",
    "n_mc",
];

/// Flat key/value settings for one subcommand.
///
/// File grammar: `key = value` lines, `#` starts a comment, `[name]` opens
/// a section. Keys before the first header apply to every subcommand; keys
/// under `[name]` only when running `name`, overriding the global ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, section: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, section, path)
    }

    pub fn parse(text: &str, section: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut global = BTreeMap::new();
        let mut local = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(i + 1, format!("unterminated section header `{line}`")))?
                    .trim();
                if name.is_empty() {
                    return Err(err(i + 1, "empty section name".into()));
                }
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(err(i + 1, format!("unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(err(i + 1, format!("key `{k}` has no value")));
            }
            match current.as_deref() {
                None => global.insert(k.to_string(), v.to_string()),
                Some(s) if s == section => local.insert(k.to_string(), v.to_string()),
                Some(_) => None,
            };
        }
        global.extend(local);
        Ok(ExperimentConfig { entries: global })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list of reals.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad value `{s}` in `{key}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Overlays the training keys on `base` and validates the result.
    pub fn train_config(&self, base: TrainConfig) -> Result<TrainConfig> {
        let c = TrainConfig {
            d: self.get_or("d", base.d)?,
            m: self.get_or("m", base.m)?,
            n_samples: self.get_or("n_samples", base.n_samples)?,
            kappa: self.get_or("kappa", base.kappa)?,
            teacher_mode: self.get_or("teacher_mode", base.teacher_mode)?,
            eta: self.get_or("eta", base.eta)?,
            lambda0: self.get_or("lambda0", base.lambda0)?,
            lambda1: self.get_or("lambda1", base.lambda1)?,
            threshold_factor: self.get_or("threshold_factor", base.threshold_factor)?,
            t1_iters: self.get_or("t1_iters", base.t1_iters)?,
            t2_iters: self.get_or("t2_iters", base.t2_iters)?,
            j_max: self.get_or("j_max", base.j_max)?,
            log_every: self.get_or("log_every", base.log_every)?,
            seed_teacher: self.get_or("seed_teacher", base.seed_teacher)?,
            seed_data: self.get_or("seed_data", base.seed_data)?,
            seed_init: self.get_or("seed_init", base.seed_init)?,
            gradient_mode: self.get_or("gradient_mode", base.gradient_mode)?,
            learner_activation: self.get_or("learner_activation", base.learner_activation)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_globals() {
        let text = "d = 5 # dimension\nm=7\n[train]\nd = 9\n[fig1]\nm = 100\n";
        let c = ExperimentConfig::parse(text, "train", Path::new("x.cfg")).unwrap();
        assert_eq!(c.get::<usize>("d").unwrap(), Some(9));
        assert_eq!(c.get::<usize>("m").unwrap(), Some(7));
    }

    #[test]
    fn unknown_key_names_line() {
        let err = ExperimentConfig::parse("d = 3\nbogus = 1\n", "train", Path::new("x.cfg")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_is_config_error() {
        let c = ExperimentConfig::parse("d = three\n", "train", Path::new("x.cfg")).unwrap();
        assert!(matches!(c.train_config(TrainConfig::default()), Err(Error::Config(_))));
    }
}
