//! Flat key=value configuration files. Values from the file fill in
//! whatever the command line left unset.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: HashMap<String, String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not key=value: {raw:?}", lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}={raw:?}: {e}"),
            },
        }
    }

    /// Flag value, else config value, else default.
    pub fn resolve<T: std::str::FromStr + Clone>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nn_f = 8\nseed=5\n").unwrap();
        let config = Config::load(Some(&path)).unwrap();
        assert_eq!(config.get::<usize>("n_f").unwrap(), Some(8));
        assert_eq!(config.resolve(None, "seed", 0u64).unwrap(), 5);
        assert_eq!(config.resolve(Some(9u64), "seed", 0).unwrap(), 9);
        assert_eq!(config.resolve::<usize>(None, "missing", 3).unwrap(), 3);
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "just-words\n").unwrap();
        assert!(Config::load(Some(&path)).is_err());

        std::fs::write(&path, "n_f = banana\n").unwrap();
        let config = Config::load(Some(&path)).unwrap();
        assert!(config.get::<usize>("n_f").is_err());
    }
}
