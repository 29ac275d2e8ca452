//! Optional `key = value` settings file; flags override file values, file
//! values override built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use emocloze::{Error, Result};

#[derive(Debug, Default)]
pub struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileSettings::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut values = BTreeMap::new();
        for (idx, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::data(idx + 1, format!("expected `key = value`, got `{line}`"))
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileSettings { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::config(format!("settings key `{key}` has invalid value `{raw}`"))
            }),
        }
    }

    /// flag > file > default.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// flag > file; `false` when absent everywhere (presence flags).
    pub fn resolve_flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_overrides_default() {
        let dir = std::env::temp_dir().join(format!("emocloze-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# comment\nlstm-size = 48\nseed=11\n").unwrap();
        let s = FileSettings::load(Some(&path)).unwrap();
        assert_eq!(s.resolve(None, "lstm-size", 64usize).unwrap(), 48);
        assert_eq!(s.resolve(Some(80usize), "lstm-size", 64).unwrap(), 80);
        assert_eq!(s.resolve(None, "epochs", 20usize).unwrap(), 20);
        assert_eq!(s.resolve(None, "seed", 7u64).unwrap(), 11);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_value_is_a_config_error() {
        let dir = std::env::temp_dir().join(format!("emocloze-settings2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "epochs = banana\n").unwrap();
        let s = FileSettings::load(Some(&path)).unwrap();
        assert!(s.resolve::<usize>(None, "epochs", 20).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
