//! Flat dotted-key configuration with three-layer precedence:
//! command-line flag > JSON config file > built-in default.
//!
//! Every command declares its full key set up front; unknown keys in either
//! the file or the flags are usage errors so typos never silently fall back
//! to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsgs_core::{Error, Result};
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

impl Config {
    pub fn with_defaults(defaults: &[(&str, Value)]) -> Config {
        Config {
            values: defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    fn set(&mut self, key: &str, value: Value, source: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::Usage(format!("unknown {source} key {key:?}"))),
        }
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid JSON in {}: {e}", path.display())))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::Config(format!("{} must be a JSON object", path.display())))?;
        for (k, v) in obj {
            if v.is_object() || v.is_array() {
                return Err(Error::Config(format!(
                    "config key {k:?} must be a scalar (flat dotted keys only)"
                )));
            }
            self.set(k, v.clone(), "config")?;
        }
        Ok(())
    }

    /// Consumes `--key value` / `--key=value` pairs. `--config FILE` is
    /// handled by the caller and must already be stripped.
    pub fn apply_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let body = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Usage(format!("expected --key, got {arg:?}")))?;
            let (key, raw) = if let Some((k, v)) = body.split_once('=') {
                i += 1;
                (k.to_string(), v.to_string())
            } else {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Usage(format!("flag --{body} is missing a value")))?;
                i += 2;
                (body.to_string(), v.clone())
            };
            // Numbers and booleans parse as JSON; anything else is a string.
            let value = match serde_json::from_str::<Value>(&raw) {
                Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
                _ => Value::String(raw),
            };
            self.set(&key, value, "flag")?;
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.values
            .get(key)
            .ok_or_else(|| Error::Usage(format!("internal: key {key:?} not declared")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::Usage(format!("key {key:?} must be a number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.f64(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Usage(format!("key {key:?} must be a non-negative integer")));
        }
        Ok(v as usize)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        Ok(self.usize(key)? as u64)
    }

    pub fn u32(&self, key: &str) -> Result<u32> {
        Ok(self.usize(key)? as u32)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| Error::Usage(format!("key {key:?} must be a string")))
    }

    /// Required path key: empty string means "not provided".
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let s = self.str(key)?;
        if s.is_empty() {
            return Err(Error::Usage(format!("required key {key:?} is not set")));
        }
        Ok(PathBuf::from(s))
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        let s = self.str(key)?;
        Ok(if s.is_empty() { None } else { Some(PathBuf::from(s)) })
    }
}

/// Splits `--config FILE` out of the raw args, builds the layered config.
pub fn build_config(defaults: &[(&str, Value)], args: &[String]) -> Result<Config> {
    let mut cfg = Config::with_defaults(defaults);
    let mut rest: Vec<String> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" || args[i].starts_with("--config=") {
            let file = if let Some((_, v)) = args[i].split_once('=') {
                i += 1;
                v.to_string()
            } else {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Usage("--config is missing a file path".into()))?;
                i += 2;
                v.clone()
            };
            cfg.load_file(Path::new(&file))?;
        } else {
            rest.push(args[i].clone());
            i += 1;
        }
    }
    cfg.apply_flags(&rest)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn defaults() -> Vec<(&'static str, Value)> {
        vec![
            ("alpha", Value::from(1.0)),
            ("beta", Value::from(2.0)),
            ("name", Value::from("default")),
        ]
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut f = std::fs::File::create(&path).unwrap();
        write!(f, "{{\"alpha\": 10.0, \"beta\": 20.0}}").unwrap();
        drop(f);
        let args: Vec<String> = ["--config", path.to_str().unwrap(), "--beta", "200"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cfg = build_config(&defaults(), &args).unwrap();
        assert_eq!(cfg.f64("alpha").unwrap(), 10.0); // file beats default
        assert_eq!(cfg.f64("beta").unwrap(), 200.0); // flag beats file
        assert_eq!(cfg.str("name").unwrap(), "default"); // default survives
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let args: Vec<String> = ["--gamma", "3"].iter().map(|s| s.to_string()).collect();
        let err = build_config(&defaults(), &args).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\"gamma\": 3}").unwrap();
        let args: Vec<String> =
            ["--config", path.to_str().unwrap()].iter().map(|s| s.to_string()).collect();
        let err = build_config(&defaults(), &args).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn equals_syntax_and_string_values() {
        let args: Vec<String> = ["--name=custom", "--alpha=2.5"].iter().map(|s| s.to_string()).collect();
        let cfg = build_config(&defaults(), &args).unwrap();
        assert_eq!(cfg.str("name").unwrap(), "custom");
        assert_eq!(cfg.f64("alpha").unwrap(), 2.5);
    }

    #[test]
    fn integer_validation() {
        let args: Vec<String> = ["--alpha", "2.5"].iter().map(|s| s.to_string()).collect();
        let cfg = build_config(&defaults(), &args).unwrap();
        assert!(cfg.usize("alpha").is_err());
        assert_eq!(cfg.f64("alpha").unwrap(), 2.5);
    }
}
