use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sat_core::network::{parse_key_values, parse_value};
use sat_core::{Error, Result};

/// Values from a `key = value` config file; command-line flags win.
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            for (k, v) in parse_key_values(&text)? {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::Config(format!(
                        "{}: unknown key `{k}` (expected one of: {})",
                        path.display(),
                        allowed.join(", ")
                    )));
                }
                values.insert(k, v);
            }
        }
        Ok(Settings { values })
    }

    pub fn get<V: FromStr>(&self, flag: Option<V>, key: &str) -> Result<Option<V>> {
        match (flag, self.values.get(key)) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(s)) => parse_value(s, key).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn or<V: FromStr>(&self, flag: Option<V>, key: &str, default: V) -> Result<V> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, flag: Option<V>, key: &str) -> Result<V> {
        self.get(flag, key)?
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}` (flag --{})", key.replace('_', "-"))))
    }

    /// Flag, then config file, then `SAT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var("SAT_SEED") {
            Ok(s) => parse_value(&s, "SAT_SEED"),
            Err(_) => Ok(0),
        }
    }
}

/// Comma-separated list, e.g. `30,40`.
pub fn parse_list<V: FromStr>(s: &str, key: &str) -> Result<Vec<V>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse_value(p.trim(), key)).collect()
}
