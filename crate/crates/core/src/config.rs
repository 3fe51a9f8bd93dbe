//! Flat `key = value` files. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("missing key `{0}`")]
    Missing(String),
}

/// Ordered key-value map with deterministic serialisation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.parsed(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Overrides entries with those of `other`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.entries
            .keys()
            .filter(move |k| k.starts_with(prefix))
            .map(String::as_str)
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let kv = KeyValues::parse("# run\nseed = 7\n\nlr=0.001\nname = a = b\n").unwrap();
        assert_eq!(kv.required::<u64>("seed").unwrap(), 7);
        assert_eq!(kv.parsed::<f64>("lr").unwrap(), Some(0.001));
        assert_eq!(kv.get("name"), Some("a = b"));
        assert_eq!(kv.parsed::<u8>("missing").unwrap(), None);
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn errors() {
        assert_eq!(KeyValues::parse("a = 1\nnope\n"), Err(ConfigError::Syntax { line: 2 }));
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(matches!(kv.parsed::<u32>("a"), Err(ConfigError::Value { .. })));
        assert_eq!(kv.required::<u32>("b"), Err(ConfigError::Missing("b".into())));
    }

    #[test]
    fn merge_overrides() {
        let mut a = KeyValues::parse("x = 1\ny = 2").unwrap();
        a.merge(&KeyValues::parse("y = 3\nz = 4").unwrap());
        assert_eq!(a.to_string(), "x = 1\ny = 3\nz = 4\n");
    }
}
