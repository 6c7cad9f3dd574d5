//! Plain `key = value` configuration text.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys
//! are unique. Typed structs consume the pairs they know and reject the rest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if kv.entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
        }
        Ok(kv)
    }

    /// Inserts or replaces (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrites `*slot` when `key` is present.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.entries.get(key) {
            *slot = v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
            })?;
        }
        Ok(())
    }

    /// Comma-separated list of exactly `N` values, e.g. `1.0, 2.5, 0`.
    pub fn read_array<T: FromStr, const N: usize>(
        &self,
        key: &str,
        slot: &mut [T; N],
    ) -> Result<()> {
        if let Some(v) = self.entries.get(key) {
            let bad = || ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
            };
            let parts: Vec<T> = v
                .split(',')
                .map(|p| p.trim().parse::<T>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            *slot = parts.try_into().map_err(|_| bad())?;
        }
        Ok(())
    }

    /// Fails on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn format_array<T: Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let kv = KeyValues::parse("# scene\n\nseed = 7\nfps=7.5  # trailing\n room = 8, 8, 3\n")
            .unwrap();
        let (mut seed, mut fps, mut room) = (0u64, 0.0, [0.0; 3]);
        kv.read("seed", &mut seed).unwrap();
        kv.read("fps", &mut fps).unwrap();
        kv.read_array("room", &mut room).unwrap();
        assert_eq!((seed, fps, room), (7, 7.5, [8.0, 8.0, 3.0]));
    }

    #[test]
    fn missing_key_keeps_default() {
        let kv = KeyValues::parse("a = 1").unwrap();
        let mut b = 5u32;
        kv.read("b", &mut b).unwrap();
        assert_eq!(b, 5);
    }

    #[test]
    fn errors() {
        assert_eq!(
            KeyValues::parse("a 1"),
            Err(ConfigError::Syntax { line: 1 })
        );
        assert_eq!(
            KeyValues::parse("a=1\na=2"),
            Err(ConfigError::Duplicate("a".into()))
        );
        let kv = KeyValues::parse("a = x\nzz = 1").unwrap();
        let mut a = 0u32;
        assert!(matches!(
            kv.read("a", &mut a),
            Err(ConfigError::BadValue { .. })
        ));
        assert_eq!(
            kv.reject_unknown(&["a"]),
            Err(ConfigError::UnknownKey("zz".into()))
        );
        let mut v = [0.0; 3];
        assert!(KeyValues::parse("v = 1, 2")
            .unwrap()
            .read_array("v", &mut v)
            .is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KeyValues::parse("b = 2\na = 1").unwrap();
        kv.set("c", 0.5);
        assert_eq!(kv.to_text(), "a = 1\nb = 2\nc = 0.5\n");
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
