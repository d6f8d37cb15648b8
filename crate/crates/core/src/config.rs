//! `key = value` configuration files.
//!
//! Every settings struct in the crate reads itself out of a [`KeyValues`] map
//! with [`KeyValues::take`] and then calls [`KeyValues::finish`], which
//! rejects any key nobody consumed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        let mut bad = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let key = k.trim().to_string();
                    if kv.entries.contains_key(&key) {
                        bad.push(format!("line {}: duplicate key `{key}`", n + 1));
                    }
                    kv.entries.insert(key, v.trim().to_string());
                }
                _ => bad.push(format!("line {}: expected `key = value`, got `{line}`", n + 1)),
            }
        }
        if bad.is_empty() {
            Ok(kv)
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Layers `other` on top of `self`: keys present in `other` win.
    pub fn overlay(&mut self, other: KeyValues) {
        self.entries.extend(other.entries);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails if any key was left unconsumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.entries.into_keys().collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

impl FromIterator<(String, String)> for KeyValues {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        KeyValues {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Checks that a probability-like setting lies in `[0, 1]`.
pub fn check_rate(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut kv = KeyValues::parse("# header\n a = 1 \n\nb=two words\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take::<String>("b").unwrap().as_deref(), Some("two words"));
        kv.finish().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut kv = KeyValues::parse("a = 1\nzzz = 3").unwrap();
        kv.take::<u32>("a").unwrap();
        let err = kv.finish().unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("just words").is_err());
    }

    #[test]
    fn bad_value_reports_key() {
        let mut kv = KeyValues::parse("rate = fast").unwrap();
        let err = kv.take::<f64>("rate").unwrap_err();
        assert!(err.to_string().contains("rate"));
    }

    #[test]
    fn overlay_prefers_later_layer() {
        let mut base = KeyValues::parse("a = 1\nb = 2").unwrap();
        base.overlay(KeyValues::parse("b = 3").unwrap());
        assert_eq!(base.get("a"), Some("1"));
        assert_eq!(base.get("b"), Some("3"));
    }
}
