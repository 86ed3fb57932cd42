//! Plain `key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Sections
//! of a configuration implement [`KvSection`] so that a single flat file can
//! feed every stage and unknown keys are rejected with a suggestion.

use std::fmt::Display;
use std::str::FromStr;

use crate::{Error, Result};

/// One documented key of a [`KvSection`].
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub help: &'static str,
}

/// A configuration section addressable by flat keys.
pub trait KvSection {
    fn keys() -> &'static [KeyDoc];
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    /// Current values in documentation order.
    fn entries(&self) -> Vec<(&'static str, String)>;
}

/// Parses `key = value` lines. Later duplicates override earlier ones.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::invalid(format!(
                "line {}: expected `key = value`, got `{}`",
                lineno + 1,
                raw.trim()
            )));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::invalid(format!("line {}: empty key", lineno + 1)));
        }
        let value = v.trim().to_string();
        match out.iter_mut().find(|(ek, _)| *ek == key) {
            Some(slot) => slot.1 = value,
            None => out.push((key, value)),
        }
    }
    Ok(out)
}

/// Renders entries back to `key = value` lines.
pub fn render<K: AsRef<str>, V: AsRef<str>>(entries: &[(K, V)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        s.push_str(k.as_ref());
        s.push_str(" = ");
        s.push_str(v.as_ref());
        s.push('\n');
    }
    s
}

/// Closest key by edit distance, if reasonably close. A key that is a
/// prefix of a candidate (`window` for `window_len`) also counts as close.
pub fn suggest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(key, c), c))
        .filter(|(d, c)| *d <= 3.max(c.len() / 3) || (key.len() >= 3 && c.starts_with(key)))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.to_string())
}

pub fn unknown_key(key: &str, candidates: &[KeyDoc]) -> Error {
    Error::UnknownKey {
        key: key.to_string(),
        suggestion: suggest(key, candidates.iter().map(|d| d.key)),
    }
}

pub fn value<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: expected.to_string(),
    })
}

pub fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidValue {
            key: key.to_string(),
            value: v.to_string(),
            expected: "a boolean (true/false)".into(),
        }),
    }
}

pub fn list<T: FromStr>(key: &str, v: &str, expected: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| value(key, s.trim(), expected)).collect()
}

pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Formats a float so that it parses back to the same value.
pub fn float(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let kv = parse("# header\n\ngamma = 0.05  # temperature\nxi=2\n").unwrap();
        assert_eq!(kv, vec![("gamma".into(), "0.05".into()), ("xi".into(), "2".into())]);
    }

    #[test]
    fn later_duplicate_wins() {
        let kv = parse("xi = 2\nxi = 3\n").unwrap();
        assert_eq!(kv, vec![("xi".into(), "3".into())]);
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(parse("gamma 0.05").is_err());
    }

    #[test]
    fn suggests_nearest() {
        let s = suggest("gama", ["gamma", "lambda", "xi", "k"]);
        assert_eq!(s.as_deref(), Some("gamma"));
        assert_eq!(suggest("zzzzzzzzzz", ["xi"]), None);
    }

    #[test]
    fn float_roundtrips() {
        for x in [0.05, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }
}
