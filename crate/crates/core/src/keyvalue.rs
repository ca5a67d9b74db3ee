//! Plain-text `key = value` files.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys
//! are case-sensitive and carry their unit in the name (`focal_length_um`).
//! List values are comma-separated. Later duplicates override earlier ones.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: PathBuf,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source,
                    line: idx + 1,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: source,
                    line: idx + 1,
                    message: format!("invalid key `{key}`"),
                });
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line: idx + 1,
            });
        }
        Ok(Self { source, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(Entry {
                key,
                value,
                line: 0,
            }),
        }
    }

    pub fn insert_list<T: ToString>(&mut self, key: impl Into<String>, values: &[T]) {
        let joined = values
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        self.insert(key, joined);
    }

    fn entry(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entry(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entry(key).map(|e| e.value.as_str())
    }

    fn error(&self, entry: &Entry, message: String) -> Error {
        Error::Parse {
            path: self.source.clone(),
            line: entry.line,
            message,
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(entry) = self.entry(key) else {
            return Ok(None);
        };
        entry
            .value
            .parse::<T>()
            .map(Some)
            .map_err(|_| self.error(entry, format!("cannot parse `{}` for key `{key}`", entry.value)))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.source.clone(),
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(entry) = self.entry(key) else {
            return Ok(None);
        };
        entry
            .value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| self.error(entry, format!("cannot parse `{s}` in list `{key}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Reads a per-channel list given as one value (broadcast), three values
    /// (R, G, B; green duplicated) or four values (R, G1, G2, B).
    pub fn get_per_channel(&self, key: &str) -> Result<Option<[f64; 4]>> {
        let Some(values) = self.get_list::<f64>(key)? else {
            return Ok(None);
        };
        let entry = self.entry(key).expect("entry exists");
        match values.as_slice() {
            [v] => Ok(Some([*v; 4])),
            [r, g, b] => Ok(Some([*r, *g, *g, *b])),
            [r, g1, g2, b] => Ok(Some([*r, *g1, *g2, *b])),
            _ => Err(self.error(
                entry,
                format!("`{key}` needs 1, 3 or 4 values, found {}", values.len()),
            )),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        let Some(entry) = self.entry(key) else {
            return Ok(None);
        };
        match entry.value.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(Some(true)),
            "false" | "no" | "0" | "off" => Ok(Some(false)),
            other => Err(self.error(entry, format!("`{other}` is not a boolean"))),
        }
    }

    /// Resolves a path-valued key relative to the directory of the source file.
    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        let value = self.get_str(key)?;
        let p = PathBuf::from(value);
        if p.is_absolute() {
            return Some(p);
        }
        let base = self.source.parent().unwrap_or_else(|| Path::new(""));
        Some(base.join(p))
    }

    pub fn to_text(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{} = {}", e.key, e.value);
        }
        out
    }
}
