//! Flat `key = value` text with `[section]` headers. `#` starts a comment.
//! Keys before the first header belong to the unnamed section `""`.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    Value {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("line {line}: unknown key {key:?} in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("missing required key {key:?} in section [{section}]")]
    Missing { section: String, key: String },
}

impl ConfigError {
    /// 1-based line the error points at, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::Value { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::UnknownSection { line, .. } => Some(*line),
            ConfigError::Missing { .. } => None,
        }
    }
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvDocument {
    entries: Vec<Entry>,
    headers: Vec<(String, usize)>,
}

impl KvDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut headers = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: format!("unterminated section header {content:?}"),
                })?;
                section = name.trim().to_string();
                headers.push((section.clone(), line));
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("invalid key {key:?}"),
                });
            }
            if let Some(prev) = entries
                .iter()
                .find(|e| e.section == section && e.key == key)
            {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key {key:?} (first set on line {})", prev.line),
                });
            }
            entries.push(Entry {
                section: section.clone(),
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self { entries, headers })
    }

    /// Fails on any section header or key outside `allowed`.
    pub fn check_sections(&self, allowed: &[&str]) -> Result<()> {
        for (name, line) in &self.headers {
            if !allowed.contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection {
                    line: *line,
                    section: name.clone(),
                });
            }
        }
        for e in &self.entries {
            if !allowed.contains(&e.section.as_str()) {
                return Err(ConfigError::UnknownSection {
                    line: e.line,
                    section: e.section.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            entries: self.entries.iter().filter(|e| e.section == name).collect(),
            used: BTreeSet::new(),
        }
    }
}

/// Keys of one section. Reading marks keys as used; [`Section::finish`]
/// rejects whatever was never read.
pub struct Section<'a> {
    name: String,
    entries: Vec<&'a Entry>,
    used: BTreeSet<usize>,
}

impl Section<'_> {
    pub fn get<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((i, e)) = self.entries.iter().enumerate().find(|(_, e)| e.key == key) else {
            return Ok(None);
        };
        self.used.insert(i);
        e.value
            .parse()
            .map(Some)
            .map_err(|err: T::Err| ConfigError::Value {
                line: e.line,
                key: key.to_string(),
                msg: err.to_string(),
            })
    }

    pub fn get_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Missing {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    /// Line of `key`, for error messages raised after parsing.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.line)
    }

    pub fn finish(self) -> Result<()> {
        match self
            .entries
            .iter()
            .enumerate()
            .find(|(i, _)| !self.used.contains(i))
        {
            Some((_, e)) => Err(ConfigError::UnknownKey {
                line: e.line,
                section: self.name.clone(),
                key: e.key.clone(),
            }),
            None => Ok(()),
        }
    }
}
