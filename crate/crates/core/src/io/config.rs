//! Flat `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, nested settings use dotted keys
//! (`model_variance.policy = constant`). Every key must be consumed by the reader;
//! leftovers are reported with their line number.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Clone)]
pub struct ConfigFile {
    path: PathBuf,
    entries: BTreeMap<String, Entry>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    /// An empty configuration (all defaults) attributed to `path`.
    pub fn empty(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_error(path, line, format!("expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(config_error(path, line, format!("invalid key `{key}`")));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
                used: false,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(config_error(
                    path,
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Directory that relative paths inside the file are resolved against.
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Raw string value, marking the key as consumed.
    pub fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let path = self.path.clone();
        match self.take_str(key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|e| {
                config_error(&path, line, format!("`{key}`: cannot parse `{value}`: {e}"))
            }),
        }
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let path = self.path.clone();
        let Some((value, line)) = self.take_str(key) else {
            return Ok(None);
        };
        if value.is_empty() {
            return Ok(Some(Vec::new()));
        }
        value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>().map_err(|e| {
                    config_error(&path, line, format!("`{key}`: cannot parse `{item}`: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Error attributed to the line that defined `key` (or line 0 if absent).
    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        config_error(&self.path, line, message.into())
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        let unused = self
            .entries
            .iter()
            .filter(|(_, e)| !e.used)
            .min_by_key(|(_, e)| e.line);
        match unused {
            Some((key, e)) => Err(config_error(&self.path, e.line, format!("unknown key `{key}`"))),
            None => Ok(()),
        }
    }
}

fn config_error(path: &Path, line: usize, message: String) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        line,
        message,
    }
}

/// Builds the text of a config/manifest file, one `key = value` per line.
#[derive(Debug, Default, Clone)]
pub struct ConfigWriter {
    out: String,
}

impl ConfigWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        self.out.push_str("# ");
        self.out.push_str(text);
        self.out.push('\n');
        self
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.set(key, joined.join(","))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}
