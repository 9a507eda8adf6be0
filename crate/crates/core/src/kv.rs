//! Line-based `key = value` text used for configuration files.
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyValue {
    pub key: String,
    pub value: String,
    /// Byte offset of the line start.
    pub offset: usize,
}

impl KeyValue {
    pub fn error(&self, message: impl Display) -> Error {
        Error::Parse {
            offset: self.offset,
            message: format!("{}: {message}", self.key),
        }
    }

    pub fn parse<V: FromStr>(&self) -> Result<V>
    where
        V::Err: Display,
    {
        self.value.parse().map_err(|e| self.error(e))
    }

    pub fn parse_list<V: FromStr>(&self) -> Result<Vec<V>>
    where
        V::Err: Display,
    {
        self.value
            .split(',')
            .map(|s| s.trim().parse().map_err(|e| self.error(e)))
            .collect()
    }
}

pub fn parse(text: &str) -> Result<Vec<KeyValue>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                offset,
                message: format!("expected `key = value`, got {trimmed:?}"),
            })?;
            out.push(KeyValue {
                key: key.trim().to_string(),
                value: value.trim().to_string(),
                offset,
            });
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn join<V: Display>(values: &[V]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}
