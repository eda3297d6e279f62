//! Sectioned `key = value` text files.
//!
//! ```text
//! # comment
//! [model]
//! kind = qecct
//! n_layers = 6
//! ```
//!
//! Keys are looked up with [`Ini::take`]; [`Ini::finish`] rejects whatever
//! was never taken, so misspelled keys surface as errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{invalid, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| invalid(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(invalid(format!("line {line_no}: empty section name")));
                }
                if ini.sections.contains_key(name) {
                    return Err(invalid(format!("line {line_no}: section [{name}] repeated")));
                }
                ini.sections.insert(name.to_string(), BTreeMap::new());
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {line_no}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(invalid(format!("line {line_no}: empty key")));
            }
            let name = section
                .as_ref()
                .ok_or_else(|| invalid(format!("line {line_no}: key {key:?} outside any section")))?;
            let entries = ini.sections.get_mut(name).expect("section was inserted");
            if entries.insert(key.to_string(), (value.to_string(), line_no)).is_some() {
                return Err(invalid(format!("line {line_no}: key {key:?} repeated in [{name}]")));
            }
        }
        Ok(ini)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// Removes and returns a raw value.
    pub fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section)?.remove(key).map(|(v, _)| v)
    }

    /// Removes every entry of a section, in file order.
    pub fn take_section(&mut self, section: &str) -> Vec<(String, String)> {
        let Some(entries) = self.sections.get_mut(section) else {
            return Vec::new();
        };
        let mut out: Vec<(String, (String, usize))> = std::mem::take(entries).into_iter().collect();
        out.sort_by_key(|(_, (_, line))| *line);
        out.into_iter().map(|(k, (v, _))| (k, v)).collect()
    }

    /// Removes and parses a value, falling back to `default` when absent.
    pub fn take_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(format!("[{section}] {key} = {v:?} is not a valid value"))),
        }
    }

    /// Like [`Ini::take_or`] for values without a default.
    pub fn take_required<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        let v = self
            .take(section, key)
            .ok_or_else(|| invalid(format!("[{section}] {key} is required")))?;
        v.parse()
            .map_err(|_| invalid(format!("[{section}] {key} = {v:?} is not a valid value")))
    }

    /// Fails on the first key or section that was never taken.
    pub fn finish(self, known_sections: &[&str]) -> Result<()> {
        for (name, entries) in &self.sections {
            if !known_sections.contains(&name.as_str()) {
                return Err(invalid(format!("unknown section [{name}]")));
            }
            if let Some((key, (_, line))) = entries.iter().min_by_key(|(_, (_, line))| *line) {
                return Err(invalid(format!("line {line}: unknown key {key:?} in [{name}]")));
            }
        }
        Ok(())
    }
}

/// Writes sections in the given order.
pub fn render(sections: &[(&str, Vec<(&str, String)>)]) -> String {
    let mut out = String::new();
    for (i, (name, entries)) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{name}]");
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}
