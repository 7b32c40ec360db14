//! Settings layered as flags over a flat TOML file over built-in defaults.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Result;
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::Cli;
use crate::Usage;

pub struct Layers<'a> {
    matches: &'a ArgMatches,
    file: toml::Table,
    merged: std::cell::RefCell<serde_json::Map<String, serde_json::Value>>,
}

fn known_keys() -> BTreeSet<String> {
    fn walk(cmd: &clap::Command, out: &mut BTreeSet<String>) {
        for a in cmd.get_arguments() {
            out.insert(a.get_id().to_string());
        }
        for s in cmd.get_subcommands() {
            walk(s, out);
        }
    }
    let mut out = BTreeSet::new();
    walk(&Cli::command(), &mut out);
    for k in ["config", "force", "help", "version", "input", "format"] {
        out.remove(k);
    }
    out
}

impl<'a> Layers<'a> {
    /// Reads `file` if given. Unknown keys are rejected so typos surface.
    pub fn new(matches: &'a ArgMatches, file: Option<&Path>) -> Result<Self> {
        let file = match file {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Usage(format!("cannot read config {}: {e}", p.display())))?;
                let table: toml::Table =
                    text.parse().map_err(|e| Usage(format!("config {}: {e}", p.display())))?;
                let known = known_keys();
                if let Some((k, _)) = table.iter().find(|(k, _)| !known.contains(*k)) {
                    return Err(Usage(format!("config {}: unknown key `{k}`", p.display())).into());
                }
                if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
                    return Err(Usage(format!("config {}: `{k}` must be a plain value", p.display())).into());
                }
                table
            }
        };
        Ok(Self { matches, file, merged: Default::default() })
    }

    /// The flag value when given on the command line, else the file value,
    /// else `flag` (which then holds the built-in default).
    pub fn get<T: DeserializeOwned + Serialize>(&self, id: &str, flag: T) -> Result<T> {
        let explicit = matches!(
            self.matches.value_source(id),
            Some(ValueSource::CommandLine | ValueSource::EnvVariable)
        );
        let v = match self.file.get(id) {
            Some(v) if !explicit => {
                v.clone().try_into().map_err(|e| Usage(format!("config key `{id}`: {e}")))?
            }
            _ => flag,
        };
        self.merged.borrow_mut().insert(id.to_string(), serde_json::to_value(&v)?);
        Ok(v)
    }

    /// Every setting read so far, as resolved.
    pub fn merged(&self) -> serde_json::Map<String, serde_json::Value> {
        self.merged.borrow().clone()
    }
}
