//! Flat `key = value` configuration files.
//!
//! Keys are long flag names without dashes. Lines starting with `#` are
//! comments. Keys the chosen subcommand does not define are ignored, so one
//! file can serve several subcommands.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, CommandFactory};

use crate::args::Cli;

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`", i + 1);
        };
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.push((k.trim().replace('_', "-"), v.to_string()));
    }
    Ok(out)
}

/// Finds `--config FILE` or `--config=FILE` in raw arguments.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Inserts config values as flags right after the subcommand name, so that
/// flags given on the command line override them.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {}", Path::new(&path).display()))?;
    let pairs = parse(&text)?;
    let cmd = Cli::command();
    let Some(pos) = argv
        .iter()
        .position(|a| cmd.find_subcommand(a.to_string_lossy().as_ref()).is_some())
    else {
        return Ok(argv);
    };
    let sub = cmd
        .find_subcommand(argv[pos].to_string_lossy().as_ref())
        .expect("found above");
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in pairs {
        if key == "config" {
            continue;
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            continue;
        };
        match arg.get_action() {
            ArgAction::SetTrue => {
                if matches!(value.as_str(), "true" | "1" | "yes") {
                    extra.push(format!("--{key}").into());
                }
            }
            _ => {
                extra.push(format!("--{key}").into());
                extra.push(value.into());
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
