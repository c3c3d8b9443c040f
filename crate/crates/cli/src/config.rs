//! `--config FILE` support.
//!
//! The file holds one `key = value` per line, where `key` is a long flag name
//! of the subcommand (without the dashes). Blank lines and lines starting
//! with `#` are ignored, values may be wrapped in double quotes, repeatable
//! flags may appear on several lines and boolean flags take `true`/`false`.
//! File entries are spliced in right after the subcommand name, so anything
//! given on the command line overrides them. Repeatable flags such as
//! `--stop` accumulate instead: file values come first, then flag values.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory};

use crate::args::Cli;
use crate::error::CliError;

/// Finds the value of `--config` among the raw arguments.
fn config_path(args: &[OsString]) -> Result<Option<PathBuf>, CliError> {
    let mut found = None;
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            let v = iter.next().ok_or_else(|| CliError::config("--config needs a file path"))?;
            found = Some(PathBuf::from(v));
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    Ok(found)
}

/// Turns config file text into flag arguments for `subcommand`.
pub fn file_args(subcommand: &str, text: &str, path: &Path) -> Result<Vec<OsString>, CliError> {
    let root = Cli::command();
    let cmd = root
        .find_subcommand(subcommand)
        .ok_or_else(|| CliError::config(format!("--config needs a subcommand, got {subcommand:?}")))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| CliError::config(format!("{}:{}: {m}", path.display(), i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if key == "config" {
            return Err(err("config files cannot include other config files".into()));
        }
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key))
            .ok_or_else(|| err(format!("unknown key {key:?} for {subcommand}")))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => out.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => return Err(err(format!("{key} expects true or false, got {other:?}"))),
            }
        } else {
            out.push(OsString::from(format!("--{key}={value}")));
        }
    }
    Ok(out)
}

/// Returns `args` with the entries of any `--config` file inserted after the
/// subcommand.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let Some(sub) = args.get(1).and_then(|s| s.to_str()).filter(|s| !s.starts_with('-')) else {
        return Err(CliError::config("--config must follow the subcommand name"));
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let extra = file_args(sub, &text, &path)?;
    let mut merged = Vec::with_capacity(args.len() + extra.len());
    merged.extend_from_slice(&args[..2]);
    merged.extend(extra);
    merged.extend_from_slice(&args[2..]);
    Ok(merged)
}
