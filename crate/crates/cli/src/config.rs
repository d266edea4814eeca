//! Plain-text configuration files.
//!
//! A file holds `key = value` lines whose keys are the long flag names of
//! the chosen subcommand; `#` starts a comment. Entries are spliced into
//! the argument list ahead of the command-line flags, so flags given on
//! the command line win.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Parses `key = value` lines into flag arguments.
pub fn parse_config(text: &str, origin: &Path) -> CliResult<Vec<OsString>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{} line {}: expected 'key = value', got '{line}'",
                origin.display(),
                i + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key == "config" || key.starts_with('-') {
            return Err(CliError::Usage(format!(
                "{} line {}: invalid key '{key}'",
                origin.display(),
                i + 1
            )));
        }
        match value {
            "true" => args.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => args.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    Ok(args)
}

/// Replaces `--config <path>` (or `--config=<path>`) with the file's
/// entries, placed directly after the subcommand name.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let value = iter
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            path = Some(value);
        } else if let Some(v) = s.strip_prefix("--config=") {
            path = Some(OsString::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries = parse_config(&text, path)?;
    // program name, then subcommand, then the file's entries
    let split = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(entries);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}
