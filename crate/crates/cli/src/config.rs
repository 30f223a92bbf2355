//! Plain-text `key=value` run configuration and run manifests.
//!
//! A config file supplies defaults for a command's flags: each key is a long
//! flag name without the dashes. Flags given on the command line win. Blank
//! lines and lines starting with `#` are ignored. A manifest is a config file
//! that echoes every resolved flag, so passing it back through `--config`
//! repeats the run.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::{ArgMatches, Command};

use crate::error::CliError;

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                origin.display(),
                i + 1
            )));
        };
        let key = key.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(CliError::Config(format!(
                "{}:{}: bad key {key:?}",
                origin.display(),
                i + 1
            )));
        }
        out.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

/// The `--config` value, if present, from raw arguments.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Splices config-file flags in front of the user's flags so the user's
/// occurrences override them.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    if args.len() < 2 {
        return Ok(args);
    }
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(format!("config file {} not found", path.display()))
        } else {
            CliError::Config(format!("cannot read {}: {e}", path.display()))
        }
    })?;
    let entries = parse_config(&text, path)?;
    let mut out = args[..2].to_vec();
    for (k, v) in entries {
        if k == "config" {
            continue;
        }
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend(args[2..].iter().cloned());
    Ok(out)
}

/// Every resolved flag of the subcommand except `--config`, in declaration
/// order, as `key=value` lines under a header naming the command and version.
pub fn manifest(root: &Command, name: &str, matches: &ArgMatches) -> String {
    let mut out = String::new();
    writeln!(out, "# leafscan {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "# command: {name}").unwrap();
    let sub = root
        .find_subcommand(name)
        .expect("matched subcommand exists");
    for arg in sub.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if long == "config" || long == "help" {
            continue;
        }
        if let Ok(Some(raw)) = matches.try_get_raw(arg.get_id().as_str()) {
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            writeln!(out, "{long}={}", values.join(",")).unwrap();
        }
    }
    out
}
