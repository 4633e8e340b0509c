//! Flat `key = value` configuration files.
//!
//! Each key names a long flag of the chosen subcommand (`iou = 0.7`,
//! `fp-points = 0.5,1,2,4`). Values are inserted ahead of the command-line
//! flags, so anything given on the command line wins. `true` turns a switch
//! on, `false` leaves it off.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

const SUBCOMMANDS: [&str; 4] = ["merge", "eval", "gate", "synth"];

/// Parses a config file into `--key=value` arguments.
pub fn parse_config(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::record(path, i + 1, "expected `key = value`"));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::record(path, i + 1, format!("invalid key `{key}`")));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => out.push(format!("--{key}={v}").into()),
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Result<Option<(usize, PathBuf)>> {
    for (i, a) in argv.iter().enumerate().skip(1) {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some((i, PathBuf::from(p))));
        }
        if s == "--config" {
            let p = argv
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            return Ok(Some((i, PathBuf::from(p))));
        }
    }
    Ok(None)
}

/// Splices the settings of any `--config FILE` in `argv` in right after
/// the subcommand name.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((_, path)) = config_path(&argv)? else {
        return Ok(argv);
    };
    let Some(sub) = argv
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
    else {
        return Ok(argv);
    };
    let extra = parse_config(&path)?;
    let mut out = argv[..=sub].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}
