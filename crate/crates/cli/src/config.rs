//! `--config` files: `key=value` per line, merged in front of the explicit
//! flags so that the latter win.

use frulab::{Error, Result};
use std::ffi::OsString;
use std::path::Path;

pub const SUBCOMMANDS: [&str; 6] = ["datagen", "train", "certify", "probe", "theory", "variables"];

/// Parse a config file body into `(key, value)` pairs. Blank lines and
/// `#` comments are skipped; keys may be written with or without `--`
/// and with `_` or `-`.
pub fn parse_config(body: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Format {
                field: "config",
                detail: format!("line {}: expected key=value, got '{line}'", i + 1),
            });
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Error::Format {
                field: "config",
                detail: format!("line {}: invalid key '{}'", i + 1, k.trim()),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

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

/// Splice config entries into `argv` right after the subcommand name.
/// `true`/`false` values toggle bare switches.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let body = std::fs::read_to_string(Path::new(&path))?;
    let entries = parse_config(&body)?;
    let Some(pos) = argv.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(argv);
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => extra.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                extra.push(format!("--{k}").into());
                extra.push(v.into());
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}
