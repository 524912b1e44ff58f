//! Flag defaults from a TOML file.
//!
//! ```toml
//! jobs = 2            # top-level keys apply to every subcommand
//!
//! [sweep]             # keys of a table apply to that subcommand only
//! widths = [16, 128]  # arrays become comma-separated values
//! epochs = 5
//! no-standardize = true
//! ```
//!
//! Every key names a long flag. File values are inserted before the command
//! line flags, which therefore take precedence.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use toml::{Table, Value};

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Boolean(b) => b.to_string(),
        Value::Array(items) => items.iter().map(|i| scalar(key, i)).collect::<Result<Vec<_>>>()?.join(","),
        _ => bail!("config key {key:?} has an unsupported value"),
    })
}

fn push_flag(out: &mut Vec<OsString>, key: &str, v: &Value) -> Result<()> {
    match v {
        Value::Boolean(true) => out.push(format!("--{key}").into()),
        Value::Boolean(false) => {}
        other => {
            out.push(format!("--{key}").into());
            out.push(scalar(key, other)?.into());
        }
    }
    Ok(())
}

/// Flags for `subcommand` from the parsed file.
pub fn flags_for(table: &Table, subcommand: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, v) in table {
        if !v.is_table() {
            push_flag(&mut out, key, v)?;
        }
    }
    if let Some(section) = table.get(subcommand) {
        let Value::Table(section) = section else { bail!("config key {subcommand:?} must be a table") };
        for (key, v) in section {
            push_flag(&mut out, key, v)?;
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Splices the flags of `--config FILE` in right after the subcommand name.
pub fn expand_args(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path.to_string_lossy()))?;
    let table: Table = text.parse().with_context(|| format!("config {} is not valid TOML", path.to_string_lossy()))?;
    let Some(pos) = args.iter().position(|a| subcommands.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let name = args[pos].to_string_lossy().into_owned();
    let extra = flags_for(&table, &name)?;
    let mut out = args[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_top_level_keys() {
        let table: Table = "jobs = 2\n[sweep]\nwidths = [16, 128]\nquick = true\noff = false\nlr = 0.5\n".parse().unwrap();
        let flags: Vec<String> = flags_for(&table, "sweep").unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(flags, ["--jobs", "2", "--lr", "0.5", "--quick", "--widths", "16,128"]);
        assert_eq!(flags_for(&table, "train").unwrap().len(), 2);
    }

    #[test]
    fn file_flags_precede_command_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[train]\nepochs = 3\n").unwrap();
        let args: Vec<OsString> =
            ["densecap", "--config", path.to_str().unwrap(), "train", "--epochs", "1"].iter().map(Into::into).collect();
        let out = expand_args(args, &["train"]).unwrap();
        let out: Vec<String> = out.into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(out[3..], ["train", "--epochs", "3", "--epochs", "1"]);
    }
}
