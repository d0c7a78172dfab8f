//! Defaults from a TOML file. Each table is named after a subcommand and
//! maps long flag names to values; flags given on the command line win.
//!
//! ```toml
//! [benchmark]
//! shots = [0, 2, 4, 8, 16, 32]
//! seeds = [0, 1, 32, 42, 1024]
//! finetune-steps = 100
//! ```

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn subcommand(args: &[OsString]) -> Option<String> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            it.next();
        } else if !a.starts_with('-') {
            return Some(a.into_owned());
        }
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&eq)
    })
}

fn render(key: &str, v: &toml::Value) -> Result<Option<String>> {
    Ok(Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(_) => return Ok(None),
        toml::Value::Array(items) => {
            let parts: Result<Vec<String>> =
                items.iter().map(|i| render(key, i)?.with_context(|| format!("`{key}`: nested booleans"))).collect();
            parts?.join(",")
        }
        _ => bail!("`{key}`: unsupported value type"),
    }))
}

/// Appends the config file's defaults for the chosen subcommand to `args`.
pub fn with_defaults(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
    for (k, v) in &table {
        if !v.is_table() {
            bail!("config {}: top-level key `{k}` must be a [subcommand] table", path.display());
        }
    }
    let Some(cmd) = subcommand(&args) else { return Ok(args) };
    let Some(section) = table.get(&cmd).and_then(|v| v.as_table()) else { return Ok(args) };
    for (key, value) in section {
        let flag = format!("--{key}");
        if has_flag(&args, &flag) {
            continue;
        }
        match (value, render(key, value)?) {
            (toml::Value::Boolean(true), _) => args.push(flag.into()),
            (toml::Value::Boolean(false), _) => {}
            (_, Some(s)) => {
                args.push(flag.into());
                args.push(s.into());
            }
            (_, None) => {}
        }
    }
    Ok(args)
}
