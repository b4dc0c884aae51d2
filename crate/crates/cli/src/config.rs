//! Config file loading with `--set` overrides and path resolution.

use std::path::{Path, PathBuf};

use disentangle_core::training::RunConfig;
use toml::{Table, Value};

use crate::CliError;

/// Keys holding file paths. Relative values from the file resolve against
/// the file's directory, relative values from `--set` against the working
/// directory.
const PATH_KEYS: [&str; 2] = ["data.manifest", "data.test_manifest"];

pub const SNAPSHOT: &str = "resolved_config.toml";

pub fn load(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(format!("working directory: {e}")))?;
    let table = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let mut t: Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?;
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => cwd.join(d),
                _ => cwd.clone(),
            };
            for key in PATH_KEYS {
                resolve(&mut t, key, &dir);
            }
            t
        }
        None => Table::new(),
    };
    apply(table, sets, &cwd)
}

/// `config` with `sets` applied on top.
pub fn with_overrides(config: &RunConfig, sets: &[String]) -> Result<RunConfig, CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(format!("working directory: {e}")))?;
    let table = Table::try_from(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    apply(table, sets, &cwd)
}

fn apply(mut table: Table, sets: &[String], cwd: &Path) -> Result<RunConfig, CliError> {
    for s in sets {
        let (key, value) = parse_set(s)?;
        set(&mut table, &key, value)?;
        if PATH_KEYS.contains(&key.as_str()) {
            resolve(&mut table, &key, cwd);
        }
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}

fn parse_set(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE (got '{s}')")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("--set: malformed key '{key}'")));
    }
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn set(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("key is nonempty");
    let mut t = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: '{}' is not a section", parts[..=i].join("."))))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn resolve(table: &mut Table, key: &str, base: &Path) {
    let (section, name) = key.split_once('.').expect("dotted key");
    if let Some(Value::String(p)) = table.get_mut(section).and_then(Value::as_table_mut).and_then(|t| t.get_mut(name)) {
        let path = PathBuf::from(&*p);
        if path.is_relative() {
            *p = base.join(path).to_string_lossy().into_owned();
        }
    }
}

/// Writes `resolved_config.toml` under `dir`.
pub fn write_snapshot(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(SNAPSHOT);
    std::fs::write(&path, config.to_toml()).map_err(|e| CliError::io(&path, e))
}

/// Reads the config stored in a checkpoint directory.
pub fn from_checkpoint(dir: &Path) -> Result<RunConfig, CliError> {
    let path = dir.join("config.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(disentangle_core::training::parse_config(&text)?)
}
