//! `--config` files: a JSON object of flag values merged into the command
//! line. Top-level keys apply to every subcommand that knows them; an
//! object under a subcommand's name applies to that subcommand only and
//! wins over top-level keys. Flags given explicitly are never overridden.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::CommandFactory;
use serde_json::Value;

use crate::args::Cli;
use crate::error::HarnessError;

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

struct FlagInfo {
    long: String,
    names: Vec<String>,
    takes_value: bool,
}

fn flags_of(cmd: &clap::Command) -> Vec<FlagInfo> {
    cmd.get_arguments()
        .filter_map(|a| {
            let long = a.get_long()?.to_string();
            if long == "help" || long == "version" || long == "config" {
                return None;
            }
            let mut names = vec![long.clone()];
            names.extend(
                a.get_all_aliases()
                    .unwrap_or_default()
                    .into_iter()
                    .map(String::from),
            );
            Some(FlagInfo {
                long,
                names,
                takes_value: a.get_action().takes_values(),
            })
        })
        .collect()
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn tokens(flag: &FlagInfo, v: &Value, bad: &dyn Fn(String) -> HarnessError) -> Result<Vec<String>> {
    let name = format!("--{}", flag.long);
    if !flag.takes_value {
        return match v {
            Value::Bool(true) => Ok(vec![name]),
            Value::Bool(false) | Value::Null => Ok(vec![]),
            _ => Err(bad(format!("{} is a switch and needs true or false", flag.long)).into()),
        };
    }
    let values: Vec<&Value> = match v {
        Value::Array(items) => items.iter().collect(),
        Value::Null => vec![],
        other => vec![other],
    };
    let mut out = Vec::new();
    for item in values {
        let s = scalar(item).ok_or_else(|| bad(format!("{} needs a scalar value", flag.long)))?;
        out.push(name.clone());
        out.push(s);
    }
    Ok(out)
}

fn explicitly_given(argv: &[String], flag: &FlagInfo) -> bool {
    argv.iter().any(|a| {
        flag.names.iter().any(|n| {
            let long = format!("--{n}");
            a == &long || a.starts_with(&format!("{long}="))
        })
    })
}

/// Returns `argv` with the values of the `--config` file (if any) inserted
/// right after the subcommand name.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let mut cli = Cli::command();
    cli.build();
    let Some(sub_idx) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| cli.find_subcommand(a.as_str()).is_some())
        .map(|(i, _)| i)
    else {
        return Ok(argv);
    };
    let parsed = read_config(&path)?;
    let bad = |message: String| HarnessError::InvalidConfig {
        path: path.clone(),
        message,
    };
    let sub_name = argv[sub_idx].clone();
    let sub = cli
        .find_subcommand(&sub_name)
        .expect("subcommand found above");
    let own = flags_of(sub);
    let any_flag = |key: &str| {
        cli.get_subcommands()
            .any(|s| flags_of(s).iter().any(|f| f.names.iter().any(|n| n == key)))
    };

    let mut picked: Vec<(String, Value)> = Vec::new();
    let mut set = |key: &str, v: &Value| {
        let key = key.replace('_', "-");
        picked.retain(|(k, _)| k != &key);
        picked.push((key, v.clone()));
    };
    for (k, v) in &parsed {
        if cli.find_subcommand(k.as_str()).is_some() {
            continue;
        }
        let key = k.replace('_', "-");
        if key == "config" {
            return Err(bad("config files cannot nest".into()).into());
        }
        if own.iter().any(|f| f.names.contains(&key)) {
            set(&key, v);
        } else if !any_flag(&key) {
            return Err(bad(format!("unknown key {k:?}")).into());
        }
    }
    if let Some(section) = parsed.get(&sub_name) {
        let Value::Object(section) = section else {
            return Err(bad(format!("{sub_name:?} must map to an object")).into());
        };
        for (k, v) in section {
            let key = k.replace('_', "-");
            if !own.iter().any(|f| f.names.contains(&key)) {
                return Err(bad(format!("{sub_name} has no flag {k:?}")).into());
            }
            set(&key, v);
        }
    }

    let mut extra = Vec::new();
    for (key, v) in &picked {
        let flag = own
            .iter()
            .find(|f| f.names.contains(key))
            .expect("checked above");
        if !explicitly_given(&argv, flag) {
            extra.extend(tokens(flag, v, &bad)?);
        }
    }
    let mut out = argv[..=sub_idx].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[sub_idx + 1..]);
    Ok(out)
}

fn read_config(path: &Path) -> Result<serde_json::Map<String, Value>> {
    if !path.is_file() {
        return Err(HarnessError::MissingInput(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path)?;
    let bad = |message: String| HarnessError::InvalidConfig {
        path: path.to_path_buf(),
        message,
    };
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(bad("top level must be an object".into()).into()),
        Err(e) => Err(bad(e.to_string()).into()),
    }
}
