//! Layered configuration: built-in defaults, then the config file section
//! named after the subcommand, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

pub fn load_file(path: Option<&Path>) -> CliResult<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Usage("config file must hold a JSON object".into()));
    }
    Ok(Some(v))
}

/// A flag value, present only when given on the command line.
pub fn flag<T: Serialize>(key: &'static str, v: Option<T>) -> (&'static str, Option<Value>) {
    (key, v.map(|x| serde_json::to_value(x).expect("flag serializes")))
}

fn overlay(base: &mut Map<String, Value>, top: &Map<String, Value>, source: &str) -> CliResult<()> {
    for (k, v) in top {
        if !base.contains_key(k) {
            let known: Vec<&str> = base.keys().map(String::as_str).collect();
            return Err(CliError::Usage(format!("unknown {source} key {k:?} (known: {})", known.join(", "))));
        }
        base.insert(k.clone(), v.clone());
    }
    Ok(())
}

pub fn section<'a>(file: Option<&'a Value>, name: &str) -> CliResult<Option<&'a Map<String, Value>>> {
    match file.and_then(|f| f.get(name)) {
        None => Ok(None),
        Some(Value::Object(m)) => Ok(Some(m)),
        Some(_) => Err(CliError::Usage(format!("config section {name:?} must be an object"))),
    }
}

/// Resolves `T` with precedence flags > file section > defaults.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: T,
    file_section: Option<&Map<String, Value>>,
    flags: &[(&'static str, Option<Value>)],
) -> CliResult<T> {
    let Value::Object(mut base) = serde_json::to_value(defaults).expect("config serializes") else {
        unreachable!("configs are structs")
    };
    if let Some(s) = file_section {
        overlay(&mut base, s, "config")?;
    }
    let given: Map<String, Value> =
        flags.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect();
    overlay(&mut base, &given, "flag")?;
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
