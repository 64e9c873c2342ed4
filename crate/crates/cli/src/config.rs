//! Layered configuration: defaults, then a JSON file, then explicit flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))
}

/// Overlay the config file onto `defaults`, then let `flags` win.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: T,
    file: Option<&Value>,
    flags: impl FnOnce(&mut T),
) -> Result<T, CliError> {
    let mut value = serde_json::to_value(defaults).map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(f) = file {
        merge(&mut value, f.clone());
    }
    let mut config: T = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("--config: {e}")))?;
    flags(&mut config);
    Ok(config)
}

/// Whether the config file sets `pointer` (a JSON pointer such as
/// `/encoder/image_size`).
pub fn file_sets(file: Option<&Value>, pointer: &str) -> bool {
    file.is_some_and(|f| f.pointer(pointer).is_some())
}
