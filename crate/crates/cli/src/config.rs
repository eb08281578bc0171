//! Config file handling. A TOML file has one table per subcommand whose
//! keys are the long flag names with `-` replaced by `_`; flags given on the
//! command line win over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub fn load(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Overlay the flags that were set on top of the command's config table.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&toml::Table>, command: &str) -> Result<T, CliError> {
    let mut base = match file.and_then(|t| t.get(command)) {
        Some(toml::Value::Table(t)) => serde_json::to_value(t).map_err(|e| CliError::Usage(e.to_string()))?,
        Some(_) => return Err(CliError::Usage(format!("config entry `{command}` must be a table"))),
        None => serde_json::Value::Object(Default::default()),
    };
    let over = serde_json::to_value(cli).map_err(|e| CliError::Usage(e.to_string()))?;
    if let (Some(b), Some(o)) = (base.as_object_mut(), over.as_object()) {
        for (k, v) in o {
            if !v.is_null() {
                b.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("[{command}] config: {e}")))
}

/// Parse a snake_case enum value through its serde representation.
pub fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, CliError> {
    let norm = s.trim().to_ascii_lowercase().replace('-', "_");
    serde_json::from_value(serde_json::Value::String(norm)).map_err(|_| CliError::Usage(format!("unknown {what} `{s}`")))
}
