//! Merging of JSON config files with command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// Flat JSON object of flag values. Keys may use dashes or underscores.
pub fn load(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()),
        Ok(_) => Err(Failure::Usage("config file must hold a JSON object".into())),
        Err(e) => Err(Failure::Usage(format!("config {}: {e}", path.display()))),
    }
}

/// Fills every flag left unset on the command line from `config`.
pub fn resolve<T: Serialize + DeserializeOwned>(cli: &T, config: &Map<String, Value>) -> Result<T, Failure> {
    let mut merged = config.clone();
    let Value::Object(given) = serde_json::to_value(cli).map_err(|e| Failure::Internal(e.to_string()))? else {
        return Err(Failure::Internal("arguments did not serialize to an object".into()));
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::Usage(format!("config: {e}")))
}

pub fn is_false(b: &bool) -> bool {
    !*b
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Args {
        n: Option<usize>,
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "is_false")]
        strict: bool,
    }

    #[test]
    fn command_line_wins() {
        let cfg: Map<String, Value> = serde_json::from_str(r#"{"n": 3, "seed": 9, "strict": true, "other": 1}"#).unwrap();
        let cli = Args { n: Some(5), seed: None, strict: false };
        assert_eq!(resolve(&cli, &cfg).unwrap(), Args { n: Some(5), seed: Some(9), strict: true });
    }

    #[test]
    fn bad_types_are_usage_errors() {
        let cfg: Map<String, Value> = serde_json::from_str(r#"{"n": "three"}"#).unwrap();
        let cli = Args { n: None, seed: None, strict: false };
        assert!(matches!(resolve(&cli, &cfg), Err(Failure::Usage(_))));
    }
}
