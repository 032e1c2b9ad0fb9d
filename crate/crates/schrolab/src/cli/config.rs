//! JSON config documents: loading, key checking and the canonical digest.

use crate::error::{LabError, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::Path;

pub fn load(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(LabError::Config(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(LabError::Config(format!("{}: {e}", path.display()))),
    }
}

/// Deserializes `T` from `doc`, refusing keys that `T` does not have.
pub fn parse<T: DeserializeOwned + Serialize + Default>(doc: Map<String, Value>) -> Result<T> {
    let known = match serde_json::to_value(T::default()) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Some(k) = doc.keys().find(|k| !known.contains_key(*k)) {
        return Err(LabError::Config(format!("unknown config key `{k}`")));
    }
    serde_json::from_value(Value::Object(doc)).map_err(|e| LabError::Config(e.to_string()))
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> =
                keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&m[k.as_str()]))).collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Hex sha256 of the canonical form.
pub fn digest(v: &Value) -> String {
    Sha256::digest(canonical_json(v).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default)]
    struct Demo {
        a: f64,
        b: Option<String>,
    }

    #[test]
    fn digest_ignores_key_order() {
        let x: Value = serde_json::from_str(r#"{"b": [1, {"z": 1, "y": 2}], "a": 0.5}"#).unwrap();
        let y: Value = serde_json::from_str(r#"{"a": 0.5, "b": [1, {"y": 2, "z": 1}]}"#).unwrap();
        assert_eq!(digest(&x), digest(&y));
        assert_eq!(canonical_json(&x), r#"{"a":0.5,"b":[1,{"y":2,"z":1}]}"#);
        let z: Value = serde_json::from_str(r#"{"a": 0.25, "b": []}"#).unwrap();
        assert_ne!(digest(&x), digest(&z));
    }

    #[test]
    fn unknown_keys_are_refused() {
        let doc = |s: &str| match serde_json::from_str::<Value>(s).unwrap() {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        assert_eq!(parse::<Demo>(doc(r#"{"a": 2}"#)).unwrap(), Demo { a: 2.0, b: None });
        assert!(parse::<Demo>(doc(r#"{"c": 2}"#)).is_err());
        assert!(parse::<Demo>(doc(r#"{"a": "x"}"#)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn digest_is_stable_under_key_reordering(entries in proptest::collection::btree_map("[a-z]{1,6}", -1000i64..1000, 0..12)) {
            let forward: Vec<String> = entries.iter().map(|(k, v)| format!("\"{k}\": {v}")).collect();
            let backward: Vec<String> = forward.iter().rev().cloned().collect();
            let x: Value = serde_json::from_str(&format!("{{{}}}", forward.join(", "))).unwrap();
            let y: Value = serde_json::from_str(&format!("{{{}}}", backward.join(", "))).unwrap();
            proptest::prop_assert_eq!(digest(&x), digest(&y));
        }
    }
}
