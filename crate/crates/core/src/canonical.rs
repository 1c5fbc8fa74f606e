//! Canonical JSON: sorted keys, no insignificant whitespace, UTF-8, integers
//! only. Every hash and signature input in the crate goes through here.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error("value cannot be encoded canonically: {0}")]
    Unsupported(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("input is not in canonical form")]
    NotCanonical,
}

/// Encode any serializable value to canonical bytes.
pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value).map_err(|e| CanonicalError::Encoding(e.to_string()))?;
    value_to_vec(&value)
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    // The writer only ever emits UTF-8.
    to_vec(value).map(|bytes| String::from_utf8(bytes).expect("canonical writer emits UTF-8"))
}

pub fn value_to_vec(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    write_value(value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(CanonicalError::Unsupported(format!("non-integer number {n}")));
            }
        }
        Value::String(s) => write_string(s, out)?,
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out)?;
                out.push(b':');
                write_value(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    let quoted = serde_json::to_string(s).map_err(|e| CanonicalError::Encoding(e.to_string()))?;
    out.extend_from_slice(quoted.as_bytes());
    Ok(())
}

/// Parse JSON bytes into a value. Invalid UTF-8 is an encoding error.
pub fn from_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    std::str::from_utf8(bytes).map_err(|e| CanonicalError::Encoding(e.to_string()))?;
    serde_json::from_slice(bytes).map_err(|e| CanonicalError::Encoding(e.to_string()))
}

/// Parse bytes and require that they are exactly the canonical encoding of
/// the parsed value. Stored artifacts are read this way so that any byte-level
/// change either alters a value or is rejected outright.
pub fn from_canonical_slice<T>(bytes: &[u8]) -> Result<T, CanonicalError>
where
    T: DeserializeOwned + Serialize,
{
    let parsed: T = from_slice(bytes)?;
    if to_vec(&parsed)? != bytes {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(parsed)
}

/// Re-encode arbitrary JSON text canonically.
pub fn canonicalize(json: &str) -> Result<String, CanonicalError> {
    let value: Value = from_slice(json.as_bytes())?;
    Ok(String::from_utf8(value_to_vec(&value)?).expect("canonical writer emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_recursively_without_whitespace() {
        let v = json!({"z": 1, "a": {"y": [3, {"c": true, "b": null}], "x": "s"}});
        let out = String::from_utf8(value_to_vec(&v).unwrap()).unwrap();
        assert_eq!(out, r#"{"a":{"x":"s","y":[3,{"b":null,"c":true}]},"z":1}"#);
    }

    #[test]
    fn rejects_floats() {
        assert!(matches!(value_to_vec(&json!({"a": 1.5})), Err(CanonicalError::Unsupported(_))));
    }

    #[test]
    fn non_ascii_is_emitted_raw() {
        let out = to_string(&json!({"k": "é"})).unwrap();
        assert_eq!(out, "{\"k\":\"é\"}");
    }

    #[test]
    fn strict_parse_rejects_whitespace_and_key_order() {
        let ok: Value = from_canonical_slice(br#"{"a":1,"b":2}"#).unwrap();
        assert_eq!(ok, json!({"a": 1, "b": 2}));
        assert!(matches!(
            from_canonical_slice::<Value>(br#"{"b":2,"a":1}"#),
            Err(CanonicalError::NotCanonical)
        ));
        assert!(matches!(
            from_canonical_slice::<Value>(br#"{"a": 1}"#),
            Err(CanonicalError::NotCanonical)
        ));
    }

    #[test]
    fn invalid_utf8_is_an_encoding_error() {
        assert!(matches!(from_slice::<Value>(b"\"\xff\""), Err(CanonicalError::Encoding(_))));
    }
}
