//! Deterministic CBOR.
//!
//! Values are serialized through serde into a [`ciborium::Value`] tree, map
//! entries are sorted by the bytewise order of their encoded keys, and the
//! tree is written with shortest-form heads. Decoding re-encodes the parsed
//! tree and rejects input that does not reproduce itself byte for byte, so
//! every accepted body has exactly one encoding.

use ciborium::Value;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CborError {
    #[error("cbor encode failed: {0}")]
    Encode(String),
    #[error("cbor decode failed: {0}")]
    Decode(String),
    #[error("cbor input is not in canonical form")]
    NonCanonical,
}

pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CborError> {
    let tree = Value::serialized(value).map_err(|e| CborError::Encode(e.to_string()))?;
    encode_value(&canonicalize(tree))
}

pub fn from_canonical<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CborError> {
    let tree = decode_canonical_value(bytes)?;
    tree.deserialized().map_err(|e| CborError::Decode(e.to_string()))
}

/// Parses one CBOR item that must make up the whole input and be canonical.
pub fn decode_canonical_value(bytes: &[u8]) -> Result<Value, CborError> {
    let tree: Value =
        ciborium::de::from_reader(bytes).map_err(|e| CborError::Decode(e.to_string()))?;
    if encode_value(&canonicalize(tree.clone()))? != bytes {
        return Err(CborError::NonCanonical);
    }
    Ok(tree)
}

pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Map(entries) => {
            let mut keyed: Vec<(Vec<u8>, Value, Value)> = entries
                .into_iter()
                .map(|(k, v)| {
                    let k = canonicalize(k);
                    let encoded = encode_value(&k).unwrap_or_default();
                    (encoded, k, canonicalize(v))
                })
                .collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Map(keyed.into_iter().map(|(_, k, v)| (k, v)).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Tag(tag, inner) => Value::Tag(tag, Box::new(canonicalize(*inner))),
        other => other,
    }
}

pub fn encode_value(value: &Value) -> Result<Vec<u8>, CborError> {
    let mut out = Vec::new();
    ciborium::ser::into_writer(value, &mut out).map_err(|e| CborError::Encode(e.to_string()))?;
    Ok(out)
}
