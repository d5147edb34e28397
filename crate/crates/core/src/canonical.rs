//! Canonical binary encoding used for every hashed or signed ledger value.
//!
//! Layout, one tagged item at a time:
//!
//! | tag  | kind   | body                                              |
//! |------|--------|---------------------------------------------------|
//! | 0x01 | int    | 8-byte big-endian two's complement                |
//! | 0x02 | string | 4-byte big-endian length, UTF-8 bytes             |
//! | 0x03 | bytes  | 4-byte big-endian length, raw bytes               |
//! | 0x04 | list   | 4-byte big-endian count, encoded elements         |
//! | 0x05 | map    | 4-byte big-endian count, (string key, value) pairs|
//!
//! Map keys are strings, encoded as tagged string items, and emitted in
//! ascending order of their UTF-8 bytes. The decoder only accepts input in
//! this exact form, so `encode(decode(b)) == b` for every accepted `b`.
//! There is no floating-point variant.

use std::collections::BTreeMap;

use thiserror::Error;

pub const TAG_INT: u8 = 0x01;
pub const TAG_STR: u8 = 0x02;
pub const TAG_BYTES: u8 = 0x03;
pub const TAG_LIST: u8 = 0x04;
pub const TAG_MAP: u8 = 0x05;

/// Nesting limit for the decoder. Ledger values never get close.
const MAX_DEPTH: usize = 64;

/// A structured record that can be canonically encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("floating-point value at {path} cannot be encoded exactly")]
    Float { path: String },
    #[error("null value at {path} cannot be encoded")]
    Null { path: String },
    #[error("{what} too long to encode ({len} items)")]
    TooLong { what: &'static str, len: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    UnexpectedEof(usize),
    #[error("unknown type tag 0x{tag:02x} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("invalid UTF-8 in string at offset {0}")]
    InvalidUtf8(usize),
    #[error("map key at offset {0} is not a string")]
    NonStringKey(usize),
    #[error("map keys out of order or duplicated at offset {0}")]
    UnsortedKeys(usize),
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("nesting deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("field `{field}`: {problem}")]
    Field { field: String, problem: String },
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn bytes(b: impl Into<Vec<u8>>) -> Self {
        Value::Bytes(b.into())
    }

    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, Value)>) -> Self {
        Value::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Str(_) => "string",
            Value::Bytes(_) => "bytes",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    /// Converts a JSON document into a ledger value. Integers and strings
    /// map directly, booleans become 0/1, arrays and objects recurse.
    /// Floats and nulls are rejected.
    pub fn try_from_json(json: &serde_json::Value) -> Result<Self, EncodeError> {
        fn go(json: &serde_json::Value, path: &mut String) -> Result<Value, EncodeError> {
            use serde_json::Value as J;
            Ok(match json {
                J::Null => return Err(EncodeError::Null { path: path.clone() }),
                J::Bool(b) => Value::Int(i64::from(*b)),
                J::Number(n) => match n.as_i64() {
                    Some(i) => Value::Int(i),
                    None => return Err(EncodeError::Float { path: path.clone() }),
                },
                J::String(s) => Value::Str(s.clone()),
                J::Array(items) => {
                    let mut out = Vec::with_capacity(items.len());
                    for (i, item) in items.iter().enumerate() {
                        let len = path.len();
                        path.push_str(&format!("[{i}]"));
                        out.push(go(item, path)?);
                        path.truncate(len);
                    }
                    Value::List(out)
                }
                J::Object(obj) => {
                    let mut out = BTreeMap::new();
                    for (k, v) in obj {
                        let len = path.len();
                        path.push('.');
                        path.push_str(k);
                        out.insert(k.clone(), go(v, path)?);
                        path.truncate(len);
                    }
                    Value::Map(out)
                }
            })
        }
        go(json, &mut String::from("$"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Int(i) => J::from(*i),
            Value::Str(s) => J::from(s.as_str()),
            Value::Bytes(b) => J::from(hex::encode(b)),
            Value::List(items) => J::Array(items.iter().map(Value::to_json).collect()),
            Value::Map(m) => J::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

fn len_prefix(out: &mut Vec<u8>, what: &'static str, len: usize) -> Result<(), EncodeError> {
    let len32 = u32::try_from(len).map_err(|_| EncodeError::TooLong { what, len })?;
    out.extend_from_slice(&len32.to_be_bytes());
    Ok(())
}

fn encode_into(value: &Value, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    match value {
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Value::Str(s) => {
            out.push(TAG_STR);
            len_prefix(out, "string", s.len())?;
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            len_prefix(out, "byte array", b.len())?;
            out.extend_from_slice(b);
        }
        Value::List(items) => {
            out.push(TAG_LIST);
            len_prefix(out, "list", items.len())?;
            for item in items {
                encode_into(item, out)?;
            }
        }
        Value::Map(entries) => {
            out.push(TAG_MAP);
            len_prefix(out, "map", entries.len())?;
            // BTreeMap<String, _> iterates in byte order of the UTF-8 keys.
            for (k, v) in entries {
                out.push(TAG_STR);
                len_prefix(out, "string", k.len())?;
                out.extend_from_slice(k.as_bytes());
                encode_into(v, out)?;
            }
        }
    }
    Ok(())
}

/// Encodes a value into its canonical byte form.
pub fn try_encode(value: &Value) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::new();
    encode_into(value, &mut out)?;
    Ok(out)
}

/// Encodes a value whose components are known to fit the 4-byte length
/// prefixes. Panics otherwise; ledger types never get near 4 GiB.
pub fn encode(value: &Value) -> Vec<u8> {
    try_encode(value).expect("ledger value exceeds canonical length limits")
}

/// Encodes a JSON document, rejecting floats and nulls.
pub fn encode_json(json: &serde_json::Value) -> Result<Vec<u8>, EncodeError> {
    try_encode(&Value::try_from_json(json)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DecodeError::UnexpectedEof(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string_body(&mut self) -> Result<String, DecodeError> {
        let start = self.pos;
        let len = self.u32()?;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::InvalidUtf8(start))
    }

    fn value(&mut self, depth: usize) -> Result<Value, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(DecodeError::TooDeep);
        }
        let offset = self.pos;
        match self.u8()? {
            TAG_INT => {
                let b = self.take(8)?;
                let mut arr = [0u8; 8];
                arr.copy_from_slice(b);
                Ok(Value::Int(i64::from_be_bytes(arr)))
            }
            TAG_STR => Ok(Value::Str(self.string_body()?)),
            TAG_BYTES => {
                let len = self.u32()?;
                Ok(Value::Bytes(self.take(len)?.to_vec()))
            }
            TAG_LIST => {
                let count = self.u32()?;
                // Each element takes at least 5 bytes; reject absurd counts before allocating.
                if count > self.buf.len() - self.pos {
                    return Err(DecodeError::UnexpectedEof(self.pos));
                }
                let mut items = Vec::with_capacity(count);
                for _ in 0..count {
                    items.push(self.value(depth + 1)?);
                }
                Ok(Value::List(items))
            }
            TAG_MAP => {
                let count = self.u32()?;
                if count > self.buf.len() - self.pos {
                    return Err(DecodeError::UnexpectedEof(self.pos));
                }
                let mut entries = BTreeMap::new();
                let mut last: Option<String> = None;
                for _ in 0..count {
                    let key_offset = self.pos;
                    if self.u8()? != TAG_STR {
                        return Err(DecodeError::NonStringKey(key_offset));
                    }
                    let key = self.string_body()?;
                    if last.as_ref().is_some_and(|prev| prev.as_bytes() >= key.as_bytes()) {
                        return Err(DecodeError::UnsortedKeys(key_offset));
                    }
                    let value = self.value(depth + 1)?;
                    last = Some(key.clone());
                    entries.insert(key, value);
                }
                Ok(Value::Map(entries))
            }
            tag => Err(DecodeError::UnknownTag { tag, offset }),
        }
    }
}

/// Decodes exactly one canonical value spanning the whole input.
pub fn decode(bytes: &[u8]) -> Result<Value, DecodeError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.value(0)?;
    if reader.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - reader.pos));
    }
    Ok(value)
}

/// Field access helper for turning decoded maps back into typed structs.
pub struct Fields<'a> {
    map: &'a BTreeMap<String, Value>,
}

impl<'a> Fields<'a> {
    pub fn of(value: &'a Value, what: &str) -> Result<Self, DecodeError> {
        value.as_map().map(|map| Fields { map }).ok_or_else(|| DecodeError::Field {
            field: what.to_owned(),
            problem: format!("expected map, found {}", value.kind_name()),
        })
    }

    fn problem(field: &str, problem: impl Into<String>) -> DecodeError {
        DecodeError::Field { field: field.to_owned(), problem: problem.into() }
    }

    pub fn get(&self, field: &str) -> Result<&'a Value, DecodeError> {
        self.map.get(field).ok_or_else(|| Self::problem(field, "missing"))
    }

    pub fn opt(&self, field: &str) -> Option<&'a Value> {
        self.map.get(field)
    }

    pub fn str(&self, field: &str) -> Result<&'a str, DecodeError> {
        let v = self.get(field)?;
        v.as_str().ok_or_else(|| Self::problem(field, format!("expected string, found {}", v.kind_name())))
    }

    pub fn int(&self, field: &str) -> Result<i64, DecodeError> {
        let v = self.get(field)?;
        v.as_int().ok_or_else(|| Self::problem(field, format!("expected int, found {}", v.kind_name())))
    }

    pub fn bytes(&self, field: &str) -> Result<&'a [u8], DecodeError> {
        let v = self.get(field)?;
        v.as_bytes().ok_or_else(|| Self::problem(field, format!("expected bytes, found {}", v.kind_name())))
    }

    pub fn fixed<const N: usize>(&self, field: &str) -> Result<[u8; N], DecodeError> {
        let b = self.bytes(field)?;
        b.try_into().map_err(|_| Self::problem(field, format!("expected {N} bytes, found {}", b.len())))
    }

    pub fn list(&self, field: &str) -> Result<&'a [Value], DecodeError> {
        match self.get(field)? {
            Value::List(items) => Ok(items),
            v => Err(Self::problem(field, format!("expected list, found {}", v.kind_name()))),
        }
    }

    /// Fails if the map carries keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<(), DecodeError> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Self::problem(k, "unexpected field")),
            None => Ok(()),
        }
    }
}
