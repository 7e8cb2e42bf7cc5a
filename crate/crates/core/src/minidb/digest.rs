use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::value::Row;

pub const FNV_OFFSET: u64 = 0xcbf29ce484222325;
pub const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Order-insensitive, duplicate-sensitive fingerprint of a result multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResultDigest {
    #[serde(serialize_with = "ser_hex", deserialize_with = "de_hex")]
    pub digest: u64,
    pub row_count: u64,
}

impl fmt::Display for ResultDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.digest)
    }
}

fn ser_hex<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:016x}"))
}

fn de_hex<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
}

/// Canonical text of a row: tab-joined values, no trailing newline.
pub fn row_line(row: &Row) -> String {
    let mut line = String::new();
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            line.push('\t');
        }
        line.push_str(&v.to_string());
    }
    line
}

pub fn result_digest(rows: &[Row]) -> ResultDigest {
    digest_lines(rows.iter().map(row_line))
}

/// Digest over already-serialized rows (one row per item, no newline).
pub fn digest_lines<I, S>(lines: I) -> ResultDigest
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut serialized: Vec<Vec<u8>> = lines
        .into_iter()
        .map(|l| {
            let mut bytes = l.as_ref().as_bytes().to_vec();
            bytes.push(b'\n');
            bytes
        })
        .collect();
    serialized.sort();
    let hash = serialized.iter().fold(FNV_OFFSET, |h, bytes| fnv1a64_extend(h, bytes));
    ResultDigest {
        digest: hash,
        row_count: serialized.len() as u64,
    }
}
