//! Run reports and problem digests.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub problem_digest: String,
    pub parameters: Value,
    pub results: Value,
    pub stats: Value,
    pub wall_time_s: f64,
}

/// SHA-256 of the compact JSON form with object keys in sorted order.
/// serde_json's default map is ordered by key, so a parse/print round trip
/// canonicalizes.
pub fn digest_json(text: &str) -> Result<String, serde_json::Error> {
    let v: Value = serde_json::from_str(text)?;
    let canon = serde_json::to_string(&v)?;
    let hash = Sha256::digest(canon.as_bytes());
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}
