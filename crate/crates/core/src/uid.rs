//! 16-hex-character identifiers.

/// A fresh 64-bit identifier from the OS random source, rendered as 16 lowercase hex chars.
pub fn generate() -> String {
    let mut buf = [0u8; 8];
    getrandom::fill(&mut buf).expect("OS random source unavailable");
    hex::encode(buf)
}

pub fn is_uid(s: &str) -> bool {
    s.len() == 16 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// First 16 hex chars of the SHA-256 of `bytes`.
pub fn short_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
