use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One token of a version string. Numeric tokens keep their digits with
/// leading zeros removed, so values of any width compare exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VersionPart {
    Numeric(String),
    Textual(String),
}

impl VersionPart {
    fn parse(token: &str) -> VersionPart {
        if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
            let digits = token.trim_start_matches('0');
            return VersionPart::Numeric(if digits.is_empty() { "0" } else { digits }.to_string());
        }
        VersionPart::Textual(token.to_string())
    }

    /// Value of a numeric token, if it fits in `u64`.
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            VersionPart::Numeric(d) => d.parse().ok(),
            VersionPart::Textual(_) => None,
        }
    }
}

impl Ord for VersionPart {
    fn cmp(&self, other: &Self) -> Ordering {
        use VersionPart::*;
        match (self, other) {
            (Numeric(a), Numeric(b)) => a.len().cmp(&b.len()).then_with(|| a.cmp(b)),
            (Textual(a), Textual(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Numeric(_), Textual(_)) => Ordering::Less,
            (Textual(_), Numeric(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for VersionPart {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A version split on `.`, `-` and `_`.
///
/// Ordering is componentwise with missing trailing components treated as
/// numeric zero, so `3.0 == 3.0.0`. Equality follows the ordering, not the
/// raw text.
#[derive(Debug, Clone)]
pub struct Version {
    raw: String,
    components: Vec<VersionPart>,
}

impl Version {
    pub fn parse(raw: &str) -> Version {
        Version {
            raw: raw.to_string(),
            components: raw.split(['.', '-', '_']).map(VersionPart::parse).collect(),
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn components(&self) -> &[VersionPart] {
        &self.components
    }
}

pub fn compare_versions(a: &Version, b: &Version) -> Ordering {
    a.cmp(b)
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        let zero = VersionPart::Numeric("0".into());
        let len = self.components.len().max(other.components.len());
        for i in 0..len {
            let a = self.components.get(i).unwrap_or(&zero);
            let b = other.components.get(i).unwrap_or(&zero);
            match a.cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Version {}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl From<&str> for Version {
    fn from(s: &str) -> Self {
        Version::parse(s)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(Version::parse(&raw))
    }
}
