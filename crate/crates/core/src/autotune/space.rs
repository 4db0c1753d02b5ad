use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::rng::SplitMix64;
use crate::json;

/// Default limit on the number of grid points.
pub const DEFAULT_GRID_CAP: u128 = 1_000_000;

/// One design point: JSON pointer → value.
pub type Point = BTreeMap<String, Value>;

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("design space has {cardinality} points, above the cap of {cap}")]
    SpaceTooLarge { cardinality: u128, cap: u128 },
    #[error("invalid parameter `{pointer}`: {reason}")]
    InvalidParameter { pointer: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Domain {
    Categorical { values: Vec<Value> },
    IntRange { lo: i64, hi: i64, step: u64 },
    Boolean,
}

impl Domain {
    pub fn size(&self) -> u64 {
        match self {
            Domain::Categorical { values } => values.len() as u64,
            Domain::IntRange { lo, hi, step } => {
                if hi < lo || *step == 0 {
                    0
                } else {
                    ((*hi as i128 - *lo as i128) / *step as i128 + 1) as u64
                }
            }
            Domain::Boolean => 2,
        }
    }

    /// The `i`-th value in domain order (`i < size()`).
    pub fn value_at(&self, i: u64) -> Value {
        match self {
            Domain::Categorical { values } => values[i as usize].clone(),
            Domain::IntRange { lo, step, .. } => Value::from((*lo as i128 + i as i128 * *step as i128) as i64),
            Domain::Boolean => Value::Bool(i == 1),
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match self {
            Domain::Categorical { values } => values.contains(v),
            Domain::IntRange { lo, hi, step } => match v.as_i64() {
                Some(x) => x >= *lo && x <= *hi && (x as i128 - *lo as i128) % *step as i128 == 0,
                None => false,
            },
            Domain::Boolean => v.is_boolean(),
        }
    }
}

/// A tunable location in the pipeline state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDecl {
    #[serde(default)]
    pub pointer: String,
    pub domain: Domain,
    pub default: Value,
}

impl ParameterDecl {
    pub fn validate(&self) -> Result<(), SpaceError> {
        let bad = |reason: &str| {
            Err(SpaceError::InvalidParameter {
                pointer: self.pointer.clone(),
                reason: reason.to_string(),
            })
        };
        match json::pointer_tokens(&self.pointer) {
            Some(t) if !t.is_empty() => {}
            _ => return bad("not a JSON pointer"),
        }
        match &self.domain {
            Domain::Categorical { values } => {
                if values.is_empty() {
                    return bad("categorical domain is empty");
                }
                let distinct: HashSet<String> = values.iter().map(|v| v.to_string()).collect();
                if distinct.len() != values.len() {
                    return bad("categorical values are not distinct");
                }
            }
            Domain::IntRange { lo, hi, step } => {
                if lo > hi {
                    return bad("lo > hi");
                }
                if *step < 1 {
                    return bad("step must be >= 1");
                }
            }
            Domain::Boolean => {}
        }
        if !self.domain.contains(&self.default) {
            return bad("default is outside the domain");
        }
        Ok(())
    }
}

/// Ordered parameter declarations; the cross-product of their domains.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignSpace(pub Vec<ParameterDecl>);

impl DesignSpace {
    pub fn params(&self) -> &[ParameterDecl] {
        &self.0
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let mut seen = HashSet::new();
        for p in &self.0 {
            p.validate()?;
            if !seen.insert(p.pointer.as_str()) {
                return Err(SpaceError::InvalidParameter {
                    pointer: p.pointer.clone(),
                    reason: "declared twice".into(),
                });
            }
        }
        Ok(())
    }

    /// Product of domain sizes, saturating at `u128::MAX`.
    pub fn cardinality(&self) -> u128 {
        self.0
            .iter()
            .fold(1u128, |acc, p| acc.saturating_mul(p.domain.size() as u128))
    }

    pub fn default_point(&self) -> Point {
        self.0.iter().map(|p| (p.pointer.clone(), p.default.clone())).collect()
    }
}

/// Full cross-product, first parameter slowest and last parameter fastest.
pub fn enumerate_grid(space: &DesignSpace, cap: u128) -> Result<Vec<Point>, SpaceError> {
    space.validate()?;
    let cardinality = space.cardinality();
    if cardinality > cap {
        return Err(SpaceError::SpaceTooLarge { cardinality, cap });
    }
    let params = space.params();
    let sizes: Vec<u64> = params.iter().map(|p| p.domain.size()).collect();
    let mut digits = vec![0u64; params.len()];
    let mut out = Vec::with_capacity(cardinality as usize);
    for _ in 0..cardinality {
        out.push(
            params
                .iter()
                .zip(&digits)
                .map(|(p, &d)| (p.pointer.clone(), p.domain.value_at(d)))
                .collect(),
        );
        // mixed-radix increment, last digit fastest
        for i in (0..digits.len()).rev() {
            digits[i] += 1;
            if digits[i] < sizes[i] {
                break;
            }
            digits[i] = 0;
        }
    }
    Ok(out)
}

/// `n` independent uniform draws. For each point, parameters are drawn in
/// declaration order with `SplitMix64::below(domain size)`.
pub fn sample_random(space: &DesignSpace, seed: u64, n: usize) -> Result<Vec<Point>, SpaceError> {
    space.validate()?;
    let mut rng = SplitMix64::new(seed);
    Ok((0..n)
        .map(|_| {
            space
                .params()
                .iter()
                .map(|p| (p.pointer.clone(), p.domain.value_at(rng.below(p.domain.size()))))
                .collect()
        })
        .collect())
}
