use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::SolutionError;
use crate::autotune::ExperimentRecord;
use crate::envdetect::PlatformInfo;
use crate::json as cjson;

pub const BUNDLE_FILE: &str = "results.bundle.json";
pub const FORMAT_VERSION: u32 = 1;

/// Portable set of experiment records from one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub bundle_id: String,
    pub solution_name: String,
    pub records: Vec<ExperimentRecord>,
    pub platform: PlatformInfo,
    pub created_at: DateTime<Utc>,
    pub format_version: u32,
}

pub fn read_bundle(path: &Path) -> Result<ResultBundle, SolutionError> {
    let v = cjson::read_json(path).map_err(|source| SolutionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_value(v).map_err(|e| SolutionError::InvalidBundle(format!("{}: {e}", path.display())))
}

/// A record tagged with the bundle it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub source: String,
    pub record: ExperimentRecord,
}

/// Union of the bundles' records, deduplicated by `experiment_uid` with the
/// first occurrence kept, in bundle order then record order.
pub fn merge_bundles(bundles: &[ResultBundle]) -> Result<Vec<MergedRecord>, SolutionError> {
    if let Some(first) = bundles.first() {
        if let Some(b) = bundles.iter().find(|b| b.format_version != first.format_version) {
            return Err(SolutionError::FormatVersionMismatch {
                expected: first.format_version,
                found: b.format_version,
            });
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for b in bundles {
        for r in &b.records {
            if seen.insert(r.experiment_uid.as_str()) {
                out.push(MergedRecord {
                    source: b.bundle_id.clone(),
                    record: r.clone(),
                });
            }
        }
    }
    Ok(out)
}
