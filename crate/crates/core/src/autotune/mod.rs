//! Design-space exploration, experiment records and Pareto filtering.

mod pareto;
mod rng;
mod space;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::envdetect::{collect_platform_info, EnvEntry, PlatformInfo};
use crate::json as cjson;
use crate::pipeline::{aggregate_stats, extract_characteristics, AggregatedStats, Characteristics, Pipeline, PipelineError, PipelineState};
use crate::registry::{ComponentId, EntryMeta, Kind, RegistryError, Repo};
use crate::uid;

pub use pareto::{
    cost_vector, dominates, dominates_costs, is_time_like, objective_value, pareto_filter, pareto_indices, AggregateField,
    Direction, ObjectiveSpec,
};
pub use rng::SplitMix64;
pub use space::{enumerate_grid, sample_random, DesignSpace, Domain, ParameterDecl, Point, SpaceError, DEFAULT_GRID_CAP};

#[derive(Debug, thiserror::Error)]
pub enum AutotuneError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("experiment {experiment_uid} has no value for objective `{key}`")]
    MissingObjectiveKey { experiment_uid: String, key: String },
    #[error("invalid objective `{0}`")]
    InvalidObjective(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// Outcome of one repetition as kept in a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time_s: f64,
    /// Why the repetition contributed no characteristics, if it did not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One evaluated design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_uid: String,
    pub program: ComponentId,
    pub point: Point,
    /// Characteristics of the successful repetitions.
    pub repetitions: Vec<Characteristics>,
    pub runs: Vec<RunSummary>,
    pub aggregated: Option<AggregatedStats>,
    pub platform: PlatformInfo,
    pub env_fingerprint: String,
    pub timestamp: DateTime<Utc>,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn to_entry_meta(&self) -> EntryMeta {
        let mut doc = serde_json::to_value(self).expect("record serializes");
        let status = match self.status {
            RecordStatus::Ok => "ok",
            RecordStatus::Failed => "failed",
        };
        doc["tags"] = json!(["experiment", status, format!("program:{}", self.program.uid)]);
        EntryMeta::from_document(doc).expect("record document is an object")
    }

    pub fn from_entry(meta: &EntryMeta) -> Result<ExperimentRecord, RegistryError> {
        serde_json::from_value(meta.document()).map_err(|e| RegistryError::InvalidMeta(e.to_string()))
    }

    /// Store the record under its own uid in registry kind `experiment`.
    pub fn persist(&self, repo: &Repo) -> Result<ComponentId, RegistryError> {
        repo.add_entry_with_uid(Kind::Experiment, &self.experiment_uid, None, &self.to_entry_meta(), None)
    }
}

/// All experiment records across `repos`, in registry listing order.
pub fn load_experiments(repos: &[Repo]) -> Result<Vec<(ComponentId, ExperimentRecord)>, RegistryError> {
    let mut out = Vec::new();
    for repo in repos {
        for (id, meta) in repo.list_entries(Kind::Experiment)? {
            match ExperimentRecord::from_entry(&meta) {
                Ok(r) => out.push((id, r)),
                Err(e) => log::warn!("skipping experiment {id}: {e}"),
            }
        }
    }
    Ok(out)
}

/// SHA-256 over the canonical, sorted list of bound `[soft_name, version]` pairs.
pub fn env_fingerprint<'a>(bound: impl IntoIterator<Item = &'a EnvEntry>) -> String {
    let pairs: BTreeSet<(String, String)> = bound
        .into_iter()
        .map(|e| (e.soft_name.clone(), e.version.raw().to_string()))
        .collect();
    let canonical = cjson::to_canonical_string(&pairs.into_iter().collect::<Vec<_>>()).expect("pairs serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    Grid,
    Random { seed: u64, n: usize },
}

impl Strategy {
    pub fn points(&self, space: &DesignSpace) -> Result<Vec<Point>, SpaceError> {
        match self {
            Strategy::Grid => enumerate_grid(space, DEFAULT_GRID_CAP),
            Strategy::Random { seed, n } => sample_random(space, *seed, (*n).max(1)),
        }
    }
}

pub struct ExploreOptions<'a> {
    pub repetitions: usize,
    /// Records are persisted here as they complete.
    pub repo: Option<&'a Repo>,
    /// Characteristic keys every successful repetition must report.
    pub expected_keys: Vec<String>,
}

/// Evaluate each design point in order and return one record per point.
///
/// Point `i` runs in `workdir/points/<i>/`. Only setup failures abort: an
/// unbound dependency or a failing baseline build. A point that fails to
/// build, run or extract yields a `failed` record and exploration continues.
pub fn explore(
    pipeline: &Pipeline,
    bindings: &BTreeMap<String, EnvEntry>,
    space: &DesignSpace,
    strategy: &Strategy,
    workdir: &Path,
    opts: &ExploreOptions<'_>,
) -> Result<Vec<ExperimentRecord>, AutotuneError> {
    space.validate()?;
    for p in space.params() {
        if !pipeline.program.exposed.contains_key(&p.pointer) {
            return Err(PipelineError::UnknownParameter(p.pointer.clone()).into());
        }
    }
    let points = strategy.points(space)?;
    let mut base = pipeline.assemble(bindings, &workdir.join("base"))?;
    pipeline.build(&mut base)?;

    let platform = collect_platform_info();
    let fingerprint = env_fingerprint(bindings.values());
    let mut records = Vec::with_capacity(points.len());
    for (i, point) in points.iter().enumerate() {
        let dir = workdir.join("points").join(i.to_string());
        let mut record = ExperimentRecord {
            experiment_uid: uid::generate(),
            program: pipeline.program_id.clone(),
            point: point.clone(),
            repetitions: Vec::new(),
            runs: Vec::new(),
            aggregated: None,
            platform: platform.clone(),
            env_fingerprint: fingerprint.clone(),
            timestamp: Utc::now(),
            status: RecordStatus::Failed,
            error: None,
        };
        if let Err(e) = evaluate_point(pipeline, &base, point, &dir, opts, &mut record) {
            log::warn!("point {i} failed: {e}");
            record.error = Some(e.to_string());
        }
        if let Some(repo) = opts.repo {
            record.persist(repo)?;
        }
        records.push(record);
    }
    Ok(records)
}

fn evaluate_point(
    pipeline: &Pipeline,
    base: &PipelineState,
    point: &Point,
    dir: &PathBuf,
    opts: &ExploreOptions<'_>,
    record: &mut ExperimentRecord,
) -> Result<(), PipelineError> {
    let mut state = pipeline.apply_point(base, point)?;
    state.relocate(dir);
    state.snapshot()?;
    let results = pipeline.run(&mut state, opts.repetitions.max(1))?;
    let mut errors = Vec::new();
    for r in &results {
        let extracted = extract_characteristics(r, &pipeline.program.extractor).and_then(|c| {
            match opts.expected_keys.iter().find(|k| !c.contains_key(*k)) {
                Some(k) => Err(PipelineError::InvalidResultFile(format!("expected characteristic `{k}` is missing"))),
                None => Ok(c),
            }
        });
        let error = match extracted {
            Ok(c) => {
                record.repetitions.push(c);
                None
            }
            Err(e) => {
                errors.push(format!("rep {}: {e}", r.index));
                Some(e.to_string())
            }
        };
        record.runs.push(RunSummary {
            index: r.index,
            exit_code: r.exit_code,
            timed_out: r.timed_out,
            wall_time_s: r.wall_time_s,
            error,
        });
    }
    if record.repetitions.is_empty() {
        record.error = Some(errors.join("; "));
        return Ok(());
    }
    record.aggregated = Some(aggregate_stats(&record.repetitions)?);
    record.status = RecordStatus::Ok;
    if !errors.is_empty() {
        record.error = Some(errors.join("; "));
    }
    Ok(())
}
