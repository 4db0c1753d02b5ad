//! Solution manifests: ordered, resumable setup tasks followed by a benchmark.
//!
//! A solution is stored as registry kind `solution` under its name. Its entry
//! directory doubles as the state directory holding the task journal
//! (`solution-state.json`), task logs, benchmark runs and the latest
//! `results.bundle.json`.

mod bundle;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Map, Value};

use crate::autotune::{self, AutotuneError, DesignSpace, ExploreOptions, ObjectiveSpec, Strategy};
use crate::envdetect::{self, collect_platform_info, DetectError, SoftPlugin};
use crate::json as cjson;
use crate::metapkg::{self, install_dir_for, InstallError, Installer, PackageSpec};
use crate::pipeline::{self, PipelineError};
use crate::process::{self, Capture, Invocation};
use crate::registry::{self, ComponentId, EntryLock, EntryMeta, Kind, RegistryError, Repo};
use crate::uid;

pub use bundle::{merge_bundles, read_bundle, MergedRecord, ResultBundle, BUNDLE_FILE, FORMAT_VERSION};
pub use report::{parse_rows, render_report, render_rows, scoreboard, ReportFormat, ScoreboardRow};

pub const JOURNAL_FILE: &str = "solution-state.json";
const LOCK_FILE: &str = ".solution.lock";

#[derive(Debug, thiserror::Error)]
pub enum SolutionError {
    #[error("task {index} ({action}) failed: {message}")]
    TaskFailed {
        index: usize,
        action: TaskAction,
        message: String,
        log: PathBuf,
    },
    #[error("solution targets `{target}` but this host is `{host}`")]
    TargetOsMismatch { target: String, host: String },
    #[error("invalid solution manifest: {0}")]
    SchemaViolation(String),
    #[error("solution `{0}` has not completed init")]
    InitIncomplete(String),
    #[error("bundle format version {found} does not match {expected}")]
    FormatVersionMismatch { expected: u32, found: u32 },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    Autotune(#[from] AutotuneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Install(#[from] InstallError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("I/O failure at `{}`: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> SolutionError + '_ {
    move |source| SolutionError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskAction {
    CreateIsolatedEnv,
    InstallPackage,
    DetectSoftware,
    CompileProgram,
    CustomScript,
}

impl std::fmt::Display for TaskAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = serde_json::to_value(self).expect("action serializes");
        f.write_str(v.as_str().unwrap_or_default())
    }
}

/// One setup step. `target` is a component key (string) or, for
/// `custom-script`, an argv array.
///
/// Parameters by action:
/// - `create-isolated-env`: `os` (list of accepted host OS names), `requires_binary`
/// - `install-package`: `version`, `force`
/// - `detect-software`: `roots` (extra search roots)
/// - `compile-program`: none
/// - `custom-script`: `timeout_s`, `env` (extra variables)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub action: TaskAction,
    #[serde(default)]
    pub target: Value,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub skippable: bool,
}

impl TaskSpec {
    /// Content hash used to decide whether a journaled outcome still applies.
    pub fn content_hash(&self) -> String {
        uid::short_digest(cjson::to_canonical_string(self).expect("task serializes").as_bytes())
    }

    fn target_key(&self) -> Option<&str> {
        self.target.as_str().filter(|s| !s.is_empty())
    }

    fn validate(&self, index: usize) -> Result<(), SolutionError> {
        let bad = |m: &str| Err(SolutionError::SchemaViolation(format!("task {index} ({}): {m}", self.action)));
        match self.action {
            TaskAction::InstallPackage | TaskAction::DetectSoftware | TaskAction::CompileProgram => {
                if self.target_key().is_none() {
                    return bad("`target` must name a component");
                }
            }
            TaskAction::CustomScript => {
                let ok = self
                    .target
                    .as_array()
                    .is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_string));
                if !ok {
                    return bad("`target` must be a non-empty argv array");
                }
            }
            TaskAction::CreateIsolatedEnv => {}
        }
        if let Some(os) = self.params.get("os") {
            if !os.as_array().is_some_and(|a| a.iter().all(Value::is_string)) {
                return bad("`params.os` must be a list of strings");
            }
        }
        if let Some(roots) = self.params.get("roots") {
            if !roots.as_array().is_some_and(|a| a.iter().all(Value::is_string)) {
                return bad("`params.roots` must be a list of paths");
            }
        }
        Ok(())
    }
}

fn one() -> u32 {
    1
}

fn objectives_de<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ObjectiveSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Obj {
        Short(String),
        Full(ObjectiveSpec),
    }
    Vec::<Obj>::deserialize(d)?
        .into_iter()
        .map(|o| match o {
            Obj::Short(s) => s.parse().map_err(serde::de::Error::custom),
            Obj::Full(f) => Ok(f),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Program key, `alias` or `uid`.
    pub program: String,
    #[serde(default = "one")]
    pub repetitions: u32,
    /// Objectives as objects or `key:min|max[:min|mean]` strings.
    #[serde(deserialize_with = "objectives_de")]
    pub objectives: Vec<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<DesignSpace>,
    /// Defaults to a grid over `space`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    /// Characteristics every successful repetition must report.
    #[serde(default)]
    pub expected_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub name: String,
    pub target_os: String,
    #[serde(default = "one")]
    pub format_version: u32,
    pub tasks: Vec<TaskSpec>,
    pub benchmark: BenchmarkSpec,
    #[serde(default = "default_report")]
    pub report: ReportSpec,
}

fn default_report() -> ReportSpec {
    ReportSpec {
        title: String::new(),
        reference_bundle: None,
    }
}

impl SolutionManifest {
    pub fn from_value(v: Value) -> Result<SolutionManifest, SolutionError> {
        let m: SolutionManifest = serde_json::from_value(v).map_err(|e| SolutionError::SchemaViolation(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<SolutionManifest, SolutionError> {
        let v = cjson::read_json(path).map_err(io_at(path))?;
        SolutionManifest::from_value(v)
    }

    pub fn validate(&self) -> Result<(), SolutionError> {
        let bad = |m: String| Err(SolutionError::SchemaViolation(m));
        if registry::validate_alias(&self.name).is_err() {
            return bad(format!("name `{}` is not a valid alias", self.name));
        }
        if self.format_version != FORMAT_VERSION {
            return bad(format!("format_version {} is not supported", self.format_version));
        }
        if self.target_os.is_empty() {
            return bad("target_os is empty".into());
        }
        if self.tasks.is_empty() {
            return bad("task list is empty".into());
        }
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate(i)?;
        }
        let b = &self.benchmark;
        if b.program.is_empty() {
            return bad("benchmark.program is empty".into());
        }
        if b.repetitions < 1 {
            return bad("benchmark.repetitions must be >= 1".into());
        }
        if b.objectives.is_empty() {
            return bad("benchmark.objectives is empty".into());
        }
        if let Some(space) = &b.space {
            space.validate().map_err(|e| SolutionError::SchemaViolation(e.to_string()))?;
        }
        Ok(())
    }

    pub fn check_host(&self) -> Result<(), SolutionError> {
        let host = std::env::consts::OS;
        if self.target_os == "any" || self.target_os == host {
            Ok(())
        } else {
            Err(SolutionError::TargetOsMismatch {
                target: self.target_os.clone(),
                host: host.to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub index: usize,
    pub action: TaskAction,
    pub hash: String,
    pub status: TaskStatus,
    #[serde(default)]
    pub message: String,
    pub finished_at: DateTime<Utc>,
}

/// Contents of `solution-state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionState {
    pub solution: String,
    pub tasks: Vec<TaskOutcome>,
    pub init_complete: bool,
    #[serde(skip)]
    pub state_dir: PathBuf,
}

impl SolutionState {
    pub fn load(state_dir: &Path) -> Result<Option<SolutionState>, SolutionError> {
        let path = state_dir.join(JOURNAL_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let v = cjson::read_json(&path).map_err(io_at(&path))?;
        let mut s: SolutionState = serde_json::from_value(v)
            .map_err(|e| SolutionError::Io {
                path: path.clone(),
                source: io::Error::new(io::ErrorKind::InvalidData, e),
            })?;
        s.state_dir = state_dir.to_path_buf();
        Ok(Some(s))
    }

    fn save(&self) -> Result<(), SolutionError> {
        let path = self.state_dir.join(JOURNAL_FILE);
        cjson::write_canonical_atomic(&path, self).map_err(io_at(&path))
    }

    /// Indices whose journaled outcome is `ok`.
    pub fn ok_indices(&self) -> Vec<usize> {
        self.tasks
            .iter()
            .filter(|t| t.status == TaskStatus::Ok)
            .map(|t| t.index)
            .collect()
    }
}

/// Shared inputs for solution operations. The first repository receives
/// every write (solution entry, installs, envs, experiments).
pub struct SolutionContext<'a> {
    pub repos: &'a [Repo],
    pub installer: Installer<'a>,
}

impl SolutionContext<'_> {
    fn primary(&self) -> Result<&Repo, SolutionError> {
        self.repos
            .first()
            .ok_or_else(|| SolutionError::SchemaViolation("no repository configured".into()))
    }
}

/// Register (or refresh) the solution entry and return its id and state dir.
pub fn register_solution(manifest: &SolutionManifest, repo: &Repo) -> Result<(ComponentId, PathBuf), SolutionError> {
    let doc = serde_json::to_value(manifest).expect("manifest serializes");
    let Value::Object(meta) = doc else { unreachable!() };
    let id = match repo.find_entry(Kind::Solution, &manifest.name) {
        Ok((_, existing)) if existing.meta == meta => repo.find_entry(Kind::Solution, &manifest.name)?.0,
        Ok(_) => repo.update_meta(Kind::Solution, &manifest.name, meta)?,
        Err(RegistryError::NotFound { .. }) => {
            let entry = EntryMeta::new(["solution".to_string()].into(), meta);
            repo.add_entry(Kind::Solution, Some(&manifest.name), &entry, None)?
        }
        Err(e) => return Err(e.into()),
    };
    let dir = repo.entry_dir(&id);
    Ok((id, dir))
}

/// Execute the manifest's tasks in order, journaling each outcome.
///
/// A task whose journal entry is `ok` with an unchanged content hash is not
/// re-run. The first non-skippable failure aborts with the journal kept.
pub fn init_solution(manifest: &SolutionManifest, ctx: &SolutionContext<'_>) -> Result<SolutionState, SolutionError> {
    manifest.validate()?;
    manifest.check_host()?;
    let repo = ctx.primary()?;
    let (_, state_dir) = register_solution(manifest, repo)?;
    let _lock = EntryLock::acquire(&state_dir.join(LOCK_FILE))?;

    let previous = SolutionState::load(&state_dir)?;
    let mut state = SolutionState {
        solution: manifest.name.clone(),
        tasks: Vec::new(),
        init_complete: false,
        state_dir: state_dir.clone(),
    };
    for (index, task) in manifest.tasks.iter().enumerate() {
        let hash = task.content_hash();
        let done = previous.as_ref().and_then(|p| p.tasks.get(index)).filter(|t| t.hash == hash && t.status == TaskStatus::Ok);
        if let Some(done) = done {
            log::info!("task {index} ({}) already done", task.action);
            state.tasks.push(done.clone());
            continue;
        }
        log::info!("task {index} ({})", task.action);
        let result = run_task(task, ctx, &state_dir);
        let (status, message) = match &result {
            Ok(msg) => (TaskStatus::Ok, msg.clone()),
            Err(e) if task.skippable => {
                log::warn!("task {index} ({}) skipped: {e}", task.action);
                (TaskStatus::Skipped, e.to_string())
            }
            Err(e) => (TaskStatus::Failed, e.to_string()),
        };
        let log_path = state_dir.join("logs").join(format!("task.{index}.log"));
        write_log(&log_path, task, status, &message)?;
        state.tasks.push(TaskOutcome {
            index,
            action: task.action,
            hash,
            status,
            message: message.clone(),
            finished_at: Utc::now(),
        });
        if status == TaskStatus::Failed {
            state.save()?;
            return Err(SolutionError::TaskFailed {
                index,
                action: task.action,
                message,
                log: log_path,
            });
        }
    }
    state.init_complete = true;
    state.save()?;
    Ok(state)
}

fn write_log(path: &Path, task: &TaskSpec, status: TaskStatus, message: &str) -> Result<(), SolutionError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(io_at(p))?;
    }
    let doc = json!({"task": task, "status": status, "message": message, "at": Utc::now()});
    cjson::write_canonical_atomic(path, &doc).map_err(io_at(path))
}

fn task_error(message: String) -> SolutionError {
    SolutionError::SchemaViolation(message)
}

/// Run one task; the returned string is a short human-readable summary.
fn run_task(task: &TaskSpec, ctx: &SolutionContext<'_>, state_dir: &Path) -> Result<String, SolutionError> {
    let repo = ctx.primary()?;
    match task.action {
        TaskAction::CreateIsolatedEnv => {
            if let Some(os) = task.params.get("os").and_then(Value::as_array) {
                let host = std::env::consts::OS;
                if !os.iter().any(|o| o.as_str() == Some(host)) {
                    return Err(task_error(format!("host OS `{host}` is not in {}", Value::from(os.clone()))));
                }
            }
            if let Some(bin) = task.params.get("requires_binary").and_then(Value::as_str) {
                if find_binary(bin).is_none() {
                    return Err(task_error(format!("required binary `{bin}` not found")));
                }
            }
            let dir = state_dir.join("isolated-env");
            fs::create_dir_all(&dir).map_err(io_at(&dir))?;
            Ok(format!("isolated env at {}", dir.display()))
        }
        TaskAction::InstallPackage => {
            let key = task.target_key().unwrap_or_default();
            let version = task.params.get("version").and_then(Value::as_str);
            let pkg = find_package(ctx.repos, key, version)?;
            let target = install_dir_for(repo, &pkg);
            let force = task.params.get("force").and_then(Value::as_bool).unwrap_or(false);
            let installed = fs::read_dir(&target).map(|mut d| d.next().is_some()).unwrap_or(false);
            let registered = envdetect::list_envs(std::slice::from_ref(repo))?
                .into_iter()
                .any(|(_, e)| e.tool_path == target.canonicalize().unwrap_or_else(|_| target.clone()));
            if installed && registered && !force {
                return Ok(format!("{} already installed", pkg.key()));
            }
            let bound = metapkg::bind_dependencies(&pkg.deps, ctx.repos, &ctx.installer)?;
            let installer = Installer {
                fetcher: ctx.installer.fetcher,
                force: ctx.installer.force || force || installed,
            };
            let (id, _) = installer.install_into_repo(repo, &pkg, &bound)?;
            Ok(format!("installed {} as {id}", pkg.key()))
        }
        TaskAction::DetectSoftware => {
            let key = task.target_key().unwrap_or_default();
            let (soft_id, meta, _) = registry::find_in(ctx.repos, Kind::Soft, key)?;
            let plugin = SoftPlugin::from_entry(&meta).map_err(detect_err)?;
            let roots: Vec<PathBuf> = task
                .params
                .get("roots")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(PathBuf::from).collect())
                .unwrap_or_default();
            let found = envdetect::detect_software(&plugin, &roots).map_err(detect_err)?;
            if found.is_empty() {
                return Err(task_error(format!("`{}` was not found", plugin.soft_name)));
            }
            let mut ids = Vec::new();
            for mut e in found {
                e.soft_uid = Some(soft_id.clone());
                ids.push(envdetect::register_env(repo, &e)?.to_string());
            }
            Ok(format!("detected {}", ids.join(", ")))
        }
        TaskAction::CompileProgram => {
            let key = task.target_key().unwrap_or_default();
            let pipeline = pipeline::load_program(ctx.repos, key)?;
            let bound = metapkg::bind_dependencies(&pipeline.program.deps, ctx.repos, &ctx.installer)?;
            let workdir = state_dir.join("compile").join(&pipeline.program_id.uid);
            if workdir.exists() {
                fs::remove_dir_all(&workdir).map_err(io_at(&workdir))?;
            }
            let mut state = pipeline.assemble(&bound, &workdir)?;
            pipeline.build(&mut state)?;
            Ok(format!("compiled {}", pipeline.program_id))
        }
        TaskAction::CustomScript => {
            let argv: Vec<String> = task
                .target
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            let mut env: BTreeMap<String, String> = std::env::vars().collect();
            env.insert("CK_SOLUTION_DIR".into(), state_dir.to_string_lossy().into_owned());
            if let Some(extra) = task.params.get("env").and_then(Value::as_object) {
                for (k, v) in extra {
                    env.insert(k.clone(), pipeline::value_to_arg(v));
                }
            }
            let timeout = task
                .params
                .get("timeout_s")
                .and_then(Value::as_f64)
                .filter(|t| t.is_finite() && *t > 0.0)
                .map(std::time::Duration::from_secs_f64);
            let outcome = process::run(Invocation {
                argv: &argv,
                cwd: state_dir,
                env: Some(&env),
                timeout,
                capture: Capture::Memory { limit: 64 * 1024 },
            })
            .map_err(io_at(Path::new(&argv[0])))?;
            if !outcome.success() {
                return Err(task_error(format!(
                    "script exited with {:?}{}: {}",
                    outcome.exit_code,
                    if outcome.timed_out { " (timed out)" } else { "" },
                    String::from_utf8_lossy(&outcome.stderr).trim()
                )));
            }
            Ok(String::from_utf8_lossy(&outcome.stdout).trim().to_string())
        }
    }
}

fn detect_err(e: DetectError) -> SolutionError {
    match e {
        DetectError::Registry(r) => SolutionError::Registry(r),
        other => task_error(other.to_string()),
    }
}

/// Package by alias/uid, or by `package_name` (highest version, or the given one).
pub fn find_package(repos: &[Repo], key: &str, version: Option<&str>) -> Result<PackageSpec, SolutionError> {
    if version.is_none() {
        match registry::find_in(repos, Kind::Package, key) {
            Ok((_, meta, _)) => return Ok(PackageSpec::from_entry(&meta)?),
            Err(RegistryError::NotFound { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mut best: Option<PackageSpec> = None;
    for (_, p) in metapkg::list_packages(repos)? {
        if p.package_name != key || version.is_some_and(|v| p.version.raw() != v) {
            continue;
        }
        if best.as_ref().is_none_or(|b| p.version > b.version) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| {
        RegistryError::NotFound {
            kind: Kind::Package,
            key: match version {
                Some(v) => format!("{key}@{v}"),
                None => key.to_string(),
            },
        }
        .into()
    })
}

fn find_binary(name: &str) -> Option<PathBuf> {
    let p = Path::new(name);
    if p.is_absolute() {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::split_paths(&std::env::var_os("PATH")?)
        .map(|d| d.join(name))
        .find(|c| c.is_file())
}

/// Run the manifest's benchmark and write `results.bundle.json` into the
/// solution's state directory. Runs go to `workdir`, or a fresh directory
/// under the state directory.
pub fn run_benchmark(name: &str, ctx: &SolutionContext<'_>, workdir: Option<&Path>) -> Result<(ResultBundle, PathBuf), SolutionError> {
    let (id, meta, repo) = registry::find_in(ctx.repos, Kind::Solution, name)?;
    let manifest = SolutionManifest::from_value(Value::Object(meta.meta.clone()))?;
    let state_dir = repo.entry_dir(&id);
    let state = SolutionState::load(&state_dir)?;
    if !state.is_some_and(|s| s.init_complete) {
        return Err(SolutionError::InitIncomplete(name.to_string()));
    }
    let _lock = EntryLock::acquire(&state_dir.join(LOCK_FILE))?;

    let b = &manifest.benchmark;
    let pipeline = pipeline::load_program(ctx.repos, &b.program)?;
    let bound = metapkg::bind_dependencies(&pipeline.program.deps, ctx.repos, &ctx.installer)?;
    let bundle_id = uid::generate();
    let workdir = match workdir {
        Some(w) => w.to_path_buf(),
        None => state_dir.join("runs").join(&bundle_id),
    };
    let space = b.space.clone().unwrap_or_default();
    let strategy = b.strategy.clone().unwrap_or(Strategy::Grid);
    let records = autotune::explore(
        &pipeline,
        &bound,
        &space,
        &strategy,
        &workdir,
        &ExploreOptions {
            repetitions: b.repetitions as usize,
            repo: Some(ctx.primary()?),
            expected_keys: b.expected_keys.clone(),
        },
    )?;
    let bundle = ResultBundle {
        bundle_id,
        solution_name: manifest.name.clone(),
        records,
        platform: collect_platform_info(),
        created_at: Utc::now(),
        format_version: FORMAT_VERSION,
    };
    let path = state_dir.join(BUNDLE_FILE);
    cjson::write_canonical_atomic(&path, &bundle).map_err(io_at(&path))?;
    Ok((bundle, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> Value {
        json!({
            "name": "demo",
            "target_os": "any",
            "format_version": 1,
            "tasks": [{"action": "create-isolated-env", "skippable": true}],
            "benchmark": {"program": "stub", "repetitions": 2, "objectives": ["time_s:min"]},
            "report": {"title": "Demo"}
        })
    }

    #[test]
    fn manifest_parses_short_objectives() {
        let m = SolutionManifest::from_value(manifest()).unwrap();
        assert_eq!(m.benchmark.objectives[0].key, "time_s");
        let back = SolutionManifest::from_value(serde_json::to_value(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn schema_violations() {
        let cases = [
            ("/tasks", json!([])),
            ("/name", json!("bad name")),
            ("/format_version", json!(2)),
            ("/tasks/0", json!({"action": "install-package"})),
            ("/tasks/0", json!({"action": "custom-script", "target": "not-argv"})),
            ("/tasks/0", json!({"action": "make-coffee"})),
            ("/benchmark/objectives", json!([])),
        ];
        for (ptr, v) in cases {
            let mut m = manifest();
            *m.pointer_mut(ptr).unwrap() = v;
            assert!(
                matches!(SolutionManifest::from_value(m), Err(SolutionError::SchemaViolation(_))),
                "{ptr}"
            );
        }
    }

    #[test]
    fn os_mismatch() {
        let mut m = SolutionManifest::from_value(manifest()).unwrap();
        m.target_os = "plan9".into();
        assert!(matches!(m.check_host(), Err(SolutionError::TargetOsMismatch { .. })));
        m.target_os = std::env::consts::OS.into();
        m.check_host().unwrap();
    }

    #[test]
    fn content_hash_tracks_edits() {
        let t: TaskSpec = serde_json::from_value(json!({"action": "custom-script", "target": ["true"]})).unwrap();
        let mut edited = t.clone();
        edited.target = json!(["false"]);
        assert_eq!(t.content_hash(), t.clone().content_hash());
        assert_ne!(t.content_hash(), edited.content_hash());
    }
}
