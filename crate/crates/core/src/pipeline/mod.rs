//! Program workflow engine.
//!
//! A pipeline owns one working directory and threads a single JSON document,
//! the [`PipelineState`], through its stages. Every stage writes a snapshot
//! `state.<k>.json`, and each snapshot holds everything needed to re-render
//! the argv and environment of the processes that stage spawned.
//!
//! Exposed parameters are JSON pointers into the state and must live under
//! `/run/params/`, `/build/params/` or `/env/`. Argv templates may use:
//!
//! | placeholder          | value                                         |
//! |----------------------|-----------------------------------------------|
//! | `{params.<name>}`    | `/run/params/<name>` (run) or `/build/params/<name>` (build) |
//! | `{env.<VAR>}`        | merged environment variable                   |
//! | `{deps.<dep>.<field>}` | field of a bound dependency summary         |
//! | `{program_dir}`      | the program entry's payload directory         |
//! | `{build_dir}`        | build output directory                        |
//! | `{run_dir}`, `{rep}` | repetition directory and index (run only)     |
//! | `{workdir}`          | pipeline working directory                    |

mod extract;
mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::autotune::{DesignSpace, ParameterDecl, Point};
use crate::envdetect::EnvEntry;
use crate::json as cjson;
use crate::metapkg::DependencySpec;
use crate::process::{self, Capture, Invocation};
use crate::registry::{self, ComponentId, EntryMeta, Kind, RegistryError, Repo};
use crate::template;

pub use extract::{extract_characteristics, is_characteristic_name, ExtractMode, ExtractorSpec, DEFAULT_RESULT_FILE, WALL_TIME_KEY};
pub use stats::{aggregate_stats, AggregatedStats, Stat};

/// Measured characteristic name → finite value.
pub type Characteristics = BTreeMap<String, f64>;

/// Host variables copied into the initial state so child processes can find
/// their tools. Everything a child sees is recorded in the state.
pub const INHERITED_ENV: &[&str] = &["PATH", "HOME", "TMPDIR", "LANG", "SYSTEMROOT"];

const PARAM_PREFIXES: &[&str] = &["/run/params/", "/build/params/", "/env/"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("dependency `{0}` is not bound")]
    UnboundDependency(String),
    #[error("parameter `{0}` is not exposed by the program")]
    UnknownParameter(String),
    #[error("value {value} is outside the domain of `{pointer}`")]
    ValueOutOfDomain { pointer: String, value: Value },
    #[error("build failed with exit code {exit_code:?}, log at {}", log.display())]
    BuildFailed { exit_code: Option<i32>, log: PathBuf },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("no value for placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),
    #[error("required environment variable `{0}` is not set")]
    MissingEnv(String),
    #[error("result file `{}` is missing", .0.display())]
    MissingResultFile(PathBuf),
    #[error("invalid result file: {0}")]
    InvalidResultFile(String),
    #[error("pattern for `{0}` did not match stdout")]
    PatternNotMatched(String),
    #[error("characteristic `{0}` is not finite")]
    NonFiniteValue(String),
    #[error("repetition {index} failed (exit code {exit_code:?}, timed out: {timed_out})")]
    RunFailed {
        index: usize,
        exit_code: Option<i32>,
        timed_out: bool,
    },
    #[error("no samples to aggregate")]
    EmptySamples,
    #[error("samples disagree on characteristic keys: {0:?}")]
    InconsistentKeys(Vec<String>),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("malformed pipeline state: {0}")]
    BadState(String),
    #[error("I/O failure at `{}`: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSpec {
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    /// Environment variables that must be present for the build.
    #[serde(default)]
    pub env_keys: Vec<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    #[serde(default = "one")]
    pub repeat_default: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
}

/// A benchmarkable program (registry kind `program`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    pub program_name: String,
    #[serde(default)]
    pub deps: Vec<DependencySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build: Option<BuildSpec>,
    pub run: RunSpec,
    #[serde(default)]
    pub extractor: ExtractorSpec,
    /// pointer → declaration; each declaration's `pointer` equals its key.
    #[serde(default)]
    pub exposed: BTreeMap<String, ParameterDecl>,
}

impl ProgramSpec {
    /// Parse from JSON, filling each exposed declaration's pointer from its key.
    pub fn from_value(v: Value) -> Result<ProgramSpec, PipelineError> {
        let mut p: ProgramSpec = serde_json::from_value(v).map_err(|e| PipelineError::InvalidProgram(e.to_string()))?;
        for (ptr, decl) in p.exposed.iter_mut() {
            if decl.pointer.is_empty() {
                decl.pointer = ptr.clone();
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn from_entry(meta: &EntryMeta) -> Result<ProgramSpec, PipelineError> {
        ProgramSpec::from_value(meta.document())
    }

    pub fn to_entry_meta(&self, tags: &[&str]) -> Result<EntryMeta, RegistryError> {
        let mut doc = serde_json::to_value(self).expect("program serializes");
        doc["tags"] = json!(tags);
        EntryMeta::from_document(doc)
    }

    /// The exposed parameters as a design space, ordered by pointer.
    pub fn exposed_space(&self) -> DesignSpace {
        DesignSpace(self.exposed.values().cloned().collect())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::InvalidProgram(m));
        if self.program_name.is_empty() {
            return invalid("empty program_name".into());
        }
        if self.run.argv.is_empty() {
            return invalid("run.argv is empty".into());
        }
        if self.run.repeat_default < 1 {
            return invalid("run.repeat_default must be >= 1".into());
        }
        if let Some(t) = self.run.timeout_s {
            if !(t.is_finite() && t > 0.0) {
                return invalid("run.timeout_s must be positive".into());
            }
        }
        for (ptr, decl) in &self.exposed {
            if decl.pointer != *ptr {
                return invalid(format!("exposed key `{ptr}` disagrees with pointer `{}`", decl.pointer));
            }
            if !PARAM_PREFIXES.iter().any(|p| ptr.starts_with(p)) || ptr.matches('/').count() != 3 {
                return invalid(format!("exposed pointer `{ptr}` must be /run/params/<name>, /build/params/<name> or /env/<VAR>"));
            }
            decl.validate().map_err(|e| PipelineError::InvalidProgram(e.to_string()))?;
        }
        self.extractor.validate()?;
        for d in &self.deps {
            d.validate().map_err(|e| PipelineError::InvalidProgram(e.to_string()))?;
        }
        let check = |templates: Vec<&String>, stage: &str, builtins: &[&str]| -> Result<(), PipelineError> {
            for t in templates {
                for ph in template::placeholders(t) {
                    let ok = builtins.contains(&ph.as_str())
                        || ph.starts_with("env.")
                        || ph.starts_with("deps.")
                        || ph
                            .strip_prefix("params.")
                            .is_some_and(|name| self.exposed.contains_key(&format!("/{stage}/params/{name}")));
                    if !ok {
                        return Err(PipelineError::InvalidProgram(format!(
                            "{stage} template `{t}` uses undeclared placeholder `{{{ph}}}`"
                        )));
                    }
                }
            }
            Ok(())
        };
        let mut run_t: Vec<&String> = self.run.argv.iter().collect();
        run_t.extend(self.run.workdir.iter());
        check(run_t, "run", &["program_dir", "build_dir", "workdir", "run_dir", "rep"])?;
        if let Some(b) = &self.build {
            if b.argv.is_empty() {
                return invalid("build.argv is empty".into());
            }
            let mut t: Vec<&String> = b.argv.iter().collect();
            t.extend(b.workdir.iter());
            check(t, "build", &["program_dir", "build_dir", "workdir"])?;
        }
        Ok(())
    }
}

/// The JSON document flowing through every stage. Fixed top-level keys:
/// `deps`, `env`, `build`, `run`, `meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PipelineState(pub Value);

impl PipelineState {
    pub fn get(&self, pointer: &str) -> Option<&Value> {
        self.0.pointer(pointer)
    }

    pub fn canonical(&self) -> String {
        cjson::to_canonical_string(&self.0).expect("state serializes")
    }

    pub fn env(&self) -> BTreeMap<String, String> {
        self.0["env"]
            .as_object()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), value_to_arg(v))).collect())
            .unwrap_or_default()
    }

    pub fn workdir(&self) -> PathBuf {
        PathBuf::from(self.0["meta"]["workdir"].as_str().unwrap_or("."))
    }

    pub fn stage(&self) -> u64 {
        self.0["meta"]["stage"].as_u64().unwrap_or(0)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.0["meta"]["warnings"]
            .as_array()
            .map(|a| a.iter().filter_map(|w| w.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }

    pub fn point(&self) -> Point {
        self.0["meta"]["point"]
            .as_object()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default()
    }

    /// Move the state to a new working directory and restart stage numbering there.
    pub fn relocate(&mut self, workdir: &Path) {
        self.0["meta"]["workdir"] = json!(workdir.to_string_lossy());
        self.0["meta"]["stage"] = json!(0);
    }

    /// Write `state.<stage>.json` into the working directory and advance the stage counter.
    pub fn snapshot(&mut self) -> Result<PathBuf, PipelineError> {
        let dir = self.workdir();
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let path = dir.join(format!("state.{}.json", self.stage()));
        cjson::write_canonical_atomic(&path, &self.0).map_err(io_at(&path))?;
        self.0["meta"]["stage"] = json!(self.stage() + 1);
        Ok(path)
    }

    pub fn load_snapshot(path: &Path) -> Result<PipelineState, PipelineError> {
        Ok(PipelineState(cjson::read_json(path).map_err(io_at(path))?))
    }
}

/// How a value appears on a command line or in an environment variable.
pub fn value_to_arg(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub index: usize,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time_s: f64,
    pub run_dir: PathBuf,
    pub stdout_path: PathBuf,
    pub stderr_path: PathBuf,
}

impl RunResult {
    pub fn succeeded(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Build,
    Run { rep: usize },
}

/// Render an argv template against a state. Used both for spawning and for
/// replaying argv from a snapshot.
pub fn render_argv(state: &PipelineState, templates: &[String], stage_is_build: bool, rep: Option<usize>) -> Result<Vec<String>, PipelineError> {
    let stage = if stage_is_build { Stage::Build } else { Stage::Run { rep: rep.unwrap_or(0) } };
    templates.iter().map(|t| render_one(state, t, stage)).collect()
}

fn render_one(state: &PipelineState, t: &str, stage: Stage) -> Result<String, PipelineError> {
    let s = &state.0;
    let workdir = state.workdir();
    template::render(t, |ph| {
        let str_at = |p: &str| s.pointer(p).and_then(Value::as_str).map(str::to_string);
        match ph {
            "program_dir" => str_at("/meta/program_dir"),
            "build_dir" => str_at("/build/dir"),
            "workdir" => Some(workdir.to_string_lossy().into_owned()),
            "run_dir" => match stage {
                Stage::Run { rep } => Some(workdir.join(format!("rep.{rep}")).to_string_lossy().into_owned()),
                Stage::Build => None,
            },
            "rep" => match stage {
                Stage::Run { rep } => Some(rep.to_string()),
                Stage::Build => None,
            },
            _ => {
                if let Some(name) = ph.strip_prefix("params.") {
                    let section = if stage == Stage::Build { "build" } else { "run" };
                    s[section]["params"].get(name).map(value_to_arg)
                } else if let Some(var) = ph.strip_prefix("env.") {
                    s["env"].get(var).map(value_to_arg)
                } else if let Some(rest) = ph.strip_prefix("deps.") {
                    let (dep, field) = rest.split_once('.')?;
                    s["deps"].get(dep)?.get(field).map(value_to_arg)
                } else {
                    None
                }
            }
        }
    })
    .map_err(PipelineError::UnboundPlaceholder)
}

/// A program bound to a working directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub program_id: ComponentId,
    pub program: ProgramSpec,
    pub program_dir: Option<PathBuf>,
}

impl Pipeline {
    pub fn new(program_id: ComponentId, program: ProgramSpec, program_dir: Option<PathBuf>) -> Result<Pipeline, PipelineError> {
        program.validate()?;
        Ok(Pipeline {
            program_id,
            program,
            program_dir,
        })
    }

    /// Build the initial state and write `state.0.json`.
    ///
    /// Environments of later dependencies override earlier ones; each
    /// override is recorded in `meta.warnings`.
    pub fn assemble(&self, bindings: &BTreeMap<String, EnvEntry>, workdir: &Path) -> Result<PipelineState, PipelineError> {
        fs::create_dir_all(workdir).map_err(io_at(workdir))?;
        let workdir = workdir.canonicalize().map_err(io_at(workdir))?;

        let mut env = Map::new();
        for key in INHERITED_ENV {
            if let Ok(v) = std::env::var(key) {
                env.insert(key.to_string(), json!(v));
            }
        }
        let mut deps = Map::new();
        let mut warnings = Vec::new();
        let mut env_origin: BTreeMap<String, String> = BTreeMap::new();
        for dep in &self.program.deps {
            let Some(bound) = bindings.get(&dep.name) else {
                if dep.optional {
                    continue;
                }
                return Err(PipelineError::UnboundDependency(dep.name.clone()));
            };
            deps.insert(
                dep.name.clone(),
                json!({
                    "soft_name": bound.soft_name,
                    "version": bound.version.raw(),
                    "tool_path": bound.tool_path.to_string_lossy(),
                    "uid": bound.uid,
                }),
            );
            for (k, v) in &bound.env_vars {
                if let Some(prev) = env_origin.get(k) {
                    if env.get(k).and_then(Value::as_str) != Some(v.as_str()) {
                        let w = format!("env var {k} from dep `{}` overrides value from dep `{prev}`", dep.name);
                        log::warn!("{w}");
                        warnings.push(json!(w));
                    }
                }
                env.insert(k.clone(), json!(v));
                env_origin.insert(k.clone(), dep.name.clone());
            }
        }

        let build = match &self.program.build {
            Some(b) => json!({
                "argv_template": b.argv,
                "workdir_template": b.workdir,
                "env_keys": b.env_keys,
                "params": {},
                "status": "pending",
                "dir": null,
                "argv": null,
                "exit_code": null,
            }),
            None => json!({"status": "none", "params": {}, "dir": null, "argv": null}),
        };
        let run = json!({
            "argv_template": self.program.run.argv,
            "workdir_template": self.program.run.workdir,
            "timeout_s": self.program.run.timeout_s,
            "params": {},
            "reps": [],
        });
        let meta = json!({
            "program": self.program_id,
            "program_name": self.program.program_name,
            "program_dir": self.program_dir.as_ref().map(|p| p.to_string_lossy()),
            "workdir": workdir.to_string_lossy(),
            "created_at": Utc::now(),
            "warnings": warnings,
            "point": {},
            "stage": 0,
        });
        let mut doc = json!({"deps": deps, "env": env, "build": build, "run": run, "meta": meta});
        for (ptr, decl) in &self.program.exposed {
            cjson::pointer_set(&mut doc, ptr, decl.default.clone()).map_err(PipelineError::BadState)?;
        }
        let mut state = PipelineState(doc);
        state.snapshot()?;
        Ok(state)
    }

    /// Substitute parameter values, returning a new state. Changing a build
    /// parameter or an environment variable marks the build as pending.
    pub fn apply_point(&self, state: &PipelineState, point: &Point) -> Result<PipelineState, PipelineError> {
        let mut next = state.clone();
        let mut rebuild = false;
        for (ptr, value) in point {
            let decl = self
                .program
                .exposed
                .get(ptr)
                .ok_or_else(|| PipelineError::UnknownParameter(ptr.clone()))?;
            if !decl.domain.contains(value) {
                return Err(PipelineError::ValueOutOfDomain {
                    pointer: ptr.clone(),
                    value: value.clone(),
                });
            }
            if next.get(ptr) != Some(value) {
                rebuild |= ptr.starts_with("/build/") || ptr.starts_with("/env/");
                cjson::pointer_set(&mut next.0, ptr, value.clone()).map_err(PipelineError::BadState)?;
            }
            let recorded = &mut next.0["meta"]["point"];
            if recorded.get(ptr) != Some(value) {
                cjson::pointer_set(recorded, &format!("/{}", ptr.replace('~', "~0").replace('/', "~1")), value.clone())
                    .map_err(PipelineError::BadState)?;
            }
        }
        if rebuild && self.program.build.is_some() && next.0["build"]["status"] != "pending" {
            next.0["build"]["status"] = json!("pending");
            next.0["build"]["dir"] = Value::Null;
        }
        Ok(next)
    }

    /// Run the build stage if the program has one and it is not already done.
    pub fn build(&self, state: &mut PipelineState) -> Result<(), PipelineError> {
        let Some(build) = &self.program.build else {
            return Ok(());
        };
        if state.0["build"]["status"] == "ok" {
            return Ok(());
        }
        for key in &build.env_keys {
            if state.0["env"].get(key).is_none() {
                return Err(PipelineError::MissingEnv(key.clone()));
            }
        }
        let build_dir = state.workdir().join("build");
        fs::create_dir_all(&build_dir).map_err(io_at(&build_dir))?;
        state.0["build"]["dir"] = json!(build_dir.to_string_lossy());
        let argv = render_argv(state, &build.argv, true, None)?;
        let cwd = match &build.workdir {
            Some(t) => PathBuf::from(render_one(state, t, Stage::Build)?),
            None => build_dir.clone(),
        };
        let env = state.env();
        let (out, err) = (build_dir.join("build.stdout.log"), build_dir.join("build.stderr.log"));
        let outcome = process::run(Invocation {
            argv: &argv,
            cwd: &cwd,
            env: Some(&env),
            timeout: None,
            capture: Capture::Files {
                stdout: out.clone(),
                stderr: err.clone(),
            },
        });
        let b = &mut state.0["build"];
        b["argv"] = json!(argv);
        b["cwd"] = json!(cwd.to_string_lossy());
        b["log"] = json!(err.to_string_lossy());
        let ok = match &outcome {
            Ok(o) => {
                b["exit_code"] = json!(o.exit_code);
                b["wall_time_s"] = json!(o.wall_time_s);
                o.success()
            }
            Err(e) => {
                b["error"] = json!(e.to_string());
                false
            }
        };
        b["status"] = json!(if ok { "ok" } else { "failed" });
        state.snapshot()?;
        if ok {
            Ok(())
        } else {
            Err(PipelineError::BuildFailed {
                exit_code: outcome.ok().and_then(|o| o.exit_code),
                log: err,
            })
        }
    }

    /// Execute `repetitions` sequential runs in `rep.<i>/` directories.
    /// Failed and timed-out repetitions are recorded, never fatal.
    pub fn run(&self, state: &mut PipelineState, repetitions: usize) -> Result<Vec<RunResult>, PipelineError> {
        let repetitions = repetitions.max(1);
        self.build(state)?;
        let workdir = state.workdir();
        let env = state.env();
        let timeout = self.program.run.timeout_s.map(Duration::from_secs_f64);
        let mut results = Vec::with_capacity(repetitions);
        let mut reps = Vec::with_capacity(repetitions);
        for i in 0..repetitions {
            let rep_dir = workdir.join(format!("rep.{i}"));
            if rep_dir.exists() {
                fs::remove_dir_all(&rep_dir).map_err(io_at(&rep_dir))?;
            }
            fs::create_dir_all(&rep_dir).map_err(io_at(&rep_dir))?;
            let argv = render_argv(state, &self.program.run.argv, false, Some(i))?;
            let cwd = match &self.program.run.workdir {
                Some(t) => PathBuf::from(render_one(state, t, Stage::Run { rep: i })?),
                None => rep_dir.clone(),
            };
            let (out, err) = (rep_dir.join("stdout.log"), rep_dir.join("stderr.log"));
            let outcome = process::run(Invocation {
                argv: &argv,
                cwd: &cwd,
                env: Some(&env),
                timeout,
                capture: Capture::Files {
                    stdout: out.clone(),
                    stderr: err.clone(),
                },
            });
            let (exit_code, timed_out, wall, spawn_error) = match outcome {
                Ok(o) => (o.exit_code, o.timed_out, o.wall_time_s, None),
                Err(e) => (None, false, 0.0, Some(e.to_string())),
            };
            if timed_out {
                log::warn!("repetition {i} of {} timed out", self.program.program_name);
            }
            reps.push(json!({
                "index": i,
                "argv": argv,
                "cwd": cwd.to_string_lossy(),
                "exit_code": exit_code,
                "timed_out": timed_out,
                "wall_time_s": wall,
                "stdout": out.to_string_lossy(),
                "stderr": err.to_string_lossy(),
                "error": spawn_error,
            }));
            results.push(RunResult {
                index: i,
                exit_code,
                timed_out,
                wall_time_s: wall,
                run_dir: rep_dir,
                stdout_path: out,
                stderr_path: err,
            });
        }
        state.0["run"]["reps"] = Value::Array(reps);
        state.snapshot()?;
        Ok(results)
    }
}

/// Look up a program entry across `repos`; its entry directory is the program dir.
pub fn load_program(repos: &[Repo], key: &str) -> Result<Pipeline, PipelineError> {
    let (id, meta, repo) = registry::find_in(repos, Kind::Program, key)?;
    let program = ProgramSpec::from_entry(&meta)?;
    let dir = repo.entry_dir(&id);
    Pipeline::new(id, program, Some(dir))
}

/// Re-render the argv of every recorded repetition from a run snapshot.
pub fn replay_run_argv(snapshot: &PipelineState) -> Result<Vec<Vec<String>>, PipelineError> {
    let templates: Vec<String> = serde_json::from_value(snapshot.0["run"]["argv_template"].clone())
        .map_err(|e| PipelineError::BadState(e.to_string()))?;
    let n = snapshot.0["run"]["reps"].as_array().map(Vec::len).unwrap_or(0);
    (0..n).map(|i| render_argv(snapshot, &templates, false, Some(i))).collect()
}
