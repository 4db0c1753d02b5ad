use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ck_core::autotune::{
    self, load_experiments, pareto_filter, DesignSpace, ExploreOptions, ObjectiveSpec, Point, Strategy,
};
use ck_core::envdetect::{self, render_env_script, Dialect, SoftPlugin};
use ck_core::json as cjson;
use ck_core::metapkg::{self, Installer, PackageSpec};
use ck_core::pipeline::{self, aggregate_stats, extract_characteristics, ProgramSpec};
use ck_core::registry::{self, search_by_tags, ComponentId, EntryMeta, Kind, Repo};
use ck_core::solution::{
    self, merge_bundles, read_bundle, render_report, scoreboard, MergedRecord, ReportFormat, SolutionContext,
    SolutionManifest,
};
use ck_core::uid;
use serde_json::{json, Map, Value};

use crate::{AutotuneArgs, BundleCmd, Cli, CliError, Command, EnvCmd, RepoCmd, ReportArgs, RunArgs, SolutionCmd, CODE_DOMAIN};

type Payload = Result<Map<String, Value>, CliError>;

fn payload(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("payloads are objects"),
    }
}

/// A JSON argument given inline (`{...}` / `[...]`) or as a file path.
pub fn read_json_arg(arg: &str) -> Result<Value, CliError> {
    let t = arg.trim_start();
    let text = if t.starts_with('{') || t.starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| CliError::from(e).with("path", json!(arg)))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid JSON in `{arg}`: {e}")))
}

/// `--repo` flags first, then `CK_REPOS` (a path list).
fn open_repos(flags: &[PathBuf]) -> Result<Vec<Repo>, CliError> {
    let mut roots: Vec<PathBuf> = flags.to_vec();
    if let Some(list) = std::env::var_os("CK_REPOS") {
        roots.extend(std::env::split_paths(&list).filter(|p| !p.as_os_str().is_empty()));
    }
    if roots.is_empty() {
        return Err(CliError::usage("no repository: pass --repo <path> or set CK_REPOS"));
    }
    let mut seen = BTreeSet::new();
    let mut repos = Vec::new();
    for r in roots {
        let key = r.canonicalize().unwrap_or_else(|_| r.clone());
        if seen.insert(key) {
            repos.push(Repo::open(&r)?);
        }
    }
    Ok(repos)
}

fn parse_target(target: &str) -> Result<(Kind, Option<&str>), CliError> {
    let (kind, key) = match target.split_once(':') {
        Some((k, a)) => (k, Some(a).filter(|a| !a.is_empty())),
        None => (target, None),
    };
    let kind = kind.parse::<Kind>().map_err(|e| CliError::usage(e.to_string()))?;
    Ok((kind, key))
}

fn installer() -> Installer<'static> {
    Installer::default()
}

pub fn run(cli: Cli) -> Payload {
    if let Command::Repo(RepoCmd::Init { path, alias }) = &cli.command {
        let repo = Repo::init(path, alias)?;
        return Ok(payload(json!({
            "repo": {"root": repo.root, "alias": repo.alias, "uid": repo.uid}
        })));
    }
    let repos = open_repos(&cli.repos)?;
    match cli.command {
        Command::Repo(_) => unreachable!(),
        Command::Add(a) => add(&repos, &a.target, a.tags, a.meta.as_deref(), a.payload.as_deref()),
        Command::Find { target } => find(&repos, &target),
        Command::Search { tags, kind } => search(&repos, tags, kind.as_deref()),
        Command::Detect { soft, roots } => detect(&repos, &soft, &roots),
        Command::Install { package, version, force } => install(&repos, &package, version.as_deref(), force),
        Command::Env(EnvCmd::List { script }) => env_list(&repos, script.as_deref()),
        Command::Run(a) => run_program(&repos, a),
        Command::Autotune(a) => autotune_cmd(&repos, a),
        Command::Pareto { objectives, experiments } => pareto(&repos, &objectives, experiments.as_deref()),
        Command::Report(a) => report(&repos, a),
        Command::Solution(SolutionCmd::Init { manifest }) => solution_init(&repos, &manifest),
        Command::Solution(SolutionCmd::Benchmark { name, workdir }) => solution_benchmark(&repos, &name, workdir.as_deref()),
        Command::Bundle(BundleCmd::Merge { files, out }) => bundle_merge(&files, out.as_deref()),
    }
}

fn add(repos: &[Repo], target: &str, tags: Vec<String>, meta: Option<&str>, payload_dir: Option<&Path>) -> Payload {
    let (kind, alias) = parse_target(target)?;
    let doc = match meta {
        Some(m) => read_json_arg(m)?,
        None => json!({}),
    };
    let mut entry = EntryMeta::from_document(doc)?;
    entry.tags.extend(tags.into_iter().filter(|t| !t.is_empty()));
    // reject kind-specific documents that could never be used later
    match kind {
        Kind::Soft => {
            SoftPlugin::from_entry(&entry)?;
        }
        Kind::Package => {
            PackageSpec::from_entry(&entry)?.validate()?;
        }
        Kind::Program => {
            ProgramSpec::from_entry(&entry)?;
        }
        _ => {}
    }
    let id = repos[0].add_entry(kind, alias, &entry, payload_dir)?;
    Ok(payload(json!({"id": id, "path": repos[0].entry_dir(&id)})))
}

fn find(repos: &[Repo], target: &str) -> Payload {
    let (kind, key) = parse_target(target)?;
    let key = key.ok_or_else(|| CliError::usage("expected <kind>:<alias-or-uid>"))?;
    let (id, meta, repo) = registry::find_in(repos, kind, key)?;
    Ok(payload(json!({
        "id": id,
        "path": repo.entry_dir(&id),
        "meta": meta.document(),
        "created_at": meta.created_at,
    })))
}

fn search(repos: &[Repo], tags: Vec<String>, kind: Option<&str>) -> Payload {
    let kind = kind.map(|k| k.parse::<Kind>()).transpose().map_err(|e| CliError::usage(e.to_string()))?;
    let tags: BTreeSet<String> = tags.into_iter().filter(|t| !t.is_empty()).collect();
    let results = search_by_tags(repos, kind, &tags)?;
    Ok(payload(json!({"results": results})))
}

fn detect(repos: &[Repo], soft: &str, roots: &[PathBuf]) -> Payload {
    let (soft_id, meta, _) = registry::find_in(repos, Kind::Soft, soft)?;
    let plugin = SoftPlugin::from_entry(&meta)?;
    let found = envdetect::detect_software(&plugin, roots)?;
    let mut detected = Vec::new();
    for mut e in found {
        e.soft_uid = Some(soft_id.clone());
        let id = envdetect::register_env(&repos[0], &e)?;
        e.uid = Some(id.uid.clone());
        detected.push(json!({"id": id, "env": e}));
    }
    if detected.is_empty() {
        return Err(CliError::new(CODE_DOMAIN, format!("`{}` was not found", plugin.soft_name)).with("detected", json!([])));
    }
    Ok(payload(json!({"detected": detected})))
}

fn install(repos: &[Repo], package: &str, version: Option<&str>, force: bool) -> Payload {
    let pkg = solution::find_package(repos, package, version)?;
    let inst = Installer {
        force,
        ..installer()
    };
    let bound = metapkg::bind_dependencies(&pkg.deps, repos, &inst)?;
    let (id, env) = inst.install_into_repo(&repos[0], &pkg, &bound)?;
    Ok(payload(json!({"id": id, "env": env})))
}

fn env_list(repos: &[Repo], script: Option<&str>) -> Payload {
    let dialect = script.map(|s| s.parse::<Dialect>()).transpose()?;
    let envs: Vec<Value> = envdetect::list_envs(repos)?
        .into_iter()
        .map(|(id, e)| {
            let mut v = json!({"id": id, "env": e});
            if let Some(d) = dialect {
                v["script"] = json!(render_env_script(&e, d));
            }
            v
        })
        .collect();
    Ok(payload(json!({"envs": envs})))
}

fn default_workdir(repos: &[Repo], label: &str) -> PathBuf {
    repos[0].root.join("work").join(format!("{label}-{}", uid::generate()))
}

fn read_point(arg: Option<&str>) -> Result<Point, CliError> {
    match arg {
        None => Ok(Point::new()),
        Some(a) => match read_json_arg(a)? {
            Value::Object(m) => Ok(m.into_iter().collect()),
            _ => Err(CliError::usage("a point must be a JSON object of pointer → value")),
        },
    }
}

fn run_program(repos: &[Repo], a: RunArgs) -> Payload {
    let pipe = pipeline::load_program(repos, &a.program)?;
    let point = read_point(a.point.as_deref())?;
    let bound = metapkg::bind_dependencies(&pipe.program.deps, repos, &installer())?;
    let workdir = a.workdir.unwrap_or_else(|| default_workdir(repos, &pipe.program.program_name));
    let base = pipe.assemble(&bound, &workdir)?;
    let mut state = pipe.apply_point(&base, &point)?;
    let reps = a.reps.unwrap_or(pipe.program.run.repeat_default as usize);
    let results = pipe.run(&mut state, reps)?;
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for r in &results {
        match extract_characteristics(r, &pipe.program.extractor) {
            Ok(c) => samples.push(c),
            Err(e) => errors.push(json!({"index": r.index, "error": e.to_string()})),
        }
    }
    let aggregated = if samples.is_empty() { None } else { Some(aggregate_stats(&samples)?) };
    let status = if aggregated.is_some() { "ok" } else { "failed" };
    Ok(payload(json!({
        "program": pipe.program_id,
        "workdir": state.workdir(),
        "point": point,
        "runs": results,
        "repetitions": samples,
        "aggregated": aggregated,
        "errors": errors,
        "warnings": state.warnings(),
        "status": status,
    })))
}

fn autotune_cmd(repos: &[Repo], a: AutotuneArgs) -> Payload {
    let pipe = pipeline::load_program(repos, &a.program)?;
    let space = match &a.space {
        Some(s) => serde_json::from_value::<DesignSpace>(read_json_arg(s)?)
            .map_err(|e| CliError::usage(format!("invalid design space: {e}")))?,
        None => pipe.program.exposed_space(),
    };
    let strategy = match a.strategy.as_str() {
        "grid" => Strategy::Grid,
        "random" => Strategy::Random {
            seed: a.seed,
            n: a.iterations,
        },
        other => return Err(CliError::usage(format!("unknown strategy `{other}` (expected grid or random)"))),
    };
    let bound = metapkg::bind_dependencies(&pipe.program.deps, repos, &installer())?;
    let workdir = a.workdir.unwrap_or_else(|| default_workdir(repos, &pipe.program.program_name));
    let records = autotune::explore(
        &pipe,
        &bound,
        &space,
        &strategy,
        &workdir,
        &ExploreOptions {
            repetitions: a.reps,
            repo: Some(&repos[0]),
            expected_keys: Vec::new(),
        },
    )?;
    Ok(payload(json!({"workdir": workdir, "records": records})))
}

/// Experiments across the repos, optionally restricted to one program.
fn experiments(repos: &[Repo], program: Option<&str>) -> Result<Vec<(ComponentId, autotune::ExperimentRecord)>, CliError> {
    let program_uid = match program {
        Some(p) => Some(registry::find_in(repos, Kind::Program, p)?.0.uid),
        None => None,
    };
    Ok(load_experiments(repos)?
        .into_iter()
        .filter(|(_, r)| program_uid.as_ref().is_none_or(|u| &r.program.uid == u))
        .collect())
}

fn pareto(repos: &[Repo], objectives: &str, program: Option<&str>) -> Payload {
    let objectives = ObjectiveSpec::parse_list(objectives)?;
    let records: Vec<_> = experiments(repos, program)?.into_iter().map(|(_, r)| r).collect();
    let frontier = pareto_filter(&records, &objectives)?;
    let uids: Vec<&str> = frontier.iter().map(|r| r.experiment_uid.as_str()).collect();
    Ok(payload(json!({
        "objectives": objectives,
        "considered": records.len(),
        "frontier": uids,
        "records": frontier,
    })))
}

fn report(repos: &[Repo], a: ReportArgs) -> Payload {
    let format: ReportFormat = a.format.parse().map_err(CliError::usage)?;
    let objectives = ObjectiveSpec::parse_list(&a.objectives)?;
    let reference = a.reference.as_deref().map(read_bundle).transpose()?;
    let records: Vec<MergedRecord> = if a.bundles.is_empty() {
        experiments(repos, None)?
            .into_iter()
            .map(|(id, r)| MergedRecord {
                source: id.repo_alias,
                record: r,
            })
            .collect()
    } else {
        let bundles = a.bundles.iter().map(|p| read_bundle(p)).collect::<Result<Vec<_>, _>>()?;
        merge_bundles(&bundles)?
    };
    let text = render_report(&records, &objectives, format, reference.as_ref(), &a.title)?;
    let rows = scoreboard(&records, &objectives, reference.as_ref())?;
    Ok(payload(json!({
        "format": a.format,
        "report": text,
        "rows": rows,
    })))
}

fn solution_init(repos: &[Repo], manifest: &Path) -> Payload {
    let m = SolutionManifest::load(manifest)?;
    let ctx = SolutionContext {
        repos,
        installer: installer(),
    };
    match solution::init_solution(&m, &ctx) {
        Ok(state) => Ok(payload(json!({"solution": m.name, "state": state}))),
        Err(e) => {
            let journal = repos[0]
                .find_entry(Kind::Solution, &m.name)
                .ok()
                .and_then(|(id, _)| solution::SolutionState::load(&repos[0].entry_dir(&id)).ok().flatten());
            Err(CliError::from(e).with("solution", json!(m.name)).with("state", json!(journal)))
        }
    }
}

fn solution_benchmark(repos: &[Repo], name: &str, workdir: Option<&Path>) -> Payload {
    let ctx = SolutionContext {
        repos,
        installer: installer(),
    };
    let (bundle, path) = solution::run_benchmark(name, &ctx, workdir)?;
    let (_, meta, _) = registry::find_in(repos, Kind::Solution, name)?;
    let manifest = SolutionManifest::from_value(Value::Object(meta.meta))?;
    let mut summary = Vec::new();
    for r in &bundle.records {
        let mut values = BTreeMap::new();
        for o in &manifest.benchmark.objectives {
            if let Ok(v) = autotune::objective_value(r, o) {
                values.insert(o.key.clone(), v);
            }
        }
        summary.push(json!({
            "experiment_uid": r.experiment_uid,
            "point": r.point,
            "status": r.status,
            "objectives": values,
        }));
        if !values.is_empty() {
            log::info!("{} {:?}: {:?}", r.experiment_uid, r.point, values);
        }
    }
    Ok(payload(json!({
        "bundle_path": path,
        "bundle_id": bundle.bundle_id,
        "records": bundle.records.len(),
        "summary": summary,
    })))
}

fn bundle_merge(files: &[PathBuf], out: Option<&Path>) -> Payload {
    let bundles = files.iter().map(|p| read_bundle(p)).collect::<Result<Vec<_>, _>>()?;
    let merged = merge_bundles(&bundles)?;
    if let Some(out) = out {
        cjson::write_canonical_atomic(out, &merged).map_err(|e| CliError::from(e).with("path", json!(out)))?;
    }
    let uids: Vec<&str> = merged.iter().map(|m| m.record.experiment_uid.as_str()).collect();
    Ok(payload(json!({
        "count": merged.len(),
        "experiment_uids": uids,
        "records": merged,
    })))
}
