//! Meta-packages and dependency resolution.
//!
//! A dependency is satisfied by an existing environment when one matches its
//! tags and version bounds; otherwise, if installing is allowed, by the best
//! matching meta-package, whose own dependencies are planned first. Selection
//! is always "highest version wins"; there is no backtracking.

mod install;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::envdetect::{env_name_re, EnvEntry, Version};
use crate::registry::{self, ComponentId, EntryMeta, Kind, RegistryError, Repo};
use crate::template;

pub use install::{install_dir_for, Fetcher, InstallError, Installer, LocalFetcher, INSTALLED_DIR};

#[derive(Debug, thiserror::Error)]
pub enum ResolveError {
    #[error("unresolved dependency `{0}`")]
    UnresolvedDependency(String),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    DependencyCycle(Vec<String>),
    #[error("dependency `{0}` resolves to different targets in one workflow")]
    DependencyConflict(String),
    #[error("invalid dependency or package: {0}")]
    Invalid(String),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencySpec {
    pub name: String,
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_min: Option<Version>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version_max: Option<Version>,
    #[serde(default)]
    pub optional: bool,
    #[serde(default = "yes")]
    pub allow_install: bool,
}

impl DependencySpec {
    pub fn new(name: &str, tags: &[&str]) -> Self {
        DependencySpec {
            name: name.to_string(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            version_min: None,
            version_max: None,
            optional: false,
            allow_install: true,
        }
    }

    pub fn validate(&self) -> Result<(), ResolveError> {
        if self.name.is_empty() {
            return Err(ResolveError::Invalid("dependency name is empty".into()));
        }
        if self.tags.is_empty() {
            return Err(ResolveError::Invalid(format!("dependency `{}` has no tags", self.name)));
        }
        if let (Some(lo), Some(hi)) = (&self.version_min, &self.version_max) {
            if lo > hi {
                return Err(ResolveError::Invalid(format!(
                    "dependency `{}`: version_min {lo} > version_max {hi}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Inclusive bounds; an absent bound is unbounded.
    pub fn accepts_version(&self, v: &Version) -> bool {
        self.version_min.as_ref().is_none_or(|lo| v >= lo) && self.version_max.as_ref().is_none_or(|hi| v <= hi)
    }

    pub fn matches(&self, tags: &BTreeSet<String>, version: &Version) -> bool {
        self.tags.is_subset(tags) && self.accepts_version(version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchiveFormat {
    TarGz,
    Zip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstallStep {
    /// Fetch `url`, verify `sha256`, store as `file` (default: last URL segment).
    Download {
        url: String,
        sha256: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
    },
    /// Unpack an archive that an earlier step placed in the install dir.
    Extract {
        archive: String,
        archive_format: ArchiveFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dest: Option<String>,
    },
    /// Exec-style argv; `{install_dir}` is substituted, nothing else is interpreted.
    Script {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workdir: Option<String>,
    },
}

/// A meta-package (registry kind `package`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageSpec {
    pub package_name: String,
    pub tags: BTreeSet<String>,
    pub version: Version,
    #[serde(default)]
    pub deps: Vec<DependencySpec>,
    pub install_steps: Vec<InstallStep>,
    #[serde(default)]
    pub provides_env: BTreeMap<String, String>,
}

impl PackageSpec {
    /// `name@version`, the identity used in plans and cycle reports.
    pub fn key(&self) -> String {
        format!("{}@{}", self.package_name, self.version)
    }

    pub fn validate(&self) -> Result<(), ResolveError> {
        let invalid = |m: String| Err(ResolveError::Invalid(format!("package `{}`: {m}", self.package_name)));
        if self.package_name.is_empty() {
            return invalid("empty package_name".into());
        }
        if self.install_steps.is_empty() {
            return invalid("install_steps is empty".into());
        }
        for t in &self.tags {
            if registry::validate_tag(t).is_err() {
                return invalid(format!("invalid tag `{t}`"));
            }
        }
        for (i, step) in self.install_steps.iter().enumerate() {
            match step {
                InstallStep::Download { sha256, .. } => {
                    let ok = sha256.len() == 64 && sha256.bytes().all(|b| b.is_ascii_hexdigit());
                    if !ok {
                        return invalid(format!("step {i}: sha256 must be 64 hex chars"));
                    }
                }
                InstallStep::Script { command, .. } if command.is_empty() => {
                    return invalid(format!("step {i}: empty script command"));
                }
                _ => {}
            }
        }
        for (name, tpl) in &self.provides_env {
            if !env_name_re().is_match(name) {
                return invalid(format!("env var name `{name}`"));
            }
            if template::placeholders(tpl).iter().any(|p| p != "install_dir") {
                return invalid(format!("provides_env `{name}` may only use {{install_dir}}"));
            }
        }
        for d in &self.deps {
            d.validate()?;
        }
        Ok(())
    }

    pub fn to_entry_meta(&self) -> EntryMeta {
        EntryMeta::from_document(serde_json::to_value(self).expect("package serializes"))
            .expect("package document is an object with string tags")
    }

    pub fn from_entry(meta: &EntryMeta) -> Result<PackageSpec, RegistryError> {
        serde_json::from_value(meta.document()).map_err(|e| RegistryError::InvalidMeta(e.to_string()))
    }
}

/// Every readable package across the repositories.
pub fn list_packages(repos: &[Repo]) -> Result<Vec<(ComponentId, PackageSpec)>, RegistryError> {
    let mut out = Vec::new();
    for repo in repos {
        for (id, meta) in repo.list_entries(Kind::Package)? {
            match PackageSpec::from_entry(&meta) {
                Ok(p) => out.push((id, p)),
                Err(e) => log::warn!("skipping malformed package {id}: {e}"),
            }
        }
    }
    Ok(out)
}

fn env_rank(e: &EnvEntry) -> (&Version, chrono::DateTime<chrono::Utc>, std::cmp::Reverse<&str>) {
    (&e.version, e.detected_at, std::cmp::Reverse(e.uid.as_deref().unwrap_or("")))
}

/// Best environment for a dependency: highest version, then most recently
/// detected, then lowest uid. On a complete tie the earlier entry wins.
pub fn resolve_dependency<'a>(dep: &DependencySpec, envs: &'a [EnvEntry]) -> Option<&'a EnvEntry> {
    let mut best: Option<&EnvEntry> = None;
    for e in envs.iter().filter(|e| dep.matches(&e.tags, &e.version)) {
        if best.is_none_or(|b| env_rank(e) > env_rank(b)) {
            best = Some(e);
        }
    }
    best
}

/// Best package for a dependency: highest version, then lowest name, then earliest.
pub fn select_package<'a>(dep: &DependencySpec, packages: &'a [PackageSpec]) -> Option<&'a PackageSpec> {
    let mut best: Option<&PackageSpec> = None;
    for p in packages.iter().filter(|p| dep.matches(&p.tags, &p.version)) {
        let better = best.is_none_or(|b| {
            p.version > b.version || (p.version == b.version && p.package_name < b.package_name)
        });
        if better {
            best = Some(p);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum PlanAction {
    UseEnv { dep: String, env: EnvEntry },
    /// `deps` lists every dependency name this install satisfies.
    Install { deps: Vec<String>, package: PackageSpec },
    /// An optional dependency nothing could satisfy.
    Skip { dep: String },
}

/// Ordered actions; every package's dependencies precede its install.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPlan {
    pub actions: Vec<PlanAction>,
}

impl ResolutionPlan {
    pub fn installs(&self) -> impl Iterator<Item = &PackageSpec> {
        self.actions.iter().filter_map(|a| match a {
            PlanAction::Install { package, .. } => Some(package),
            _ => None,
        })
    }

    /// Dependency names bound (or skipped) by the plan.
    pub fn bound_names(&self) -> BTreeSet<String> {
        self.actions
            .iter()
            .flat_map(|a| match a {
                PlanAction::UseEnv { dep, .. } | PlanAction::Skip { dep } => vec![dep.clone()],
                PlanAction::Install { deps, .. } => deps.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Env(String),
    Package(String),
    Skipped,
}

struct Planner<'a> {
    envs: &'a [EnvEntry],
    packages: &'a [PackageSpec],
    actions: Vec<PlanAction>,
    bound: BTreeMap<String, Target>,
    stack: Vec<String>,
}

fn env_key(e: &EnvEntry) -> String {
    format!("{}@{}", e.tool_path.display(), e.version)
}

impl Planner<'_> {
    fn plan(&mut self, dep: &DependencySpec) -> Result<(), ResolveError> {
        dep.validate()?;
        let target = self.target_for(dep)?;
        if let Some(prev) = self.bound.get(&dep.name) {
            return if *prev == target {
                Ok(())
            } else {
                Err(ResolveError::DependencyConflict(dep.name.clone()))
            };
        }
        match &target {
            Target::Env(_) => {
                let env = resolve_dependency(dep, self.envs).expect("target came from the resolver").clone();
                self.actions.push(PlanAction::UseEnv {
                    dep: dep.name.clone(),
                    env,
                });
            }
            Target::Package(key) => {
                let planned = self.actions.iter_mut().find_map(|a| match a {
                    PlanAction::Install { deps, package } if package.key() == *key => Some(deps),
                    _ => None,
                });
                match planned {
                    Some(deps) => deps.push(dep.name.clone()),
                    None => {
                        let pkg = select_package(dep, self.packages).expect("target came from selection");
                        pkg.validate()?;
                        self.stack.push(key.clone());
                        for d in &pkg.deps {
                            self.plan(d)?;
                        }
                        self.stack.pop();
                        self.actions.push(PlanAction::Install {
                            deps: vec![dep.name.clone()],
                            package: pkg.clone(),
                        });
                    }
                }
            }
            Target::Skipped => self.actions.push(PlanAction::Skip { dep: dep.name.clone() }),
        }
        self.bound.insert(dep.name.clone(), target);
        Ok(())
    }

    fn target_for(&self, dep: &DependencySpec) -> Result<Target, ResolveError> {
        if let Some(env) = resolve_dependency(dep, self.envs) {
            return Ok(Target::Env(env_key(env)));
        }
        if dep.allow_install {
            if let Some(pkg) = select_package(dep, self.packages) {
                let key = pkg.key();
                if let Some(pos) = self.stack.iter().position(|k| *k == key) {
                    let mut cycle = self.stack[pos..].to_vec();
                    cycle.push(key);
                    return Err(ResolveError::DependencyCycle(cycle));
                }
                return Ok(Target::Package(key));
            }
        }
        if dep.optional {
            Ok(Target::Skipped)
        } else {
            Err(ResolveError::UnresolvedDependency(dep.name.clone()))
        }
    }
}

/// Plan how to satisfy `deps`, in declaration order.
pub fn build_resolution_plan(
    deps: &[DependencySpec],
    envs: &[EnvEntry],
    packages: &[PackageSpec],
) -> Result<ResolutionPlan, ResolveError> {
    let mut planner = Planner {
        envs,
        packages,
        actions: Vec::new(),
        bound: BTreeMap::new(),
        stack: Vec::new(),
    };
    for d in deps {
        planner.plan(d)?;
    }
    Ok(ResolutionPlan {
        actions: planner.actions,
    })
}

/// Run a plan: installs are performed (and registered in `repo`) in order.
/// Returns dependency name → environment for every bound dependency.
pub fn execute_plan(
    plan: &ResolutionPlan,
    installer: &Installer<'_>,
    repo: &Repo,
) -> Result<BTreeMap<String, EnvEntry>, InstallError> {
    let mut binding: BTreeMap<String, EnvEntry> = BTreeMap::new();
    for action in &plan.actions {
        match action {
            PlanAction::UseEnv { dep, env } => {
                binding.insert(dep.clone(), env.clone());
            }
            PlanAction::Install { deps, package } => {
                let bound: BTreeMap<String, EnvEntry> = package
                    .deps
                    .iter()
                    .filter_map(|d| binding.get(&d.name).map(|e| (d.name.clone(), e.clone())))
                    .collect();
                let (_, env) = installer.install_into_repo(repo, package, &bound)?;
                for d in deps {
                    binding.insert(d.clone(), env.clone());
                }
            }
            PlanAction::Skip { .. } => {}
        }
    }
    Ok(binding)
}

/// Resolve `deps` against every env and package in `repos`, installing
/// what is missing into the first repository.
pub fn bind_dependencies(
    deps: &[DependencySpec],
    repos: &[Repo],
    installer: &Installer<'_>,
) -> Result<BTreeMap<String, EnvEntry>, InstallError> {
    if deps.is_empty() {
        return Ok(BTreeMap::new());
    }
    let target = repos
        .first()
        .ok_or_else(|| ResolveError::Invalid("no repository configured".into()))?;
    let envs: Vec<EnvEntry> = crate::envdetect::list_envs(repos)?.into_iter().map(|(_, e)| e).collect();
    let packages: Vec<PackageSpec> = list_packages(repos)?.into_iter().map(|(_, p)| p).collect();
    let plan = build_resolution_plan(deps, &envs, &packages)?;
    execute_plan(&plan, installer, target)
}
