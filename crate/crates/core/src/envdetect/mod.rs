//! Software detection plugins and environment entries.
//!
//! A plugin declares which binary names to look for, where to look, how to
//! ask for a version and how to parse it. Each successful probe becomes an
//! [`EnvEntry`] carrying rendered environment variables for later stages.

mod platform;
mod version;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::process::{self, Capture, Invocation};
use crate::registry::{self, ComponentId, EntryMeta, Kind, RegistryError, Repo};
use crate::template;
use crate::uid;

pub use platform::{collect_platform_info, PlatformInfo};
pub use version::{compare_versions, Version, VersionPart};

/// Combined stdout+stderr kept from a version probe.
pub const PROBE_OUTPUT_LIMIT: usize = 64 * 1024;

pub const PATH_TOKEN: &str = "$PATH";

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("invalid detection plugin: {0}")]
    PluginInvalid(String),
    #[error("unsupported script dialect `{0}`")]
    UnsupportedDialect(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn default_timeout() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub binary_names: Vec<String>,
    #[serde(default)]
    pub search_roots: Vec<String>,
    #[serde(default)]
    pub version_args: Vec<String>,
    pub version_regex: String,
    #[serde(default = "default_timeout")]
    pub run_timeout_s: f64,
}

/// A declarative detection plugin (registry kind `soft`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPlugin {
    pub soft_name: String,
    pub tags: BTreeSet<String>,
    pub probe: ProbeSpec,
    #[serde(default)]
    pub env_template: BTreeMap<String, String>,
}

pub(crate) fn env_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z][A-Z0-9_]*$").unwrap())
}

impl SoftPlugin {
    pub fn validate(&self) -> Result<Regex, DetectError> {
        let invalid = |m: String| Err(DetectError::PluginInvalid(m));
        if self.probe.binary_names.is_empty() {
            return invalid("probe.binary_names is empty".into());
        }
        if self.probe.binary_names.iter().any(|n| n.is_empty() || n.contains('/')) {
            return invalid("binary names must be bare file names".into());
        }
        if !(self.probe.run_timeout_s.is_finite() && self.probe.run_timeout_s > 0.0) {
            return invalid("probe.run_timeout_s must be positive".into());
        }
        let re = Regex::new(&self.probe.version_regex)
            .map_err(|e| DetectError::PluginInvalid(format!("version_regex: {e}")))?;
        if re.captures_len() != 2 {
            return invalid(format!(
                "version_regex must have exactly one capture group, found {}",
                re.captures_len() - 1
            ));
        }
        for (name, tpl) in &self.env_template {
            if !env_name_re().is_match(name) {
                return invalid(format!("env var name `{name}` does not match [A-Z][A-Z0-9_]*"));
            }
            if let Some(p) = template::placeholders(tpl)
                .into_iter()
                .find(|p| !matches!(p.as_str(), "path" | "dir" | "version"))
            {
                return invalid(format!("env template `{name}` uses unknown placeholder `{{{p}}}`"));
            }
        }
        for t in &self.tags {
            registry::validate_tag(t).map_err(|e| DetectError::PluginInvalid(e.to_string()))?;
        }
        Ok(re)
    }

    pub fn from_entry(meta: &EntryMeta) -> Result<SoftPlugin, DetectError> {
        serde_json::from_value(meta.document()).map_err(|e| DetectError::PluginInvalid(e.to_string()))
    }

    pub fn to_entry_meta(&self) -> EntryMeta {
        EntryMeta::from_document(serde_json::to_value(self).expect("plugin serializes"))
            .expect("plugin document is an object with string tags")
    }
}

/// A detected or installed software environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEntry {
    /// Registry uid, set once the entry is registered.
    #[serde(default)]
    pub uid: Option<String>,
    pub soft_name: String,
    #[serde(default)]
    pub soft_uid: Option<ComponentId>,
    pub tags: BTreeSet<String>,
    pub version: Version,
    pub tool_path: PathBuf,
    pub env_vars: BTreeMap<String, String>,
    pub platform: PlatformInfo,
    pub detected_at: DateTime<Utc>,
}

impl EnvEntry {
    pub fn to_entry_meta(&self) -> EntryMeta {
        EntryMeta::from_document(serde_json::to_value(self).expect("env entry serializes"))
            .expect("env document is an object with string tags")
    }

    pub fn from_entry(meta: &EntryMeta) -> Result<EnvEntry, RegistryError> {
        serde_json::from_value(meta.document()).map_err(|e| RegistryError::InvalidMeta(e.to_string()))
    }
}

/// Expand search roots into (directory, descend-into-bin) pairs.
fn expand_roots(plugin_roots: &[String], extra_roots: &[PathBuf]) -> Vec<(PathBuf, bool)> {
    let mut out = Vec::new();
    for root in plugin_roots {
        if root == PATH_TOKEN {
            if let Some(path) = std::env::var_os("PATH") {
                out.extend(std::env::split_paths(&path).map(|p| (p, false)));
            }
        } else {
            out.push((PathBuf::from(root), true));
        }
    }
    out.extend(extra_roots.iter().map(|p| (p.clone(), true)));
    out
}

fn is_executable(path: &Path) -> bool {
    let Ok(md) = path.metadata() else { return false };
    if !md.is_file() {
        return false;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        md.permissions().mode() & 0o111 != 0
    }
    #[cfg(not(unix))]
    {
        true
    }
}

/// Candidate executables in probe order, deduplicated by resolved path.
pub fn candidate_paths(plugin: &SoftPlugin, extra_roots: &[PathBuf]) -> Vec<PathBuf> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (root, with_bin) in expand_roots(&plugin.probe.search_roots, extra_roots) {
        for name in &plugin.probe.binary_names {
            let mut spots = vec![root.join(name)];
            if with_bin {
                spots.push(root.join("bin").join(name));
            }
            for p in spots {
                if !is_executable(&p) {
                    continue;
                }
                let Ok(resolved) = p.canonicalize() else { continue };
                if seen.insert(resolved.clone()) {
                    out.push(resolved);
                }
            }
        }
    }
    out
}

/// Run the version probe on one candidate. `None` when it times out or the
/// regex does not match.
fn probe_version(plugin: &SoftPlugin, re: &Regex, path: &Path) -> Option<String> {
    let mut argv = vec![path.to_string_lossy().into_owned()];
    argv.extend(plugin.probe.version_args.iter().cloned());
    let cwd = path.parent().unwrap_or(Path::new("."));
    let outcome = process::run(Invocation {
        argv: &argv,
        cwd,
        env: None,
        timeout: Some(Duration::from_secs_f64(plugin.probe.run_timeout_s)),
        capture: Capture::Memory {
            limit: PROBE_OUTPUT_LIMIT,
        },
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            log::debug!("probe of {} failed to start: {e}", path.display());
            return None;
        }
    };
    if outcome.timed_out {
        log::warn!("probe of {} timed out", path.display());
        return None;
    }
    let mut combined = outcome.stdout;
    combined.extend_from_slice(&outcome.stderr);
    combined.truncate(PROBE_OUTPUT_LIMIT);
    let text = String::from_utf8_lossy(&combined);
    re.captures(&text).and_then(|c| c.get(1)).map(|m| m.as_str().to_string())
}

/// Probe the host for every binary the plugin knows about.
///
/// Candidates that fail to run, time out or print no parsable version are
/// skipped. The result order follows search-root order, then binary-name order.
pub fn detect_software(plugin: &SoftPlugin, extra_roots: &[PathBuf]) -> Result<Vec<EnvEntry>, DetectError> {
    let re = plugin.validate()?;
    let platform = collect_platform_info();
    let mut found = Vec::new();
    for path in candidate_paths(plugin, extra_roots) {
        let Some(raw) = probe_version(plugin, &re, &path) else { continue };
        let version = Version::parse(&raw);
        let dir = path.parent().map(|d| d.to_string_lossy().into_owned()).unwrap_or_default();
        let path_s = path.to_string_lossy().into_owned();
        let mut env_vars = BTreeMap::new();
        for (name, tpl) in &plugin.env_template {
            let value = template::render(tpl, |p| match p {
                "path" => Some(path_s.clone()),
                "dir" => Some(dir.clone()),
                "version" => Some(raw.clone()),
                _ => None,
            })
            .map_err(|p| DetectError::PluginInvalid(format!("unknown placeholder `{{{p}}}`")))?;
            env_vars.insert(name.clone(), value);
        }
        let mut tags = plugin.tags.clone();
        tags.insert("detected".into());
        found.push(EnvEntry {
            uid: None,
            soft_name: plugin.soft_name.clone(),
            soft_uid: None,
            tags,
            version,
            tool_path: path,
            env_vars,
            platform: platform.clone(),
            detected_at: Utc::now(),
        });
    }
    Ok(found)
}

/// Store an environment under kind `env`. Re-registering the same
/// (tool path, version) refreshes the stored entry instead of duplicating it.
pub fn register_env(repo: &Repo, entry: &EnvEntry) -> Result<ComponentId, RegistryError> {
    for (id, meta) in repo.list_entries(Kind::Env)? {
        let Ok(existing) = EnvEntry::from_entry(&meta) else { continue };
        if existing.tool_path == entry.tool_path && existing.version.raw() == entry.version.raw() {
            let mut updated = entry.clone();
            updated.uid = Some(id.uid.clone());
            // tags are immutable in the store
            updated.tags = existing.tags;
            let doc = updated.to_entry_meta();
            return repo.update_meta(Kind::Env, &id.uid, doc.meta);
        }
    }
    loop {
        let new_uid = uid::generate();
        let mut stored = entry.clone();
        stored.uid = Some(new_uid.clone());
        match repo.add_entry_with_uid(Kind::Env, &new_uid, None, &stored.to_entry_meta(), None) {
            Err(RegistryError::DuplicateUid { .. }) => continue,
            other => return other,
        }
    }
}

/// Every readable env entry across the repositories, in repository order.
pub fn list_envs(repos: &[Repo]) -> Result<Vec<(ComponentId, EnvEntry)>, RegistryError> {
    let mut out = Vec::new();
    for repo in repos {
        for (id, meta) in repo.list_entries(Kind::Env)? {
            match EnvEntry::from_entry(&meta) {
                Ok(mut e) => {
                    e.uid = Some(id.uid.clone());
                    out.push((id, e));
                }
                Err(err) => log::warn!("skipping malformed env entry {id}: {err}"),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    PosixShell,
    WindowsBatch,
}

impl FromStr for Dialect {
    type Err = DetectError;

    fn from_str(s: &str) -> Result<Self, DetectError> {
        match s {
            "posix-shell" | "posix" | "sh" => Ok(Dialect::PosixShell),
            "windows-batch" | "batch" | "bat" => Ok(Dialect::WindowsBatch),
            other => Err(DetectError::UnsupportedDialect(other.to_string())),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::PosixShell => "posix-shell",
            Dialect::WindowsBatch => "windows-batch",
        })
    }
}

/// Activation script exporting the entry's variables in sorted key order.
pub fn render_env_script(entry: &EnvEntry, dialect: Dialect) -> String {
    render_vars_script(&entry.env_vars, dialect)
}

pub fn render_vars_script(vars: &BTreeMap<String, String>, dialect: Dialect) -> String {
    let mut out = String::new();
    for (k, v) in vars {
        match dialect {
            Dialect::PosixShell => {
                // inside double quotes only these four stay special
                let mut escaped = String::with_capacity(v.len());
                for c in v.chars() {
                    if matches!(c, '"' | '\\' | '$' | '`') {
                        escaped.push('\\');
                    }
                    escaped.push(c);
                }
                out.push_str(&format!("export {k}=\"{escaped}\"\n"));
            }
            Dialect::WindowsBatch => out.push_str(&format!("set {k}={v}\r\n")),
        }
    }
    out
}
