//! File-backed component registry.
//!
//! Layout of a repository root:
//!
//! ```text
//! <root>/.ckr.json                               {"alias","schema_version","uid"}
//! <root>/.ckr-index.json                         derived lookup index, rebuilt when stale
//! <root>/<kind>/<alias-or-uid>/.meta/meta.json   entry meta object plus "tags"
//! <root>/<kind>/<alias-or-uid>/.meta/info.json   {"alias","created_at","kind","schema_version","uid"}
//! <root>/<kind>/<alias-or-uid>/...               payload files
//! ```
//!
//! New entries are assembled in a hidden temp directory and renamed into
//! place, so a reader never sees `meta.json` without `info.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant, UNIX_EPOCH};

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::json;
use crate::uid;

pub const REPO_DESCRIPTOR: &str = ".ckr.json";
pub const REPO_INDEX: &str = ".ckr-index.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("alias `{alias}` already used for kind `{kind}`")]
    DuplicateAlias { kind: Kind, alias: String },
    #[error("uid `{uid}` already used for kind `{kind}`")]
    DuplicateUid { kind: Kind, uid: String },
    #[error("invalid alias `{0}`")]
    InvalidAlias(String),
    #[error("unknown component kind `{0}`")]
    UnknownKind(String),
    #[error("invalid tag `{0}`: tags are non-empty lowercase strings without whitespace")]
    InvalidTag(String),
    #[error("invalid entry meta: {0}")]
    InvalidMeta(String),
    #[error("no `{kind}` entry matches `{key}`")]
    NotFound { kind: Kind, key: String },
    #[error("key `{key}` matches several `{kind}` entries")]
    AmbiguousKey { kind: Kind, key: String },
    #[error("`{}` is not a repository (missing {REPO_DESCRIPTOR})", .0.display())]
    NotARepo(PathBuf),
    #[error("`{}` is already a repository", .0.display())]
    RepoExists(PathBuf),
    #[error("corrupt entry at `{}`: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("entry at `{}` is locked by another writer", .0.display())]
    Locked(PathBuf),
    #[error("I/O failure at `{}`: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Component kinds. Unknown kinds are rejected, never auto-created.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Soft,
    Package,
    Program,
    Env,
    Experiment,
    Solution,
    DatasetStub,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Soft,
        Kind::Package,
        Kind::Program,
        Kind::Env,
        Kind::Experiment,
        Kind::Solution,
        Kind::DatasetStub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Soft => "soft",
            Kind::Package => "package",
            Kind::Program => "program",
            Kind::Env => "env",
            Kind::Experiment => "experiment",
            Kind::Solution => "solution",
            Kind::DatasetStub => "dataset-stub",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| RegistryError::UnknownKind(s.to_string()))
    }
}

/// Globally unique address of a registry entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentId {
    pub repo_alias: String,
    pub kind: Kind,
    pub uid: String,
    #[serde(default)]
    pub alias: Option<String>,
}

impl ComponentId {
    /// Sort key used for every listing: (repo alias, kind name, uid).
    pub fn sort_key(&self) -> (&str, &str, &str) {
        (&self.repo_alias, self.kind.as_str(), &self.uid)
    }

    /// Directory name of the entry inside `<root>/<kind>/`.
    pub fn dir_name(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.uid)
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.repo_alias, self.kind, self.dir_name())
    }
}

fn alias_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_.-]*$").unwrap())
}

/// Aliases follow `[A-Za-z_][A-Za-z0-9_.-]*` and must not look like a uid
/// (`abcdef0123456789` satisfies the grammar but would shadow uid lookup).
pub fn validate_alias(alias: &str) -> Result<()> {
    if alias_re().is_match(alias) && !uid::is_uid(alias) {
        Ok(())
    } else {
        Err(RegistryError::InvalidAlias(alias.to_string()))
    }
}

pub fn validate_tag(tag: &str) -> Result<()> {
    let ok = !tag.is_empty()
        && !tag.chars().any(char::is_whitespace)
        && !tag.chars().any(char::is_uppercase);
    if ok {
        Ok(())
    } else {
        Err(RegistryError::InvalidTag(tag.to_string()))
    }
}

/// Tags plus the kind-specific JSON object of an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMeta {
    pub tags: BTreeSet<String>,
    pub meta: Map<String, Value>,
    pub created_at: DateTime<Utc>,
    pub schema_version: u32,
}

impl EntryMeta {
    pub fn new(tags: BTreeSet<String>, meta: Map<String, Value>) -> Self {
        EntryMeta {
            tags,
            meta,
            created_at: Utc::now(),
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Split a full meta document: its `"tags"` array becomes the tag set and
    /// the rest becomes `meta`.
    pub fn from_document(doc: Value) -> Result<Self> {
        let Value::Object(mut meta) = doc else {
            return Err(RegistryError::InvalidMeta("meta must be a JSON object".into()));
        };
        let tags = match meta.remove("tags") {
            None => BTreeSet::new(),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|t| match t {
                    Value::String(s) => Ok(s),
                    other => Err(RegistryError::InvalidTag(other.to_string())),
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(RegistryError::InvalidMeta("`tags` must be an array".into())),
        };
        Ok(EntryMeta::new(tags, meta))
    }

    /// The document stored in `meta.json`: `meta` with `"tags"` added.
    pub fn document(&self) -> Value {
        let mut doc = self.meta.clone();
        doc.insert(
            "tags".into(),
            Value::Array(self.tags.iter().cloned().map(Value::String).collect()),
        );
        Value::Object(doc)
    }

    fn validate(&self) -> Result<()> {
        for t in &self.tags {
            validate_tag(t)?;
        }
        if self.meta.contains_key("tags") {
            return Err(RegistryError::InvalidMeta(
                "`tags` is reserved; pass tags through EntryMeta::tags".into(),
            ));
        }
        if self.schema_version < 1 {
            return Err(RegistryError::InvalidMeta("schema_version must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RepoFile {
    uid: String,
    alias: String,
    schema_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct InfoFile {
    uid: String,
    alias: Option<String>,
    kind: Kind,
    created_at: DateTime<Utc>,
    schema_version: u32,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    schema_version: u32,
    kinds: BTreeMap<String, KindIndex>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct KindIndex {
    mtime_ns: u128,
    /// Keyed by entry directory name.
    entries: BTreeMap<String, IndexedEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexedEntry {
    uid: String,
    alias: Option<String>,
    tags: BTreeSet<String>,
}

/// An initialized repository on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repo {
    pub root: PathBuf,
    pub alias: String,
    pub uid: String,
}

impl Repo {
    pub fn init(root: impl Into<PathBuf>, alias: &str) -> Result<Repo> {
        let root = root.into();
        validate_alias(alias)?;
        let descriptor = root.join(REPO_DESCRIPTOR);
        if descriptor.exists() {
            return Err(RegistryError::RepoExists(root));
        }
        fs::create_dir_all(&root).at(&root)?;
        let file = RepoFile {
            uid: uid::generate(),
            alias: alias.to_string(),
            schema_version: SCHEMA_VERSION,
        };
        json::write_canonical_atomic(&descriptor, &file).at(&descriptor)?;
        Ok(Repo {
            root,
            alias: file.alias,
            uid: file.uid,
        })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Repo> {
        let root = root.into();
        let descriptor = root.join(REPO_DESCRIPTOR);
        if !descriptor.is_file() {
            return Err(RegistryError::NotARepo(root));
        }
        let text = fs::read_to_string(&descriptor).at(&descriptor)?;
        let file: RepoFile = serde_json::from_str(&text).map_err(|e| RegistryError::Corrupt {
            path: descriptor.clone(),
            reason: e.to_string(),
        })?;
        Ok(Repo {
            root,
            alias: file.alias,
            uid: file.uid,
        })
    }

    pub fn kind_dir(&self, kind: Kind) -> PathBuf {
        self.root.join(kind.as_str())
    }

    pub fn entry_dir(&self, id: &ComponentId) -> PathBuf {
        self.kind_dir(id.kind).join(id.dir_name())
    }

    /// Add an entry under a freshly generated uid (regenerated on collision).
    pub fn add_entry(
        &self,
        kind: Kind,
        alias: Option<&str>,
        meta: &EntryMeta,
        payload_dir: Option<&Path>,
    ) -> Result<ComponentId> {
        loop {
            match self.add_entry_with_uid(kind, &uid::generate(), alias, meta, payload_dir) {
                Err(RegistryError::DuplicateUid { .. }) => continue,
                other => return other,
            }
        }
    }

    /// Add an entry under a caller-chosen uid.
    pub fn add_entry_with_uid(
        &self,
        kind: Kind,
        entry_uid: &str,
        alias: Option<&str>,
        meta: &EntryMeta,
        payload_dir: Option<&Path>,
    ) -> Result<ComponentId> {
        if let Some(a) = alias {
            validate_alias(a)?;
        }
        if !uid::is_uid(entry_uid) {
            return Err(RegistryError::InvalidMeta(format!("`{entry_uid}` is not a 16-hex uid")));
        }
        meta.validate()?;

        let kind_dir = self.kind_dir(kind);
        fs::create_dir_all(&kind_dir).at(&kind_dir)?;
        let dir_name = alias.unwrap_or(entry_uid);
        let final_dir = kind_dir.join(dir_name);
        if alias.is_some() && final_dir.exists() {
            return Err(RegistryError::DuplicateAlias {
                kind,
                alias: dir_name.to_string(),
            });
        }
        let mut index = self.load_index(&[kind])?;
        let uid_taken = kind_dir.join(entry_uid).exists()
            || index
                .kinds
                .get(kind.as_str())
                .is_some_and(|k| k.entries.values().any(|e| e.uid == entry_uid));
        if uid_taken {
            return Err(RegistryError::DuplicateUid {
                kind,
                uid: entry_uid.to_string(),
            });
        }

        let tmp = kind_dir.join(format!(".tmp-{}", uid::generate()));
        let built = self.build_entry_dir(&tmp, kind, entry_uid, alias, meta, payload_dir);
        if let Err(e) = built {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        // rename(2) refuses to replace a non-empty directory, so a racing
        // writer with the same alias loses here instead of clobbering.
        if let Err(e) = fs::rename(&tmp, &final_dir) {
            let _ = fs::remove_dir_all(&tmp);
            if final_dir.exists() {
                return Err(match alias {
                    Some(a) => RegistryError::DuplicateAlias {
                        kind,
                        alias: a.to_string(),
                    },
                    None => RegistryError::DuplicateUid {
                        kind,
                        uid: entry_uid.to_string(),
                    },
                });
            }
            return Err(RegistryError::Io {
                path: final_dir,
                source: e,
            });
        }

        let k = index.kinds.entry(kind.as_str().to_string()).or_default();
        k.entries.insert(
            dir_name.to_string(),
            IndexedEntry {
                uid: entry_uid.to_string(),
                alias: alias.map(str::to_string),
                tags: meta.tags.clone(),
            },
        );
        k.mtime_ns = dir_mtime_ns(&kind_dir);
        self.store_index(&index);

        Ok(ComponentId {
            repo_alias: self.alias.clone(),
            kind,
            uid: entry_uid.to_string(),
            alias: alias.map(str::to_string),
        })
    }

    fn build_entry_dir(
        &self,
        dir: &Path,
        kind: Kind,
        entry_uid: &str,
        alias: Option<&str>,
        meta: &EntryMeta,
        payload_dir: Option<&Path>,
    ) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        if let Some(src) = payload_dir {
            copy_tree(src, dir)?;
        }
        let meta_dir = dir.join(".meta");
        fs::create_dir_all(&meta_dir).at(&meta_dir)?;
        let info = InfoFile {
            uid: entry_uid.to_string(),
            alias: alias.map(str::to_string),
            kind,
            created_at: meta.created_at,
            schema_version: meta.schema_version,
        };
        let meta_path = meta_dir.join("meta.json");
        json::write_canonical_atomic(&meta_path, &meta.document()).at(&meta_path)?;
        let info_path = meta_dir.join("info.json");
        json::write_canonical_atomic(&info_path, &info).at(&info_path)?;
        Ok(())
    }

    /// Look up an entry by alias or uid.
    pub fn find_entry(&self, kind: Kind, key: &str) -> Result<(ComponentId, EntryMeta)> {
        let not_found = || RegistryError::NotFound {
            kind,
            key: key.to_string(),
        };
        let kind_dir = self.kind_dir(kind);
        if uid::is_uid(key) {
            // Unaliased entries live under their uid.
            let direct = kind_dir.join(key);
            if direct.join(".meta").is_dir() {
                let (id, meta) = self.read_entry(kind, &direct)?;
                if id.uid == key {
                    return Ok((id, meta));
                }
            }
            let index = self.load_index(&[kind])?;
            let matches: Vec<&String> = index
                .kinds
                .get(kind.as_str())
                .map(|k| {
                    k.entries
                        .iter()
                        .filter(|(_, e)| e.uid == key)
                        .map(|(name, _)| name)
                        .collect()
                })
                .unwrap_or_default();
            match matches.as_slice() {
                [] => Err(not_found()),
                [name] => {
                    let (id, meta) = self.read_entry(kind, &kind_dir.join(name))?;
                    if id.uid == key {
                        Ok((id, meta))
                    } else {
                        // index went stale under a concurrent writer
                        self.rebuild_index()?;
                        self.find_entry_uncached(kind, key)
                    }
                }
                _ => Err(RegistryError::AmbiguousKey {
                    kind,
                    key: key.to_string(),
                }),
            }
        } else {
            if validate_alias(key).is_err() {
                return Err(not_found());
            }
            let dir = kind_dir.join(key);
            if !dir.join(".meta").is_dir() {
                return Err(not_found());
            }
            let (id, meta) = self.read_entry(kind, &dir)?;
            if id.alias.as_deref() != Some(key) {
                return Err(RegistryError::Corrupt {
                    path: dir,
                    reason: format!("info.json alias does not match directory `{key}`"),
                });
            }
            Ok((id, meta))
        }
    }

    fn find_entry_uncached(&self, kind: Kind, key: &str) -> Result<(ComponentId, EntryMeta)> {
        let hits: Vec<_> = self
            .list_entries(kind)?
            .into_iter()
            .filter(|(id, _)| id.uid == key)
            .collect();
        match hits.len() {
            0 => Err(RegistryError::NotFound {
                kind,
                key: key.to_string(),
            }),
            1 => Ok(hits.into_iter().next().unwrap()),
            _ => Err(RegistryError::AmbiguousKey {
                kind,
                key: key.to_string(),
            }),
        }
    }

    fn read_entry(&self, kind: Kind, dir: &Path) -> Result<(ComponentId, EntryMeta)> {
        let meta_dir = dir.join(".meta");
        let info_path = meta_dir.join("info.json");
        let meta_path = meta_dir.join("meta.json");
        let corrupt = |path: &Path, reason: String| RegistryError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let info: InfoFile = serde_json::from_value(json::read_json(&info_path).at(&info_path)?)
            .map_err(|e| corrupt(&info_path, e.to_string()))?;
        if info.kind != kind {
            return Err(corrupt(&info_path, format!("kind `{}` stored under `{kind}`", info.kind)));
        }
        let doc = json::read_json(&meta_path).at(&meta_path)?;
        let mut meta = EntryMeta::from_document(doc)?;
        meta.created_at = info.created_at;
        meta.schema_version = info.schema_version;
        Ok((
            ComponentId {
                repo_alias: self.alias.clone(),
                kind,
                uid: info.uid,
                alias: info.alias,
            },
            meta,
        ))
    }

    /// All readable entries of a kind, ordered by uid. Corrupt entries are skipped.
    pub fn list_entries(&self, kind: Kind) -> Result<Vec<(ComponentId, EntryMeta)>> {
        let mut out = Vec::new();
        for name in entry_names(&self.kind_dir(kind))? {
            match self.read_entry(kind, &self.kind_dir(kind).join(&name)) {
                Ok(e) => out.push(e),
                Err(e @ RegistryError::Corrupt { .. }) | Err(e @ RegistryError::Io { .. }) => {
                    log::warn!("skipping unreadable entry {kind}/{name}: {e}");
                }
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.0.uid.cmp(&b.0.uid));
        Ok(out)
    }

    /// Replace the meta object of an existing entry. Tags are immutable.
    pub fn update_meta(&self, kind: Kind, key: &str, meta: Map<String, Value>) -> Result<ComponentId> {
        if meta.contains_key("tags") {
            return Err(RegistryError::InvalidMeta("`tags` cannot be updated".into()));
        }
        let (id, old) = self.find_entry(kind, key)?;
        let dir = self.entry_dir(&id);
        let _lock = EntryLock::acquire(&dir.join(".meta").join(".lock"))?;
        let updated = EntryMeta { meta, ..old };
        let meta_path = dir.join(".meta").join("meta.json");
        json::write_canonical_atomic(&meta_path, &updated.document()).at(&meta_path)?;
        Ok(id)
    }

    pub fn remove_entry(&self, kind: Kind, key: &str) -> Result<()> {
        let (id, _) = self.find_entry(kind, key)?;
        let dir = self.entry_dir(&id);
        let trash = self.kind_dir(kind).join(format!(".trash-{}", uid::generate()));
        // loaded before the rename so the patch below avoids a full rescan
        let index = self.load_index(&[kind]);
        {
            let _lock = EntryLock::acquire(&dir.join(".meta").join(".lock"))?;
            fs::rename(&dir, &trash).at(&dir)?;
        }
        fs::remove_dir_all(&trash).at(&trash)?;

        if let Ok(mut index) = index {
            if let Some(k) = index.kinds.get_mut(kind.as_str()) {
                k.entries.remove(id.dir_name());
                k.mtime_ns = dir_mtime_ns(&self.kind_dir(kind));
            }
            self.store_index(&index);
        }
        Ok(())
    }

    /// Entries of this repo whose tag set is a superset of `tags`.
    fn tag_matches(&self, kind: Option<Kind>, tags: &BTreeSet<String>) -> Result<Vec<ComponentId>> {
        let kinds: Vec<Kind> = kind.map(|k| vec![k]).unwrap_or_else(|| Kind::ALL.to_vec());
        let index = self.load_index(&kinds)?;
        let mut out = Vec::new();
        for k in kinds {
            if let Some(ki) = index.kinds.get(k.as_str()) {
                for e in ki.entries.values() {
                    if tags.is_subset(&e.tags) {
                        out.push(ComponentId {
                            repo_alias: self.alias.clone(),
                            kind: k,
                            uid: e.uid.clone(),
                            alias: e.alias.clone(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Load the index, re-scanning every requested kind whose directory
    /// changed since the index was written.
    fn load_index(&self, kinds: &[Kind]) -> Result<IndexFile> {
        let path = self.root.join(REPO_INDEX);
        let mut index: IndexFile = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        let mut dirty = false;
        for &kind in kinds {
            let dir = self.kind_dir(kind);
            let names = dir_names(&dir)?;
            let mtime = dir_mtime_ns(&dir);
            let fresh = index.kinds.get(kind.as_str()).is_some_and(|k| {
                k.mtime_ns == mtime && k.entries.len() == names.len() && names.iter().all(|n| k.entries.contains_key(n))
            });
            if !fresh {
                index.kinds.insert(kind.as_str().to_string(), self.scan_kind(kind, mtime)?);
                dirty = true;
            }
        }
        if dirty {
            self.store_index(&index);
        }
        Ok(index)
    }

    fn scan_kind(&self, kind: Kind, mtime_ns: u128) -> Result<KindIndex> {
        let mut entries = BTreeMap::new();
        for (id, meta) in self.list_entries(kind)? {
            entries.insert(
                id.dir_name().to_string(),
                IndexedEntry {
                    uid: id.uid,
                    alias: id.alias,
                    tags: meta.tags,
                },
            );
        }
        Ok(KindIndex { mtime_ns, entries })
    }

    /// Force a full rebuild of the lookup index.
    pub fn rebuild_index(&self) -> Result<()> {
        let mut index = IndexFile {
            schema_version: SCHEMA_VERSION,
            kinds: BTreeMap::new(),
        };
        for kind in Kind::ALL {
            let mtime = dir_mtime_ns(&self.kind_dir(kind));
            index.kinds.insert(kind.as_str().to_string(), self.scan_kind(kind, mtime)?);
        }
        self.store_index(&index);
        Ok(())
    }

    fn store_index(&self, index: &IndexFile) {
        let path = self.root.join(REPO_INDEX);
        let mut index_out = IndexFile {
            schema_version: SCHEMA_VERSION,
            kinds: index.kinds.clone(),
        };
        index_out.kinds.retain(|_, k| !k.entries.is_empty() || k.mtime_ns != 0);
        // The index is derived data: written compact, and losing a write
        // only costs a rescan.
        let bytes = serde_json::to_vec(&index_out).expect("index serializes");
        if let Err(e) = json::write_atomic(&path, &bytes) {
            log::debug!("could not write {}: {e}", path.display());
        }
    }
}

/// Search several repositories. Results are ordered by (repo alias, kind, uid).
pub fn search_by_tags(repos: &[Repo], kind: Option<Kind>, tags: &BTreeSet<String>) -> Result<Vec<ComponentId>> {
    let mut out = Vec::new();
    for repo in repos {
        out.extend(repo.tag_matches(kind, tags)?);
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(out)
}

/// First repository (in order) holding a matching entry.
pub fn find_in(repos: &[Repo], kind: Kind, key: &str) -> Result<(ComponentId, EntryMeta, Repo)> {
    for repo in repos {
        match repo.find_entry(kind, key) {
            Ok((id, meta)) => return Ok((id, meta, repo.clone())),
            Err(RegistryError::NotFound { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(RegistryError::NotFound {
        kind,
        key: key.to_string(),
    })
}

fn entry_names(kind_dir: &Path) -> Result<Vec<String>> {
    let rd = match fs::read_dir(kind_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RegistryError::Io {
            path: kind_dir.to_path_buf(),
            source: e,
        }),
    };
    let mut names = Vec::new();
    for ent in rd {
        let ent = ent.at(kind_dir)?;
        let name = ent.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && ent.path().join(".meta").is_dir() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Visible subdirectory names, using only the directory listing.
fn dir_names(kind_dir: &Path) -> Result<Vec<String>> {
    let rd = match fs::read_dir(kind_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RegistryError::Io {
            path: kind_dir.to_path_buf(),
            source: e,
        }),
    };
    let mut names = Vec::new();
    for ent in rd {
        let ent = ent.at(kind_dir)?;
        let name = ent.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') && ent.file_type().is_ok_and(|t| t.is_dir()) {
            names.push(name);
        }
    }
    Ok(names)
}

fn dir_mtime_ns(dir: &Path) -> u128 {
    fs::metadata(dir)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_nanos())
        .unwrap_or(0)
}

pub(crate) fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    for ent in fs::read_dir(src).at(src)? {
        let ent = ent.at(src)?;
        let from = ent.path();
        let to = dst.join(ent.file_name());
        if ent.file_name() == ".meta" {
            continue;
        }
        let ft = ent.file_type().at(&from)?;
        if ft.is_dir() {
            fs::create_dir_all(&to).at(&to)?;
            copy_tree(&from, &to)?;
        } else {
            fs::copy(&from, &to).at(&from)?;
        }
    }
    Ok(())
}

/// Create-exclusive lock file, removed on drop.
pub(crate) struct EntryLock {
    path: PathBuf,
}

impl EntryLock {
    pub(crate) fn acquire(path: &Path) -> Result<EntryLock> {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(_) => return Ok(EntryLock { path: path.to_path_buf() }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if Instant::now() >= deadline {
                        return Err(RegistryError::Locked(path.to_path_buf()));
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(RegistryError::Io {
                    path: path.to_path_buf(),
                    source: e,
                }),
            }
        }
    }
}

impl Drop for EntryLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
