use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use chrono::Utc;
use sha2::{Digest, Sha256};

use super::{ArchiveFormat, InstallStep, PackageSpec, ResolveError};
use crate::envdetect::{collect_platform_info, EnvEntry};
use crate::json;
use crate::process::{self, Capture, Invocation};
use crate::registry::{ComponentId, EntryLock, RegistryError, Repo};
use crate::template;
use crate::uid;

pub const INSTALLED_DIR: &str = "installed";

#[derive(Debug, thiserror::Error)]
pub enum InstallError {
    #[error("checksum mismatch for `{url}`: expected {expected}, got {actual}")]
    ChecksumMismatch {
        url: String,
        expected: String,
        actual: String,
    },
    #[error("install step {index} failed (exit code {exit_code:?}): {message}")]
    StepFailed {
        index: usize,
        exit_code: Option<i32>,
        message: String,
    },
    #[error("target directory `{}` is not empty (use force to reinstall)", .0.display())]
    TargetNotEmpty(PathBuf),
    #[error(transparent)]
    Invalid(#[from] ResolveError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("I/O failure at `{}`: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> InstallError + '_ {
    move |source| InstallError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Source of downloadable artifacts.
pub trait Fetcher {
    fn fetch(&self, url: &str, dest: &Path) -> io::Result<()>;
}

/// Resolves `file://` URLs and plain filesystem paths.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalFetcher;

impl Fetcher for LocalFetcher {
    fn fetch(&self, url: &str, dest: &Path) -> io::Result<()> {
        let path = match url.split_once("://") {
            Some(("file", rest)) => rest,
            Some((scheme, _)) => {
                return Err(io::Error::new(
                    io::ErrorKind::Unsupported,
                    format!("no fetcher for `{scheme}` URLs"),
                ))
            }
            None => url,
        };
        fs::copy(path, dest).map(|_| ())
    }
}

/// `<repo>/installed/<name>-<version>-<digest8>/`, where the digest covers the
/// canonical package description, so the same package always maps to the same directory.
pub fn install_dir_for(repo: &Repo, pkg: &PackageSpec) -> PathBuf {
    let canonical = json::to_canonical_string(pkg).expect("package serializes");
    let digest = uid::short_digest(canonical.as_bytes());
    repo.root
        .join(INSTALLED_DIR)
        .join(format!("{}-{}-{}", pkg.package_name, pkg.version, &digest[..8]))
}

fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub struct Installer<'a> {
    pub fetcher: &'a dyn Fetcher,
    /// Replace an existing non-empty target directory.
    pub force: bool,
}

impl Default for Installer<'_> {
    fn default() -> Self {
        Installer {
            fetcher: &LocalFetcher,
            force: false,
        }
    }
}

impl Installer<'_> {
    /// Run every install step into `target_dir`. On any failure the target
    /// directory is removed, so an install is all-or-nothing.
    pub fn install_package(
        &self,
        pkg: &PackageSpec,
        target_dir: &Path,
        bound_deps: &BTreeMap<String, EnvEntry>,
    ) -> Result<EnvEntry, InstallError> {
        pkg.validate()?;
        let parent = target_dir.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(io_at(parent))?;
        let lock_name = format!(
            ".{}.lock",
            target_dir.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        );
        let _lock = EntryLock::acquire(&parent.join(lock_name))?;

        let non_empty = fs::read_dir(target_dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if non_empty {
            if !self.force {
                return Err(InstallError::TargetNotEmpty(target_dir.to_path_buf()));
            }
            fs::remove_dir_all(target_dir).map_err(io_at(target_dir))?;
        }
        fs::create_dir_all(target_dir).map_err(io_at(target_dir))?;
        let target_dir = target_dir.canonicalize().map_err(io_at(target_dir))?;

        let result = pkg
            .install_steps
            .iter()
            .enumerate()
            .try_for_each(|(i, step)| self.run_step(i, step, &target_dir, bound_deps));
        if let Err(e) = result {
            if let Err(rm) = fs::remove_dir_all(&target_dir) {
                log::error!("could not remove failed install {}: {rm}", target_dir.display());
            }
            return Err(e);
        }

        let dir_s = target_dir.to_string_lossy().into_owned();
        let mut env_vars = BTreeMap::new();
        for (name, tpl) in &pkg.provides_env {
            let v = template::render(tpl, |p| (p == "install_dir").then(|| dir_s.clone()))
                .expect("validated placeholders");
            env_vars.insert(name.clone(), v);
        }
        let mut tags = pkg.tags.clone();
        tags.insert("installed".into());
        Ok(EnvEntry {
            uid: None,
            soft_name: pkg.package_name.clone(),
            soft_uid: None,
            tags,
            version: pkg.version.clone(),
            tool_path: target_dir,
            env_vars,
            platform: collect_platform_info(),
            detected_at: Utc::now(),
        })
    }

    /// Install into the repository's `installed/` area and register the
    /// resulting environment.
    pub fn install_into_repo(
        &self,
        repo: &Repo,
        pkg: &PackageSpec,
        bound_deps: &BTreeMap<String, EnvEntry>,
    ) -> Result<(ComponentId, EnvEntry), InstallError> {
        let target = install_dir_for(repo, pkg);
        let mut env = self.install_package(pkg, &target, bound_deps)?;
        let id = crate::envdetect::register_env(repo, &env)?;
        env.uid = Some(id.uid.clone());
        Ok((id, env))
    }

    fn run_step(
        &self,
        index: usize,
        step: &InstallStep,
        target: &Path,
        bound_deps: &BTreeMap<String, EnvEntry>,
    ) -> Result<(), InstallError> {
        let failed = |message: String| InstallError::StepFailed {
            index,
            exit_code: None,
            message,
        };
        match step {
            InstallStep::Download { url, sha256, file } => {
                let name = match file {
                    Some(f) => f.clone(),
                    None => url
                        .rsplit('/')
                        .next()
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| failed(format!("cannot derive a file name from `{url}`")))?
                        .to_string(),
                };
                let dest = contained(target, &name).ok_or_else(|| failed(format!("`{name}` escapes the install dir")))?;
                let tmp = target.join(format!(".download-{}", uid::generate()));
                self.fetcher
                    .fetch(url, &tmp)
                    .map_err(|e| failed(format!("fetching `{url}`: {e}")))?;
                let actual = sha256_file(&tmp).map_err(io_at(&tmp))?;
                let expected = sha256.to_ascii_lowercase();
                if actual != expected {
                    let _ = fs::remove_file(&tmp);
                    return Err(InstallError::ChecksumMismatch {
                        url: url.clone(),
                        expected,
                        actual,
                    });
                }
                if let Some(p) = dest.parent() {
                    fs::create_dir_all(p).map_err(io_at(p))?;
                }
                fs::rename(&tmp, &dest).map_err(io_at(&dest))?;
            }
            InstallStep::Extract {
                archive,
                archive_format,
                dest,
            } => {
                let src = contained(target, archive).ok_or_else(|| failed(format!("`{archive}` escapes the install dir")))?;
                let out = contained(target, dest.as_deref().unwrap_or("."))
                    .ok_or_else(|| failed("extract dest escapes the install dir".into()))?;
                fs::create_dir_all(&out).map_err(io_at(&out))?;
                let f = File::open(&src).map_err(|e| failed(format!("opening `{archive}`: {e}")))?;
                match archive_format {
                    ArchiveFormat::TarGz => {
                        let mut ar = tar::Archive::new(flate2::read::GzDecoder::new(f));
                        ar.unpack(&out).map_err(|e| failed(format!("extracting `{archive}`: {e}")))?;
                    }
                    ArchiveFormat::Zip => {
                        let mut ar = zip::ZipArchive::new(f).map_err(|e| failed(format!("reading `{archive}`: {e}")))?;
                        ar.extract(&out).map_err(|e| failed(format!("extracting `{archive}`: {e}")))?;
                    }
                }
            }
            InstallStep::Script { command, workdir } => {
                let dir_s = target.to_string_lossy().into_owned();
                let subst = |s: &str| {
                    template::render(s, |p| (p == "install_dir").then(|| dir_s.clone()))
                        .map_err(|p| failed(format!("unknown placeholder `{{{p}}}` in script")))
                };
                let argv = command.iter().map(|a| subst(a)).collect::<Result<Vec<_>, _>>()?;
                let cwd = match workdir {
                    Some(w) => contained(target, &subst(w)?).ok_or_else(|| failed("workdir escapes the install dir".into()))?,
                    None => target.to_path_buf(),
                };
                let mut env: BTreeMap<String, String> = std::env::vars().collect();
                for dep in bound_deps.values() {
                    env.extend(dep.env_vars.clone());
                }
                env.insert("CK_INSTALL_DIR".into(), dir_s.clone());
                let outcome = process::run(Invocation {
                    argv: &argv,
                    cwd: &cwd,
                    env: Some(&env),
                    timeout: None,
                    capture: Capture::Memory { limit: 64 * 1024 },
                })
                .map_err(|e| failed(format!("spawning `{}`: {e}", argv[0])))?;
                if !outcome.success() {
                    let tail = String::from_utf8_lossy(&outcome.stderr);
                    let tail: String = tail.chars().rev().take(500).collect::<Vec<_>>().into_iter().rev().collect();
                    return Err(InstallError::StepFailed {
                        index,
                        exit_code: outcome.exit_code,
                        message: tail.trim().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Join a relative path under `root`, refusing absolute paths and `..`.
fn contained(root: &Path, rel: &str) -> Option<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return None;
    }
    Some(root.join(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contained_rejects_escapes() {
        let root = Path::new("/tmp/x");
        assert!(contained(root, "../y").is_none());
        assert!(contained(root, "/etc/passwd").is_none());
        assert_eq!(contained(root, "a/b").unwrap(), root.join("a/b"));
    }

    #[test]
    fn local_fetcher_schemes() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src.bin");
        fs::write(&src, b"abc").unwrap();
        let dst = d.path().join("dst.bin");
        LocalFetcher.fetch(&format!("file://{}", src.display()), &dst).unwrap();
        assert_eq!(fs::read(&dst).unwrap(), b"abc");
        let err = LocalFetcher.fetch("https://example.org/x", &dst).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::Unsupported);
    }

    #[test]
    fn sha256_matches_known_digest() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("f");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
