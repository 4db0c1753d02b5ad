#![allow(dead_code)]

pub mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use chrono::Utc;
use ck_core::autotune::{ExperimentRecord, RecordStatus};
use ck_core::envdetect::{collect_platform_info, EnvEntry, Version};
use ck_core::pipeline::Stat;
use ck_core::registry::{ComponentId, Kind};

/// Write an executable `#!/bin/sh` script.
pub fn script(path: &Path, body: &str) -> PathBuf {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).unwrap();
    }
    fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(path, fs::Permissions::from_mode(0o755)).unwrap();
    path.to_path_buf()
}

pub fn env_entry(name: &str, version: &str, vars: &[(&str, &str)]) -> EnvEntry {
    EnvEntry {
        uid: None,
        soft_name: name.into(),
        soft_uid: None,
        tags: BTreeSet::from([name.to_string()]),
        version: Version::parse(version),
        tool_path: PathBuf::from(format!("/opt/{name}")),
        env_vars: vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        platform: collect_platform_info(),
        detected_at: Utc::now(),
    }
}

pub fn program_id() -> ComponentId {
    ComponentId {
        repo_alias: "test".into(),
        kind: Kind::Program,
        uid: "00000000000000aa".into(),
        alias: Some("stub".into()),
    }
}

/// An ok record whose aggregated stats hold exactly `values` (min = mean).
pub fn record_with(uid: &str, values: &[(&str, f64)]) -> ExperimentRecord {
    let aggregated: BTreeMap<String, Stat> = values
        .iter()
        .map(|(k, v)| {
            (
                k.to_string(),
                Stat {
                    min: *v,
                    max: *v,
                    mean: *v,
                    stddev: None,
                    n: 1,
                },
            )
        })
        .collect();
    ExperimentRecord {
        experiment_uid: uid.into(),
        program: program_id(),
        point: Default::default(),
        repetitions: vec![values.iter().map(|(k, v)| (k.to_string(), *v)).collect()],
        runs: vec![],
        aggregated: Some(aggregated),
        platform: collect_platform_info(),
        env_fingerprint: String::new(),
        timestamp: Utc::now(),
        status: RecordStatus::Ok,
        error: None,
    }
}

/// Reference dominance over minimized cost vectors, written out longhand.
pub fn oracle_dominates(a: &[f64], b: &[f64]) -> bool {
    let no_worse = a.iter().zip(b).all(|(x, y)| x <= y);
    let better = a.iter().zip(b).any(|(x, y)| x < y);
    no_worse && better
}

/// All-pairs frontier scan.
pub fn oracle_front(costs: &[Vec<f64>]) -> Vec<usize> {
    (0..costs.len())
        .filter(|&i| !(0..costs.len()).any(|j| j != i && oracle_dominates(&costs[j], &costs[i])))
        .collect()
}

/// Filter the candidates, then narrow by version, detection time and uid in turn.
pub fn oracle_resolve<'a>(dep: &ck_core::metapkg::DependencySpec, envs: &'a [EnvEntry]) -> Option<&'a EnvEntry> {
    let ok: Vec<&EnvEntry> = envs
        .iter()
        .filter(|e| dep.tags.iter().all(|t| e.tags.contains(t)))
        .filter(|e| dep.version_min.as_ref().is_none_or(|lo| oracle_cmp(e.version.raw(), lo.raw()).is_ge()))
        .filter(|e| dep.version_max.as_ref().is_none_or(|hi| oracle_cmp(e.version.raw(), hi.raw()).is_le()))
        .collect();
    let top = ok.iter().map(|e| e.version.raw()).reduce(|a, b| if oracle_cmp(b, a).is_gt() { b } else { a })?;
    let ok: Vec<&EnvEntry> = ok.into_iter().filter(|e| oracle_cmp(e.version.raw(), top).is_eq()).collect();
    let latest = ok.iter().map(|e| e.detected_at).max()?;
    let ok: Vec<&EnvEntry> = ok.into_iter().filter(|e| e.detected_at == latest).collect();
    let low = ok.iter().map(|e| e.uid.clone().unwrap_or_default()).min()?;
    ok.into_iter().find(|e| e.uid.clone().unwrap_or_default() == low)
}

/// Componentwise version comparison over padded token lists: digit tokens
/// compare by numeric value (as big integers), any digit token sorts before
/// any other token, other tokens compare bytewise.
pub fn oracle_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let split = |s: &str| -> Vec<String> { s.split(|c| c == '.' || c == '-' || c == '_').map(str::to_string).collect() };
    let (mut x, mut y) = (split(a), split(b));
    let n = x.len().max(y.len());
    x.resize(n, "0".into());
    y.resize(n, "0".into());
    let numeric = |t: &str| !t.is_empty() && t.chars().all(|c| c.is_ascii_digit());
    for (p, q) in x.iter().zip(&y) {
        let ord = match (numeric(p), numeric(q)) {
            (true, true) => {
                let (p, q) = (p.trim_start_matches('0'), q.trim_start_matches('0'));
                if p.len() != q.len() {
                    p.len().cmp(&q.len())
                } else {
                    p.cmp(q)
                }
            }
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (false, false) => p.as_bytes().cmp(q.as_bytes()),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Package `i` is tagged `p<i>` and depends on `i - 1` plus `extra` lower nodes.
pub fn package_dag(extra: &[Vec<usize>]) -> Vec<ck_core::metapkg::PackageSpec> {
    (0..extra.len())
        .map(|i| {
            let mut deps: BTreeSet<usize> = extra[i].iter().copied().filter(|&j| j < i).collect();
            if i > 0 {
                deps.insert(i - 1);
            }
            serde_json::from_value(serde_json::json!({
                "package_name": format!("p{i}"),
                "tags": [format!("p{i}")],
                "version": "1.0",
                "deps": deps.iter().map(|j| serde_json::json!({"name": format!("p{j}"), "tags": [format!("p{j}")]})).collect::<Vec<_>>(),
                "install_steps": [{"kind": "script", "command": ["true"]}],
                "provides_env": {}
            }))
            .unwrap()
        })
        .collect()
}

/// Every install's dependencies are bound by an earlier action.
pub fn plan_is_topological(plan: &ck_core::metapkg::ResolutionPlan) -> bool {
    use ck_core::metapkg::PlanAction;
    let mut bound = BTreeSet::new();
    for a in &plan.actions {
        match a {
            PlanAction::Install { deps, package } => {
                if !package.deps.iter().all(|d| bound.contains(&d.name)) {
                    return false;
                }
                bound.extend(deps.iter().cloned());
            }
            PlanAction::UseEnv { dep, .. } | PlanAction::Skip { dep } => {
                bound.insert(dep.clone());
            }
        }
    }
    true
}
