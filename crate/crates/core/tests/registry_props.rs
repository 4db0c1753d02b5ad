mod common;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{TimeZone, Utc};
use ck_core::envdetect::{compare_versions, EnvEntry, Version};
use ck_core::metapkg::{build_resolution_plan, resolve_dependency, DependencySpec, ResolveError};
use ck_core::registry::{search_by_tags, EntryMeta, Kind, RegistryError, Repo};
use common::{env_entry, oracle_cmp, oracle_resolve, package_dag, plan_is_topological};
use proptest::prelude::*;
use serde_json::json;

#[derive(Debug, Clone)]
enum Op {
    Add { alias: bool, tags: BTreeSet<u8>, n: i64 },
    Remove(usize),
    Find(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (any::<bool>(), prop::collection::btree_set(0u8..5, 0..4), any::<i64>()).prop_map(|(alias, tags, n)| Op::Add { alias, tags, n }),
        1 => any::<usize>().prop_map(Op::Remove),
        1 => any::<usize>().prop_map(Op::Find),
    ]
}

fn tag_set(tags: &BTreeSet<u8>) -> BTreeSet<String> {
    tags.iter().map(|t| format!("t{t}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Registry behaves like a map from uid to (tags, meta).
    #[test]
    fn registry_matches_a_model(ops in prop::collection::vec(op(), 1..40), query in prop::collection::btree_set(0u8..5, 0..3)) {
        let d = tempfile::tempdir().unwrap();
        let repo = Repo::init(d.path(), "local").unwrap();
        let mut model: BTreeMap<String, (Option<String>, BTreeSet<String>, i64)> = BTreeMap::new();
        let mut counter = 0;
        for op in ops {
            match op {
                Op::Add { alias, tags, n } => {
                    counter += 1;
                    let alias = alias.then(|| format!("e{counter}"));
                    let meta = EntryMeta::from_document(json!({"tags": tag_set(&tags), "n": n, "x": [1.5, null, "s"]})).unwrap();
                    let id = repo.add_entry(Kind::DatasetStub, alias.as_deref(), &meta, None).unwrap();
                    prop_assert!(!model.contains_key(&id.uid));
                    model.insert(id.uid.clone(), (alias, tag_set(&tags), n));
                }
                Op::Remove(i) if !model.is_empty() => {
                    let uid = model.keys().nth(i % model.len()).unwrap().clone();
                    repo.remove_entry(Kind::DatasetStub, &uid).unwrap();
                    model.remove(&uid);
                    let gone = matches!(repo.find_entry(Kind::DatasetStub, &uid), Err(RegistryError::NotFound { .. }));
                    prop_assert!(gone);
                }
                Op::Find(i) if !model.is_empty() => {
                    let (uid, (alias, tags, n)) = model.iter().nth(i % model.len()).unwrap();
                    let (id, meta) = repo.find_entry(Kind::DatasetStub, uid).unwrap();
                    prop_assert_eq!(&meta.tags, tags);
                    prop_assert_eq!(&meta.meta["n"], &json!(n));
                    if let Some(a) = alias {
                        prop_assert_eq!(repo.find_entry(Kind::DatasetStub, a).unwrap().0, id);
                    }
                }
                _ => {}
            }
        }
        let want = tag_set(&query);
        let mut expected: Vec<String> = model.iter().filter(|(_, (_, t, _))| want.is_subset(t)).map(|(u, _)| u.clone()).collect();
        expected.sort();
        let mut got: Vec<String> = search_by_tags(&[repo.clone()], Some(Kind::DatasetStub), &want).unwrap().into_iter().map(|i| i.uid).collect();
        got.sort();
        prop_assert_eq!(got, expected);

        // reopening sees the same canonical bytes
        let reopened = Repo::open(d.path()).unwrap();
        for (id, _) in repo.list_entries(Kind::DatasetStub).unwrap() {
            let path = reopened.entry_dir(&id).join(".meta/meta.json");
            let bytes = std::fs::read(&path).unwrap();
            let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(ck_core::json::to_canonical_string(&v).unwrap().into_bytes(), bytes);
        }
    }

    #[test]
    fn versions_follow_the_componentwise_oracle(
        a in prop::collection::vec(prop_oneof!["[0-9]{1,3}", "0{1,2}[0-9]", "[a-c]{1,2}", "rc[0-9]"], 1..5),
        b in prop::collection::vec(prop_oneof!["[0-9]{1,3}", "0{1,2}[0-9]", "[a-c]{1,2}", "rc[0-9]"], 1..5),
        sep in prop::sample::select(vec![".", "-", "_"]),
    ) {
        let (a, b) = (a.join(sep), b.join("."));
        prop_assert_eq!(compare_versions(&Version::parse(&a), &Version::parse(&b)), oracle_cmp(&a, &b));
    }

    #[test]
    fn resolver_matches_oracle(
        envs in prop::collection::vec((prop::collection::btree_set(0u8..3, 0..3), 0u8..4, 0u8..3, 0u8..3, 0u8..2), 0..12),
        want in prop::collection::btree_set(0u8..3, 1..3),
        lo in prop::option::of(0u8..4),
        hi in prop::option::of(0u8..4),
    ) {
        let envs: Vec<EnvEntry> = envs
            .into_iter()
            .map(|(tags, major, minor, t, uid)| {
                let mut e = env_entry("tool", &format!("{major}.{minor}"), &[]);
                e.tags = tags.iter().map(|t| format!("t{t}")).collect();
                e.detected_at = Utc.timestamp_opt(1_700_000_000 + i64::from(t), 0).unwrap();
                e.uid = Some(format!("{uid:016x}"));
                e
            })
            .collect();
        let mut dep = DependencySpec::new("tool", &[]);
        dep.tags = want.iter().map(|t| format!("t{t}")).collect();
        dep.version_min = lo.map(|v| Version::parse(&v.to_string()));
        dep.version_max = hi.map(|v| Version::parse(&format!("{v}.9")));
        let got = resolve_dependency(&dep, &envs).map(|e| e as *const EnvEntry);
        let want = oracle_resolve(&dep, &envs).map(|e| e as *const EnvEntry);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn plans_are_topological_and_cycles_are_reported(
        extra in prop::collection::vec(prop::collection::vec(0usize..20, 0..3), 1..20),
        back in any::<prop::sample::Index>(),
    ) {
        let mut packages = package_dag(&extra);
        let top = packages.len() - 1;
        let deps = [DependencySpec::new("top", &[&format!("p{top}")])];
        let plan = build_resolution_plan(&deps, &[], &packages).unwrap();
        prop_assert!(plan_is_topological(&plan));
        prop_assert_eq!(plan.installs().count(), packages.len());

        if top > 0 {
            // node 0 is reachable from every node through the i-1 chain
            let k = 1 + back.index(top);
            packages[0].deps.push(DependencySpec::new(&format!("p{k}"), &[&format!("p{k}")]));
            let cyclic = matches!(build_resolution_plan(&deps, &[], &packages), Err(ResolveError::DependencyCycle(_)));
            prop_assert!(cyclic);
        }
    }
}

#[test]
fn fixed_version_cases() {
    assert!(Version::parse("1.2") < Version::parse("1.10"));
    assert_eq!(Version::parse("3.0"), Version::parse("3.0.0"));
}
