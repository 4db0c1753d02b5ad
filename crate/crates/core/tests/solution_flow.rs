mod common;

use std::collections::BTreeSet;

use chrono::Utc;
use ck_core::autotune::{pareto_filter, ObjectiveSpec, RecordStatus};
use ck_core::envdetect::collect_platform_info;
use ck_core::metapkg::Installer;
use ck_core::registry::Repo;
use ck_core::solution::{
    init_solution, merge_bundles, parse_rows, read_bundle, render_report, render_rows, run_benchmark, scoreboard,
    ReportFormat, ResultBundle, SolutionContext, SolutionError, SolutionManifest, SolutionState, TaskStatus,
};
use common::record_with;
use common::world::{World, TASKS};
use proptest::prelude::*;
use serde_json::json;

fn ctx(repos: &[Repo]) -> SolutionContext<'_> {
    SolutionContext {
        repos,
        installer: Installer::default(),
    }
}

#[test]
fn init_then_benchmark() {
    let d = tempfile::tempdir().unwrap();
    let w = World::new(d.path());
    let repos = [w.repo.clone()];
    let m = w.manifest();

    ck_core::solution::register_solution(&m, &w.repo).unwrap();
    assert!(matches!(run_benchmark(&m.name, &ctx(&repos), None), Err(SolutionError::InitIncomplete(_))));

    let state = init_solution(&m, &ctx(&repos)).unwrap();
    assert!(state.init_complete);
    assert!(state.tasks.iter().all(|t| t.status == TaskStatus::Ok), "{:?}", state.tasks);
    for i in 1..TASKS {
        assert_eq!(w.count(i), 1, "task {i}");
    }

    // a second init reuses every journaled outcome
    let again = init_solution(&m, &ctx(&repos)).unwrap();
    assert_eq!(again.tasks, state.tasks);
    for i in 1..TASKS {
        assert_eq!(w.count(i), 1, "task {i}");
    }

    let (bundle, path) = run_benchmark(&m.name, &ctx(&repos), None).unwrap();
    assert_eq!(read_bundle(&path).unwrap(), bundle);
    assert_eq!(bundle.records.len(), 3);
    for r in &bundle.records {
        let t = r.point["/run/params/threads"].as_f64().unwrap();
        assert_eq!(r.status, RecordStatus::Ok);
        assert!((r.aggregated.as_ref().unwrap()["time_s"].mean - (1.0 + 0.1 * t)).abs() < 1e-9);
    }
    let objs = &m.benchmark.objectives;
    let front: Vec<f64> = pareto_filter(&bundle.records, objs)
        .unwrap()
        .iter()
        .map(|r| r.point["/run/params/threads"].as_f64().unwrap())
        .collect();
    assert_eq!(front, [1.0, 2.0]);
}

#[test]
fn failure_at_each_task_resumes() {
    for i in 0..TASKS {
        let d = tempfile::tempdir().unwrap();
        let w = World::new(d.path());
        let repos = [w.repo.clone()];
        let m = w.manifest();
        w.inject(i);
        let first = init_solution(&m, &ctx(&repos));
        if i == 0 {
            let s = first.unwrap();
            assert_eq!(s.tasks[0].status, TaskStatus::Skipped);
            assert!(s.init_complete);
        } else {
            match first {
                Err(SolutionError::TaskFailed { index, log, .. }) => {
                    assert_eq!(index, i);
                    assert!(log.exists());
                }
                other => panic!("task {i}: {other:?}"),
            }
        }
        let (_, state_dir) = ck_core::solution::register_solution(&m, &w.repo).unwrap();
        let journal = SolutionState::load(&state_dir).unwrap().unwrap();
        if i > 0 {
            assert_eq!(journal.tasks.len(), i + 1);
            assert_eq!(journal.tasks[i].status, TaskStatus::Failed);
            assert!(!journal.init_complete);
            for j in 1..TASKS {
                assert_eq!(w.count(j), usize::from(j < i), "task {j} after failing {i}");
            }
        }

        w.clear(i);
        let resumed = init_solution(&m, &ctx(&repos)).unwrap();
        assert!(resumed.init_complete);
        assert!(resumed.tasks.iter().all(|t| t.status == TaskStatus::Ok), "{i}: {:?}", resumed.tasks);
        for j in 1..TASKS {
            assert_eq!(w.count(j), 1, "task {j} after resuming {i}");
        }
        for (a, b) in journal.tasks.iter().zip(&resumed.tasks).take(i) {
            if a.status == TaskStatus::Ok {
                assert_eq!(a.finished_at, b.finished_at);
            }
        }
    }
}

#[test]
fn edited_task_reruns() {
    let d = tempfile::tempdir().unwrap();
    let w = World::new(d.path());
    let repos = [w.repo.clone()];
    init_solution(&w.manifest(), &ctx(&repos)).unwrap();
    let mut v = w.manifest_value();
    v["tasks"][4]["params"] = json!({"note": "rebuild"});
    init_solution(&SolutionManifest::from_value(v).unwrap(), &ctx(&repos)).unwrap();
    assert_eq!(w.count(4), 2);
    assert_eq!(w.count(3), 1);
}

#[test]
fn foreign_target_os_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let w = World::new(d.path());
    let repos = [w.repo.clone()];
    let mut v = w.manifest_value();
    v["target_os"] = json!("plan9");
    let m = SolutionManifest::from_value(v).unwrap();
    assert!(matches!(init_solution(&m, &ctx(&repos)), Err(SolutionError::TargetOsMismatch { .. })));
    assert_eq!(w.count(1), 0);
}

fn bundle(id: &str, uids: &[u8]) -> ResultBundle {
    ResultBundle {
        bundle_id: id.into(),
        solution_name: "s".into(),
        records: uids
            .iter()
            .map(|u| record_with(&format!("{u:016x}"), &[("time_s", f64::from(*u))]))
            .collect(),
        platform: collect_platform_info(),
        created_at: Utc::now(),
        format_version: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_is_the_ordered_uid_union(groups in prop::collection::vec(prop::collection::btree_set(0u8..30, 0..12), 1..4)) {
        let bundles: Vec<ResultBundle> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| bundle(&format!("b{i}"), &g.iter().copied().collect::<Vec<_>>()))
            .collect();
        let merged = merge_bundles(&bundles).unwrap();
        let mut seen = BTreeSet::new();
        let mut expected = Vec::new();
        for b in &bundles {
            for r in &b.records {
                if seen.insert(r.experiment_uid.clone()) {
                    expected.push((b.bundle_id.clone(), r.experiment_uid.clone()));
                }
            }
        }
        let got: Vec<(String, String)> = merged.iter().map(|m| (m.source.clone(), m.record.experiment_uid.clone())).collect();
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn merge_refuses_mixed_versions() {
    let a = bundle("a", &[1]);
    let mut b = bundle("b", &[2]);
    b.format_version = 2;
    assert!(matches!(merge_bundles(&[a, b]), Err(SolutionError::FormatVersionMismatch { expected: 1, found: 2 })));
}

#[test]
fn report_frontier_matches_pareto_filter() {
    use ck_core::autotune::SplitMix64;
    let mut rng = SplitMix64::new(11);
    let mut b = bundle("b", &[]);
    for i in 0..200 {
        let mut r = record_with(
            &format!("{i:016x}"),
            &[("time_s", rng.below(50) as f64), ("accuracy", rng.below(50) as f64 / 50.0), ("energy_j", rng.below(50) as f64)],
        );
        if i % 17 == 0 {
            r.status = RecordStatus::Failed;
        }
        b.records.push(r);
    }
    let objs = ObjectiveSpec::parse_list("time_s:min,accuracy:max,energy_j:min").unwrap();
    let merged = merge_bundles(std::slice::from_ref(&b)).unwrap();
    let rows = scoreboard(&merged, &objs, None).unwrap();
    let flagged: BTreeSet<String> = rows.iter().filter(|r| r.on_frontier).map(|r| r.experiment_uid.clone()).collect();
    let front: BTreeSet<String> = pareto_filter(&b.records, &objs).unwrap().into_iter().map(|r| r.experiment_uid).collect();
    assert_eq!(flagged, front);
    assert_eq!(rows.len(), b.records.iter().filter(|r| r.status == RecordStatus::Ok).count());
    assert!(rows.windows(2).all(|w| w[0].values["time_s"] <= w[1].values["time_s"]));

    let text = render_report(&merged, &objs, ReportFormat::Json, None, "").unwrap();
    assert_eq!(render_rows(&parse_rows(&text).unwrap(), &objs, ReportFormat::Json, "", false), text);
    let md = render_report(&merged, &objs, ReportFormat::Markdown, None, "Scores").unwrap();
    assert_eq!(md.matches("| yes |").count(), front.len());
}
