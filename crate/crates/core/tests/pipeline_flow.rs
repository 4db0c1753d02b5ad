mod common;

use std::collections::BTreeMap;
use std::path::Path;

use ck_core::autotune::Point;
use ck_core::metapkg::DependencySpec;
use ck_core::pipeline::{
    aggregate_stats, extract_characteristics, replay_run_argv, Characteristics, ExtractMode, Pipeline, PipelineError,
    PipelineState, ProgramSpec,
};
use common::{env_entry, program_id, script};
use proptest::prelude::*;
use serde_json::json;

fn pipeline(dir: &Path, spec: serde_json::Value) -> Pipeline {
    Pipeline::new(program_id(), ProgramSpec::from_value(spec).unwrap(), Some(dir.to_path_buf())).unwrap()
}

fn bench(dir: &Path, body: &str) {
    script(&dir.join("bench.sh"), body);
}

#[test]
fn three_repetitions_extract_and_aggregate() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), r#"echo "{\"time_s\": $(( $1 * 2 )), \"rep\": $2}" > ck-result.json"#);
    let p = pipeline(
        d.path(),
        json!({
            "program_name": "stub",
            "run": {"argv": ["sh", "{program_dir}/bench.sh", "{params.n}", "{rep}"]},
            "exposed": {"/run/params/n": {"domain": {"type": "int-range", "lo": 1, "hi": 9, "step": 1}, "default": 3}}
        }),
    );
    let mut state = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    let results = p.run(&mut state, 3).unwrap();
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|r| r.succeeded()));
    let samples: Vec<Characteristics> = results
        .iter()
        .map(|r| extract_characteristics(r, &p.program.extractor).unwrap())
        .collect();
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s["time_s"], 6.0);
        assert_eq!(s["rep"], i as f64);
        assert!(s["wall_time_s"] >= 0.0);
    }
    let agg = aggregate_stats(&samples).unwrap();
    assert_eq!(agg["time_s"].mean, 6.0);
    assert_eq!(agg["time_s"].stddev, Some(0.0));
    assert_eq!(agg["rep"].stddev, Some(1.0));
}

#[test]
fn nonzero_exit_is_recorded_and_extraction_refuses() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), r#"echo '{"time_s": 1}' > ck-result.json; exit 7"#);
    let p = pipeline(d.path(), json!({"program_name": "stub", "run": {"argv": ["sh", "{program_dir}/bench.sh"]}}));
    let mut state = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    let results = p.run(&mut state, 1).unwrap();
    assert_eq!(results[0].exit_code, Some(7));
    assert_eq!(state.get("/run/reps/0/exit_code"), Some(&json!(7)));
    assert!(matches!(
        extract_characteristics(&results[0], &p.program.extractor),
        Err(PipelineError::RunFailed { exit_code: Some(7), .. })
    ));
}

#[test]
fn timeout_is_recorded() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), "exec sleep 30");
    let p = pipeline(
        d.path(),
        json!({"program_name": "stub", "run": {"argv": ["sh", "{program_dir}/bench.sh"], "timeout_s": 0.5}}),
    );
    let mut state = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    let t = std::time::Instant::now();
    let results = p.run(&mut state, 1).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0 * 2.0);
    assert!(results[0].timed_out);
    assert_eq!(state.get("/run/reps/0/timed_out"), Some(&json!(true)));
}

#[test]
fn failing_build_stops_run() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), "exit 0");
    let p = pipeline(
        d.path(),
        json!({
            "program_name": "stub",
            "build": {"argv": ["sh", "-c", "echo broken >&2; exit 3"]},
            "run": {"argv": ["sh", "{program_dir}/bench.sh"]}
        }),
    );
    let mut state = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    match p.run(&mut state, 1) {
        Err(PipelineError::BuildFailed { exit_code, log }) => {
            assert_eq!(exit_code, Some(3));
            assert_eq!(std::fs::read_to_string(log).unwrap(), "broken\n");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(state.get("/build/status"), Some(&json!("failed")));
}

#[test]
fn dependency_env_and_override_warning() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), r#"printf '%s %s' "$CC" "$LIB" > out.txt"#);
    let mut spec = json!({
        "program_name": "stub",
        "deps": [
            serde_json::to_value(DependencySpec::new("compiler", &["compiler"])).unwrap(),
            serde_json::to_value(DependencySpec::new("lib", &["lib"])).unwrap()
        ],
        "run": {"argv": ["sh", "{program_dir}/bench.sh", "{deps.compiler.version}"]}
    });
    spec["deps"][0]["name"] = json!("compiler");
    let p = pipeline(d.path(), spec);
    let bindings: BTreeMap<_, _> = [
        ("compiler".to_string(), env_entry("compiler", "12.1", &[("CC", "/opt/cc"), ("LIB", "a")])),
        ("lib".to_string(), env_entry("lib", "1.0", &[("LIB", "b")])),
    ]
    .into();
    let mut state = p.assemble(&bindings, &d.path().join("w")).unwrap();
    assert_eq!(state.warnings().len(), 1);
    assert!(state.warnings()[0].contains("LIB"));
    let results = p.run(&mut state, 1).unwrap();
    assert_eq!(std::fs::read_to_string(results[0].run_dir.join("out.txt")).unwrap(), "/opt/cc b");
    assert_eq!(state.get("/run/reps/0/argv/2"), Some(&json!("12.1")));

    let missing = p.assemble(&BTreeMap::new(), &d.path().join("w2"));
    assert!(matches!(missing, Err(PipelineError::UnboundDependency(n)) if n == "compiler"));
}

#[test]
fn snapshots_replay_recorded_argv() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), "exit 0");
    let p = pipeline(
        d.path(),
        json!({
            "program_name": "stub",
            "run": {"argv": ["sh", "{program_dir}/bench.sh", "--mode={params.mode}", "{rep}", "{run_dir}"]},
            "exposed": {"/run/params/mode": {"domain": {"type": "categorical", "values": ["fast", "slow"]}, "default": "fast"}}
        }),
    );
    let base = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    let point: Point = [("/run/params/mode".to_string(), json!("slow"))].into();
    let mut state = p.apply_point(&base, &point).unwrap();
    state.relocate(&d.path().join("w/p"));
    state.snapshot().unwrap();
    p.run(&mut state, 2).unwrap();
    let last = state.stage() - 1;
    let snap = PipelineState::load_snapshot(&d.path().join(format!("w/p/state.{last}.json"))).unwrap();
    // the counter advances after each write
    let mut expected = state.clone();
    expected.0["meta"]["stage"] = json!(last);
    assert_eq!(snap, expected);
    let replayed = replay_run_argv(&snap).unwrap();
    let recorded: Vec<Vec<String>> = (0..2)
        .map(|i| serde_json::from_value(snap.0["run"]["reps"][i]["argv"].clone()).unwrap())
        .collect();
    assert_eq!(replayed, recorded);
    assert_eq!(recorded[1][2], "--mode=slow");
    assert_eq!(snap.point(), point);

    // stage 0 of the point holds the substituted value but no runs
    let s0 = PipelineState::load_snapshot(&d.path().join("w/p/state.0.json")).unwrap();
    assert_eq!(s0.get("/run/params/mode"), Some(&json!("slow")));
    assert_eq!(s0.get("/run/reps"), Some(&json!([])));
}

#[test]
fn stdout_regex_extraction() {
    let d = tempfile::tempdir().unwrap();
    bench(d.path(), "echo 'throughput: 12.5 img/s'; echo 'latency_ms=3e-1'");
    let p = pipeline(
        d.path(),
        json!({
            "program_name": "stub",
            "run": {"argv": ["sh", "{program_dir}/bench.sh"]},
            "extractor": {"mode": "stdout-regex", "patterns": {"throughput": "throughput: ([0-9.]+)", "latency_ms": "latency_ms=(\\S+)"}}
        }),
    );
    assert_eq!(p.program.extractor.mode, ExtractMode::StdoutRegex);
    let mut state = p.assemble(&BTreeMap::new(), &d.path().join("w")).unwrap();
    let r = p.run(&mut state, 1).unwrap();
    let c = extract_characteristics(&r[0], &p.program.extractor).unwrap();
    assert_eq!(c["throughput"], 12.5);
    assert_eq!(c["latency_ms"], 0.3);
}

/// Two passes: mean first, then squared deviations.
fn two_pass(xs: &[f64]) -> (f64, f64, f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (min, max, mean, sd)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn aggregation_matches_two_pass(xs in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let samples: Vec<Characteristics> = xs.iter().map(|x| [("k".to_string(), *x)].into()).collect();
        let s = &aggregate_stats(&samples).unwrap()["k"];
        let (min, max, mean, sd) = two_pass(&xs);
        prop_assert_eq!(s.min, min);
        prop_assert_eq!(s.max, max);
        prop_assert_eq!(s.n, xs.len());
        prop_assert!(close(s.mean, mean) || (s.mean - mean).abs() < 1e-9, "{} vs {}", s.mean, mean);
        match (s.stddev, sd) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!(close(a, b) || (a - b).abs() < 1e-9, "{} vs {}", a, b),
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
