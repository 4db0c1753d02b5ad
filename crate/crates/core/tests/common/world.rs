//! A five-task solution over stub tools: a skippable isolated environment,
//! a dataset package, a detected compiler, a framework package that needs
//! the dataset, and a program whose build is a no-op.
//!
//! Each task `i` fails while `<root>/fail.<i>` exists (task 0 fails while
//! its required binary is missing). Tasks 1-4 append a line to
//! `<root>/count.<i>` each time they succeed.

use std::fs;
use std::path::{Path, PathBuf};

use ck_core::registry::{EntryMeta, Kind, Repo};
use ck_core::solution::SolutionManifest;
use serde_json::{json, Value};

use super::script;

pub struct World {
    pub root: PathBuf,
    pub repo: Repo,
}

pub const TASKS: usize = 5;

fn add(repo: &Repo, kind: Kind, alias: &str, doc: Value, payload: Option<&Path>) {
    let meta = EntryMeta::from_document(doc).unwrap();
    repo.add_entry(kind, Some(alias), &meta, payload).unwrap();
}

impl World {
    pub fn new(root: &Path) -> World {
        let root = root.canonicalize().unwrap();
        let repo = Repo::init(root.join("repo"), "local").unwrap();
        let r = root.display().to_string();

        script(&root.join("tools/env-tool"), "exit 0");
        script(
            &root.join("toolchain/bin/cc-stub"),
            &format!("[ -e {r}/fail.2 ] && exit 1\necho x >> {r}/count.2\necho 'cc-stub version 9.4.1 (stub)'"),
        );
        add(
            &repo,
            Kind::Soft,
            "cc-stub",
            json!({
                "tags": ["compiler", "cc-stub"],
                "soft_name": "cc-stub",
                "probe": {"binary_names": ["cc-stub"], "version_args": ["--version"], "version_regex": "cc-stub version (\\S+)", "run_timeout_s": 5},
                "env_template": {"CC": "{path}"}
            }),
            None,
        );
        let step = |i: usize, body: &str| {
            json!({"kind": "script", "command": ["sh", "-c", format!("[ ! -e {r}/fail.{i} ] && {body} && echo x >> {r}/count.{i}")]})
        };
        add(
            &repo,
            Kind::Package,
            "dataset-min",
            json!({
                "tags": ["dataset", "imagenet"],
                "package_name": "dataset-min",
                "version": "2012.1",
                "install_steps": [step(1, "echo 0.25 > {install_dir}/scale.txt")],
                "provides_env": {"DATASET_DIR": "{install_dir}"}
            }),
            None,
        );
        add(
            &repo,
            Kind::Package,
            "framework",
            json!({
                "tags": ["framework"],
                "package_name": "framework",
                "version": "1.4.0",
                "deps": [{"name": "dataset", "tags": ["dataset"]}],
                "install_steps": [step(3, "cp \"$DATASET_DIR/scale.txt\" {install_dir}/scale.txt")],
                "provides_env": {"FRAMEWORK_HOME": "{install_dir}"}
            }),
            None,
        );

        let payload = root.join("program-src");
        script(
            &payload.join("bench.sh"),
            r#"t="$1"
awk -v t="$t" 'BEGIN { a = 0.7; if (t == 2) a = 0.9; if (t == 4) a = 0.8;
  printf "{\"time_s\": %.17g, \"accuracy\": %.17g}\n", 1 + 0.1 * t, a }' > ck-result.json
env > env.dump"#,
        );
        add(
            &repo,
            Kind::Program,
            "classify",
            json!({
                "tags": ["program", "classify"],
                "program_name": "classify",
                "deps": [
                    {"name": "compiler", "tags": ["compiler"]},
                    {"name": "framework", "tags": ["framework"]}
                ],
                "build": {"argv": ["sh", "-c", format!("[ ! -e {r}/fail.4 ] && echo x >> {r}/count.4")], "env_keys": ["CC", "FRAMEWORK_HOME"]},
                "run": {"argv": ["sh", "{program_dir}/bench.sh", "{params.threads}"]},
                "exposed": {"/run/params/threads": {"domain": {"type": "categorical", "values": [1, 2, 4]}, "default": 1}}
            }),
            Some(&payload),
        );
        World { root, repo }
    }

    pub fn manifest_value(&self) -> Value {
        let r = self.root.display().to_string();
        json!({
            "name": "classify-demo",
            "target_os": "any",
            "format_version": 1,
            "tasks": [
                {"action": "create-isolated-env", "skippable": true, "params": {"requires_binary": format!("{r}/tools/env-tool")}},
                {"action": "install-package", "target": "dataset-min"},
                {"action": "detect-software", "target": "cc-stub", "params": {"roots": [format!("{r}/toolchain")]}},
                {"action": "install-package", "target": "framework"},
                {"action": "compile-program", "target": "classify"}
            ],
            "benchmark": {
                "program": "classify",
                "repetitions": 2,
                "objectives": ["time_s:min", "accuracy:max"],
                "space": [{"pointer": "/run/params/threads", "domain": {"type": "categorical", "values": [1, 2, 4]}, "default": 1}],
                "strategy": {"strategy": "grid"},
                "expected_keys": ["time_s", "accuracy"]
            },
            "report": {"title": "classify"}
        })
    }

    pub fn manifest(&self) -> SolutionManifest {
        SolutionManifest::from_value(self.manifest_value()).unwrap()
    }

    pub fn manifest_path(&self) -> PathBuf {
        let p = self.root.join("solution.json");
        fs::write(&p, serde_json::to_string_pretty(&self.manifest_value()).unwrap()).unwrap();
        p
    }

    pub fn inject(&self, task: usize) {
        if task == 0 {
            fs::rename(self.root.join("tools/env-tool"), self.root.join("tools/env-tool.off")).unwrap();
        } else {
            fs::write(self.root.join(format!("fail.{task}")), "").unwrap();
        }
    }

    pub fn clear(&self, task: usize) {
        if task == 0 {
            fs::rename(self.root.join("tools/env-tool.off"), self.root.join("tools/env-tool")).unwrap();
        } else {
            fs::remove_file(self.root.join(format!("fail.{task}"))).unwrap();
        }
    }

    /// Successful executions of task `i` so far.
    pub fn count(&self, task: usize) -> usize {
        fs::read_to_string(self.root.join(format!("count.{task}")))
            .map(|s| s.lines().count())
            .unwrap_or(0)
    }
}
