//! `ck` command dispatch. Every invocation yields one JSON envelope:
//! `{"return": <code>, "error"?: <message>, ...payload}`.
//!
//! Return codes: 0 success, 1 domain error, 2 usage error, 3 I/O failure.

mod commands;
mod errors;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

pub use errors::{CliError, CODE_DOMAIN, CODE_IO, CODE_USAGE};

#[derive(Debug, Parser)]
#[command(name = "ck", version, about = "Portable component registry, pipelines and benchmarking", args_override_self = true)]
pub struct Cli {
    /// Suppress human-readable logs on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// JSON object whose keys override command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub json_in: Option<PathBuf>,
    /// Repository root; repeatable. Searched before `CK_REPOS`.
    #[arg(long = "repo", global = true, value_name = "PATH")]
    pub repos: Vec<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repository management.
    #[command(subcommand)]
    Repo(RepoCmd),
    /// Add an entry: `ck add <kind>[:<alias>] --tags a,b --meta <file|json>`.
    Add(AddArgs),
    /// Look up an entry by `<kind>:<alias-or-uid>`.
    Find { target: String },
    /// Entries whose tags include every given tag.
    Search {
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        #[arg(long)]
        kind: Option<String>,
    },
    /// Probe for a tool with a detection plugin and register what is found.
    Detect {
        soft: String,
        #[arg(long = "root")]
        roots: Vec<PathBuf>,
    },
    /// Install a package and register its environment.
    Install {
        package: String,
        #[arg(long)]
        version: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Environment entries.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Run a program once at one design point.
    Run(RunArgs),
    /// Explore a design space and record experiments.
    Autotune(AutotuneArgs),
    /// Pareto frontier of recorded experiments.
    Pareto {
        #[arg(long)]
        objectives: String,
        /// Restrict to experiments of this program (alias or uid).
        #[arg(long)]
        experiments: Option<String>,
    },
    /// Scoreboard of recorded experiments or merged bundles.
    Report(ReportArgs),
    /// Solution manifests.
    #[command(subcommand)]
    Solution(SolutionCmd),
    /// Result bundles.
    #[command(subcommand)]
    Bundle(BundleCmd),
}

#[derive(Debug, Subcommand)]
pub enum RepoCmd {
    Init {
        path: PathBuf,
        #[arg(long)]
        alias: String,
    },
}

#[derive(Debug, Args)]
pub struct AddArgs {
    pub target: String,
    #[arg(long, value_delimiter = ',')]
    pub tags: Vec<String>,
    /// Meta document: a file path or inline JSON.
    #[arg(long)]
    pub meta: Option<String>,
    /// Directory copied into the entry as its payload.
    #[arg(long)]
    pub payload: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EnvCmd {
    List {
        /// Also render activation scripts in this dialect (posix-shell, windows-batch).
        #[arg(long)]
        script: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub program: String,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Design point: a file path or inline JSON object of pointer → value.
    #[arg(long)]
    pub point: Option<String>,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AutotuneArgs {
    pub program: String,
    /// Design space: a file path or inline JSON array.
    #[arg(long)]
    pub space: Option<String>,
    #[arg(long, default_value = "grid")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "md")]
    pub format: String,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Report these bundles instead of the registry's experiments.
    #[arg(long = "bundle")]
    pub bundles: Vec<PathBuf>,
    #[arg(long, default_value = "wall_time_s:min")]
    pub objectives: String,
    #[arg(long, default_value = "")]
    pub title: String,
}

#[derive(Debug, Subcommand)]
pub enum SolutionCmd {
    Init { manifest: PathBuf },
    Benchmark {
        name: String,
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BundleCmd {
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Also write the merged records to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Turn a JSON input object into long flags appended after argv, so its
/// values override the command line. Strings, numbers → `--key=value`;
/// arrays → repeated flags; `true` → bare flag; objects → inline JSON.
pub fn json_to_flags(input: &Map<String, Value>) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (k, v) in input {
        let flag = format!("--{}", k.replace('_', "-"));
        let scalar = |v: &Value| -> Result<String, CliError> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                Value::Object(_) | Value::Array(_) => Ok(v.to_string()),
                other => Err(CliError::usage(format!("unsupported value for `{k}`: {other}"))),
            }
        };
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) if k != "space" => {
                for item in items {
                    out.push(format!("{flag}={}", scalar(item)?));
                }
            }
            other => out.push(format!("{flag}={}", scalar(other)?)),
        }
    }
    Ok(out)
}

/// Drop argv occurrences of flags that a JSON input supplies, so repeatable
/// flags are replaced rather than appended to.
fn strip_flags(args: &mut Vec<String>, input: &Map<String, Value>) {
    let mut out = Vec::with_capacity(args.len());
    let mut it = std::mem::take(args).into_iter();
    while let Some(a) = it.next() {
        let hit = input.iter().find(|(k, _)| {
            let flag = format!("--{}", k.replace('_', "-"));
            a == flag || a.starts_with(&format!("{flag}="))
        });
        match hit {
            Some((_, v)) => {
                if !a.contains('=') && !v.is_boolean() && !v.is_null() {
                    it.next();
                }
            }
            None => out.push(a),
        }
    }
    *args = out;
}

fn envelope(result: Result<Map<String, Value>, CliError>) -> Value {
    match result {
        Ok(mut payload) => {
            payload.insert("return".into(), json!(0));
            Value::Object(payload)
        }
        Err(e) => {
            let mut payload = e.payload;
            payload.insert("return".into(), json!(e.code));
            payload.insert("error".into(), json!(e.message));
            Value::Object(payload)
        }
    }
}

/// Parse and execute one command. `argv[0]` is the program name.
pub fn dispatch(argv: &[String], stdin_json: Option<Value>) -> Value {
    envelope(try_dispatch(argv, stdin_json))
}

fn try_dispatch(argv: &[String], stdin_json: Option<Value>) -> Result<Map<String, Value>, CliError> {
    let mut args = argv.to_vec();
    let mut inputs: Vec<Value> = Vec::new();
    if let Some(path) = json_in_path(argv) {
        let v = commands::read_json_arg(&path)?;
        inputs.push(v);
    }
    inputs.extend(stdin_json);
    for input in inputs {
        let Value::Object(map) = input else {
            return Err(CliError::usage("JSON input must be an object"));
        };
        strip_flags(&mut args, &map);
        args.extend(json_to_flags(&map)?);
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let mut m = Map::new();
                    m.insert("help".into(), json!(e.render().to_string()));
                    Ok(m)
                }
                _ => Err(CliError::usage(e.render().to_string().trim_end())),
            };
        }
    };
    commands::run(cli)
}

fn json_in_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--json-in" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--json-in=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Process exit code for an envelope: its `return`, clamped to 0..=255.
pub fn exit_code(envelope: &Value) -> i32 {
    envelope["return"].as_i64().unwrap_or(CODE_DOMAIN as i64).clamp(0, 255) as i32
}
