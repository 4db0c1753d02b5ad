use std::fs;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Characteristics, PipelineError, RunResult};

pub const DEFAULT_RESULT_FILE: &str = "ck-result.json";
pub const WALL_TIME_KEY: &str = "wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractMode {
    #[default]
    ResultFile,
    StdoutRegex,
}

fn default_result_file() -> String {
    DEFAULT_RESULT_FILE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    #[serde(default)]
    pub mode: ExtractMode,
    #[serde(default = "default_result_file")]
    pub result_file: String,
    /// characteristic name → regex with one numeric capture group
    #[serde(default)]
    pub patterns: std::collections::BTreeMap<String, String>,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec {
            mode: ExtractMode::ResultFile,
            result_file: default_result_file(),
            patterns: Default::default(),
        }
    }
}

fn name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z][a-z0-9_]*$").unwrap())
}

pub fn is_characteristic_name(name: &str) -> bool {
    name_re().is_match(name)
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: String| Err(PipelineError::InvalidProgram(m));
        if self.result_file.is_empty() || self.result_file.contains('/') || self.result_file.contains("..") {
            return invalid(format!("result_file `{}` must be a plain file name", self.result_file));
        }
        if self.mode == ExtractMode::StdoutRegex && self.patterns.is_empty() {
            return invalid("stdout-regex extractor without patterns".into());
        }
        for (name, pat) in &self.patterns {
            if !is_characteristic_name(name) {
                return invalid(format!("characteristic name `{name}` does not match [a-z][a-z0-9_]*"));
            }
            let re = Regex::new(pat).map_err(|e| PipelineError::InvalidProgram(format!("pattern `{name}`: {e}")))?;
            if re.captures_len() != 2 {
                return invalid(format!("pattern `{name}` must have exactly one capture group"));
            }
        }
        Ok(())
    }
}

fn check_finite(name: &str, x: f64) -> Result<f64, PipelineError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(PipelineError::NonFiniteValue(name.to_string()))
    }
}

/// Read the characteristics a successful repetition produced. `wall_time_s`
/// is always added from the measured wall time.
pub fn extract_characteristics(result: &RunResult, spec: &ExtractorSpec) -> Result<Characteristics, PipelineError> {
    if !result.succeeded() {
        return Err(PipelineError::RunFailed {
            index: result.index,
            exit_code: result.exit_code,
            timed_out: result.timed_out,
        });
    }
    let mut out = Characteristics::new();
    match spec.mode {
        ExtractMode::ResultFile => {
            let path = result.run_dir.join(&spec.result_file);
            let text = fs::read_to_string(&path).map_err(|_| PipelineError::MissingResultFile(path.clone()))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| PipelineError::InvalidResultFile(format!("{}: {e}", path.display())))?;
            let Value::Object(map) = doc else {
                return Err(PipelineError::InvalidResultFile(format!("{} is not a JSON object", path.display())));
            };
            for (name, v) in map {
                if !is_characteristic_name(&name) {
                    return Err(PipelineError::InvalidResultFile(format!("bad characteristic name `{name}`")));
                }
                let x = match &v {
                    Value::Number(n) => n.as_f64().ok_or_else(|| PipelineError::NonFiniteValue(name.clone()))?,
                    // JSON has no NaN/Infinity literals; programs emit them as strings
                    Value::String(s) => match s.trim().parse::<f64>() {
                        Ok(x) if !x.is_finite() => return Err(PipelineError::NonFiniteValue(name)),
                        _ => {
                            return Err(PipelineError::InvalidResultFile(format!(
                                "`{name}` is a string, expected a number"
                            )))
                        }
                    },
                    other => {
                        return Err(PipelineError::InvalidResultFile(format!("`{name}` is {other}, expected a number")))
                    }
                };
                out.insert(name.clone(), check_finite(&name, x)?);
            }
        }
        ExtractMode::StdoutRegex => {
            let bytes = fs::read(&result.stdout_path).map_err(|source| PipelineError::Io {
                path: result.stdout_path.clone(),
                source,
            })?;
            let stdout = String::from_utf8_lossy(&bytes);
            for (name, pat) in &spec.patterns {
                let re = Regex::new(pat).map_err(|e| PipelineError::InvalidProgram(e.to_string()))?;
                let cap = re
                    .captures(&stdout)
                    .and_then(|c| c.get(1))
                    .ok_or_else(|| PipelineError::PatternNotMatched(name.clone()))?;
                let x: f64 = cap
                    .as_str()
                    .trim()
                    .parse()
                    .map_err(|_| PipelineError::PatternNotMatched(name.clone()))?;
                out.insert(name.clone(), check_finite(name, x)?);
            }
        }
    }
    out.insert(WALL_TIME_KEY.to_string(), check_finite(WALL_TIME_KEY, result.wall_time_s)?);
    Ok(out)
}
