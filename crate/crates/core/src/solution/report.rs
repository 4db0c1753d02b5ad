use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MergedRecord, ResultBundle, SolutionError};
use crate::autotune::{cost_vector, objective_value, pareto_indices, AutotuneError, Direction, ExperimentRecord, ObjectiveSpec, Point, RecordStatus};
use crate::json as cjson;
use crate::pipeline::value_to_arg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected md or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreboardRow {
    pub rank: usize,
    pub source: String,
    pub experiment_uid: String,
    pub point: Point,
    /// objective key → value of its aggregate field
    pub values: BTreeMap<String, f64>,
    /// objective key → measured − reference
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<BTreeMap<String, f64>>,
    pub on_frontier: bool,
}

fn reference_for<'a>(
    record: &ExperimentRecord,
    reference: &'a [&'a ExperimentRecord],
    best: Option<&'a ExperimentRecord>,
) -> Option<&'a ExperimentRecord> {
    reference.iter().copied().find(|r| r.point == record.point).or(best)
}

/// Build the scoreboard rows: ok records only, sorted best-first on the first
/// objective (ties keep input order), frontier flags from `pareto_indices`.
pub fn scoreboard(
    records: &[MergedRecord],
    objectives: &[ObjectiveSpec],
    reference: Option<&ResultBundle>,
) -> Result<Vec<ScoreboardRow>, SolutionError> {
    if objectives.is_empty() {
        return Err(AutotuneError::InvalidObjective("no objectives given".into()).into());
    }
    for (i, o) in objectives.iter().enumerate() {
        if objectives[..i].iter().any(|p| p.key == o.key) {
            return Err(AutotuneError::InvalidObjective(format!("`{}` listed twice", o.key)).into());
        }
    }
    let ok: Vec<&MergedRecord> = records.iter().filter(|m| m.record.status == RecordStatus::Ok).collect();
    if ok.len() < records.len() {
        log::warn!("{} failed records are not ranked", records.len() - ok.len());
    }
    let costs = ok
        .iter()
        .map(|m| cost_vector(&m.record, objectives))
        .collect::<Result<Vec<_>, _>>()?;
    let mut frontier = vec![false; ok.len()];
    for i in pareto_indices(&costs) {
        frontier[i] = true;
    }

    let ref_ok: Vec<&ExperimentRecord> = reference
        .map(|b| b.records.iter().filter(|r| r.status == RecordStatus::Ok).collect())
        .unwrap_or_default();
    let ref_costs = ref_ok
        .iter()
        .map(|r| cost_vector(r, &objectives[..1]))
        .collect::<Result<Vec<_>, _>>()?;
    let ref_best = (0..ref_ok.len())
        .min_by(|&a, &b| ref_costs[a][0].total_cmp(&ref_costs[b][0]).then(a.cmp(&b)))
        .map(|i| ref_ok[i]);

    let mut order: Vec<usize> = (0..ok.len()).collect();
    order.sort_by(|&a, &b| costs[a][0].total_cmp(&costs[b][0]));
    let mut rows = Vec::with_capacity(ok.len());
    for (rank, i) in order.into_iter().enumerate() {
        let m = ok[i];
        let mut values = BTreeMap::new();
        for o in objectives {
            values.insert(o.key.clone(), objective_value(&m.record, o)?);
        }
        let delta = match reference {
            None => None,
            Some(_) => match reference_for(&m.record, &ref_ok, ref_best) {
                None => None,
                Some(r) => {
                    let mut d = BTreeMap::new();
                    for o in objectives {
                        d.insert(o.key.clone(), values[&o.key] - objective_value(r, o)?);
                    }
                    Some(d)
                }
            },
        };
        rows.push(ScoreboardRow {
            rank: rank + 1,
            source: m.source.clone(),
            experiment_uid: m.record.experiment_uid.clone(),
            point: m.record.point.clone(),
            values,
            delta,
            on_frontier: frontier[i],
        });
    }
    Ok(rows)
}

/// Render a scoreboard of `records` as a markdown table or canonical JSON rows.
pub fn render_report(
    records: &[MergedRecord],
    objectives: &[ObjectiveSpec],
    format: ReportFormat,
    reference: Option<&ResultBundle>,
    title: &str,
) -> Result<String, SolutionError> {
    let rows = scoreboard(records, objectives, reference)?;
    Ok(render_rows(&rows, objectives, format, title, reference.is_some()))
}

pub fn parse_rows(json: &str) -> Result<Vec<ScoreboardRow>, SolutionError> {
    serde_json::from_str(json).map_err(|e| SolutionError::InvalidBundle(format!("scoreboard rows: {e}")))
}

fn point_summary(point: &Point) -> String {
    point
        .iter()
        .map(|(ptr, v)| {
            let name = ptr.rsplit('/').next().unwrap_or(ptr);
            format!("{name}={}", value_to_arg(v))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

pub fn render_rows(rows: &[ScoreboardRow], objectives: &[ObjectiveSpec], format: ReportFormat, title: &str, with_delta: bool) -> String {
    if format == ReportFormat::Json {
        return cjson::to_canonical_string(rows).expect("rows serialize");
    }
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "# {title}\n");
    }
    let mut header = vec!["rank".to_string(), "source".into(), "experiment".into(), "point".into()];
    for o in objectives {
        let dir = match o.direction {
            Direction::Minimize => "min",
            Direction::Maximize => "max",
        };
        header.push(format!("{} ({dir})", o.key));
    }
    if with_delta {
        header.extend(objectives.iter().map(|o| format!("Δ {}", o.key)));
    }
    header.push("frontier".into());
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let mut cells = vec![
            r.rank.to_string(),
            r.source.clone(),
            r.experiment_uid.clone(),
            point_summary(&r.point),
        ];
        cells.extend(objectives.iter().map(|o| r.values.get(&o.key).map(|v| fmt_num(*v)).unwrap_or_default()));
        if with_delta {
            cells.extend(objectives.iter().map(|o| {
                r.delta
                    .as_ref()
                    .and_then(|d| d.get(&o.key))
                    .map(|v| format!("{v:+}"))
                    .unwrap_or_else(|| "n/a".into())
            }));
        }
        cells.push(if r.on_frontier { "yes" } else { "" }.into());
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}
