use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AutotuneError, ExperimentRecord, RecordStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Which aggregated statistic an objective reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateField {
    Min,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub key: String,
    pub direction: Direction,
    pub aggregate_field: AggregateField,
}

/// Keys that measure elapsed time default to the `min` statistic.
pub fn is_time_like(key: &str) -> bool {
    key.contains("time") || key.contains("latency") || [
        "_s", "_ms", "_us", "_ns",
    ]
    .iter()
    .any(|suffix| key.ends_with(suffix))
}

impl ObjectiveSpec {
    pub fn new(key: &str, direction: Direction) -> ObjectiveSpec {
        let aggregate_field = if is_time_like(key) {
            AggregateField::Min
        } else {
            AggregateField::Mean
        };
        ObjectiveSpec {
            key: key.to_string(),
            direction,
            aggregate_field,
        }
    }

    /// Parse a comma-separated list of `key:dir[:field]` objectives.
    pub fn parse_list(s: &str) -> Result<Vec<ObjectiveSpec>, AutotuneError> {
        let list = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>, _>>()?;
        if list.is_empty() {
            return Err(AutotuneError::InvalidObjective("no objectives given".into()));
        }
        Ok(list)
    }
}

/// `key:min|max[:min|mean]`; `minimize`/`maximize` are accepted too.
impl FromStr for ObjectiveSpec {
    type Err = AutotuneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AutotuneError::InvalidObjective(s.to_string());
        let mut parts = s.split(':');
        let key = parts.next().filter(|k| !k.is_empty()).ok_or_else(bad)?;
        let direction = match parts.next().ok_or_else(bad)? {
            "min" | "minimize" => Direction::Minimize,
            "max" | "maximize" => Direction::Maximize,
            _ => return Err(bad()),
        };
        let mut obj = ObjectiveSpec::new(key, direction);
        match parts.next() {
            None => {}
            Some("min") => obj.aggregate_field = AggregateField::Min,
            Some("mean") => obj.aggregate_field = AggregateField::Mean,
            Some(_) => return Err(bad()),
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(obj)
    }
}

impl fmt::Display for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Minimize => "min",
            Direction::Maximize => "max",
        };
        let field = match self.aggregate_field {
            AggregateField::Min => "min",
            AggregateField::Mean => "mean",
        };
        write!(f, "{}:{dir}:{field}", self.key)
    }
}

/// The objective's raw value for a record.
pub fn objective_value(record: &ExperimentRecord, obj: &ObjectiveSpec) -> Result<f64, AutotuneError> {
    let missing = || AutotuneError::MissingObjectiveKey {
        experiment_uid: record.experiment_uid.clone(),
        key: obj.key.clone(),
    };
    let stat = record.aggregated.as_ref().and_then(|a| a.get(&obj.key)).ok_or_else(missing)?;
    Ok(match obj.aggregate_field {
        AggregateField::Min => stat.min,
        AggregateField::Mean => stat.mean,
    })
}

/// Objective values oriented so that smaller is always better.
pub fn cost_vector(record: &ExperimentRecord, objectives: &[ObjectiveSpec]) -> Result<Vec<f64>, AutotuneError> {
    objectives
        .iter()
        .map(|o| {
            let v = objective_value(record, o)?;
            Ok(match o.direction {
                Direction::Minimize => v,
                Direction::Maximize => -v,
            })
        })
        .collect()
}

/// `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates_costs(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strictly |= x < y;
    }
    strictly
}

pub fn dominates(a: &ExperimentRecord, b: &ExperimentRecord, objectives: &[ObjectiveSpec]) -> Result<bool, AutotuneError> {
    Ok(dominates_costs(&cost_vector(a, objectives)?, &cost_vector(b, objectives)?))
}

/// Indices of the non-dominated cost vectors, in input order.
///
/// Vectors are visited in lexicographic order; a dominator always sorts
/// strictly before what it dominates, so each vector only needs checking
/// against the survivors found so far.
pub fn pareto_indices(costs: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&i, &j| {
        costs[i]
            .iter()
            .zip(&costs[j])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut survivors: Vec<usize> = Vec::new();
    for i in order {
        if !survivors.iter().any(|&s| dominates_costs(&costs[s], &costs[i])) {
            survivors.push(i);
        }
    }
    survivors.sort_unstable();
    survivors
}

/// The non-dominated ok records, in input order. Failed records are
/// dropped with a warning.
pub fn pareto_filter(records: &[ExperimentRecord], objectives: &[ObjectiveSpec]) -> Result<Vec<ExperimentRecord>, AutotuneError> {
    let ok: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|r| {
            if r.status == RecordStatus::Failed {
                log::warn!("experiment {} failed and is excluded from the frontier", r.experiment_uid);
                false
            } else {
                true
            }
        })
        .collect();
    let costs = ok.iter().map(|r| cost_vector(r, objectives)).collect::<Result<Vec<_>, _>>()?;
    Ok(pareto_indices(&costs).into_iter().map(|i| ok[i].clone()).collect())
}
