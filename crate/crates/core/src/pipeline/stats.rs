use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Characteristics, PipelineError};

/// Summary of one characteristic over the successful repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n − 1 divisor); `None` when n = 1.
    pub stddev: Option<f64>,
    pub n: usize,
}

pub type AggregatedStats = BTreeMap<String, Stat>;

/// Per-key min, max, mean and sample standard deviation. Every sample must
/// carry the same key set.
pub fn aggregate_stats(samples: &[Characteristics]) -> Result<AggregatedStats, PipelineError> {
    let first = samples.first().ok_or(PipelineError::EmptySamples)?;
    let keys: BTreeSet<&String> = first.keys().collect();
    for s in samples {
        let other: BTreeSet<&String> = s.keys().collect();
        if other != keys {
            let diff: Vec<String> = keys.symmetric_difference(&other).map(|k| k.to_string()).collect();
            return Err(PipelineError::InconsistentKeys(diff));
        }
    }
    let mut out = AggregatedStats::new();
    for key in keys {
        // Welford's running mean / M2
        let (mut n, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            let x = s[key];
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
            min = min.min(x);
            max = max.max(x);
        }
        let stddev = (n >= 2).then(|| (m2.max(0.0) / (n - 1) as f64).sqrt());
        out.insert(
            key.clone(),
            Stat {
                min,
                max,
                mean: mean.clamp(min, max),
                stddev,
                n,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(pairs: &[(&str, f64)]) -> Characteristics {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn two_samples_closed_form() {
        let s = aggregate_stats(&[sample(&[("t", 2.0)]), sample(&[("t", 4.0)])]).unwrap();
        let t = &s["t"];
        assert_eq!((t.min, t.max, t.mean, t.n), (2.0, 4.0, 3.0, 2));
        assert!((t.stddev.unwrap() - 1.4142135624).abs() < 1e-10);
    }

    #[test]
    fn single_sample_has_no_stddev() {
        let s = aggregate_stats(&[sample(&[("t", 5.0)])]).unwrap();
        assert_eq!(
            s["t"],
            Stat {
                min: 5.0,
                max: 5.0,
                mean: 5.0,
                stddev: None,
                n: 1
            }
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(aggregate_stats(&[]), Err(PipelineError::EmptySamples)));
        let mixed = [sample(&[("t", 1.0)]), sample(&[("t", 1.0), ("u", 2.0)])];
        assert!(matches!(aggregate_stats(&mixed), Err(PipelineError::InconsistentKeys(k)) if k == ["u"]));
    }

    #[test]
    fn constant_samples_have_zero_spread() {
        let xs: Vec<_> = (0..10).map(|_| sample(&[("t", 0.1)])).collect();
        let t = &aggregate_stats(&xs).unwrap()["t"];
        assert_eq!(t.mean, 0.1);
        assert_eq!(t.stddev, Some(0.0));
    }
}
