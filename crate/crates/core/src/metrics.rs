//! Per-trial scoring and cross-trial summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neghyper::neumaier_sum;
use crate::scores::RankInterval;

/// Outcome of one method on one trial. Coverage fields are `None` when the
/// test items' true ranks are unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub seed: u64,
    pub coverage: Option<f64>,
    pub fcp: Option<f64>,
    pub mean_set_size: f64,
    pub relative_length: f64,
    pub threshold: f64,
}

/// Scores prediction sets against the test items' true absolute ranks.
pub fn score_trial(
    method: &str,
    seed: u64,
    sets: &[RankInterval],
    true_ranks: Option<&[usize]>,
    total: usize,
    threshold: f64,
) -> Result<TrialResult> {
    if sets.is_empty() || total == 0 {
        return Err(Error::invalid("sets", "no test items"));
    }
    let (coverage, fcp) = match true_ranks {
        Some(ranks) => {
            if ranks.len() != sets.len() {
                return Err(Error::invalid(
                    "sets",
                    format!("{} intervals for {} test items", sets.len(), ranks.len()),
                ));
            }
            let missed = sets.iter().zip(ranks).filter(|(s, &r)| !s.contains(r)).count();
            let fcp = missed as f64 / sets.len() as f64;
            let covered = (sets.len() - missed) as f64 / sets.len() as f64;
            (Some(covered), Some(fcp))
        }
        None => (None, None),
    };
    let widths: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
    let mean_set_size = neumaier_sum(&widths) / sets.len() as f64;
    Ok(TrialResult {
        method: method.to_string(),
        seed,
        coverage,
        fcp,
        mean_set_size,
        relative_length: mean_set_size / total as f64,
        threshold,
    })
}

/// Mean and unbiased standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = neumaier_sum(xs) / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
            (neumaier_sum(&sq) / (n - 1.0)).sqrt()
        };
        Some(Moments { mean, std })
    }

    /// Standard error of the mean over `count` samples.
    pub fn standard_error(&self, count: usize) -> f64 {
        self.std / (count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub trials: usize,
    pub single_trial: bool,
    pub coverage_mean: Option<f64>,
    pub coverage_std: Option<f64>,
    pub fcp_mean: Option<f64>,
    pub fcp_std: Option<f64>,
    pub set_size_mean: f64,
    pub rel_length_mean: f64,
    pub rel_length_std: f64,
    /// Mean over finite thresholds only.
    pub threshold_mean: Option<f64>,
    pub threshold_std: Option<f64>,
    pub inf_threshold_count: usize,
}

impl MethodSummary {
    pub fn coverage_se(&self) -> Option<f64> {
        self.coverage_std.map(|s| s / (self.trials as f64).sqrt())
    }

    pub fn fcp_se(&self) -> Option<f64> {
        self.fcp_std.map(|s| s / (self.trials as f64).sqrt())
    }
}

/// Summaries per method, methods in name order. Each method's trials are
/// taken in seed order, so the result does not depend on input order.
pub fn aggregate(trials: &[TrialResult]) -> Result<Vec<MethodSummary>> {
    if trials.is_empty() {
        return Err(Error::invalid("trials", "nothing to aggregate"));
    }
    let mut sorted: Vec<&TrialResult> = trials.iter().collect();
    sorted.sort_by(|a, b| a.method.cmp(&b.method).then(a.seed.cmp(&b.seed)));

    let summaries = sorted
        .chunk_by(|a, b| a.method == b.method)
        .map(|group| summarize(group))
        .collect();
    Ok(summaries)
}

fn summarize(group: &[&TrialResult]) -> MethodSummary {
    let pick = |f: fn(&TrialResult) -> Option<f64>| -> Option<Vec<f64>> { group.iter().map(|t| f(t)).collect() };
    let coverage = pick(|t| t.coverage).and_then(|v| Moments::of(&v));
    let fcp = pick(|t| t.fcp).and_then(|v| Moments::of(&v));
    let sizes: Vec<f64> = group.iter().map(|t| t.mean_set_size).collect();
    let rel: Vec<f64> = group.iter().map(|t| t.relative_length).collect();
    let finite: Vec<f64> = group.iter().map(|t| t.threshold).filter(|t| t.is_finite()).collect();
    let rel_moments = Moments::of(&rel).expect("non-empty group");
    let threshold = Moments::of(&finite);
    MethodSummary {
        name: group[0].method.clone(),
        trials: group.len(),
        single_trial: group.len() == 1,
        coverage_mean: coverage.map(|m| m.mean),
        coverage_std: coverage.map(|m| m.std),
        fcp_mean: fcp.map(|m| m.mean),
        fcp_std: fcp.map(|m| m.std),
        set_size_mean: Moments::of(&sizes).expect("non-empty group").mean,
        rel_length_mean: rel_moments.mean,
        rel_length_std: rel_moments.std,
        threshold_mean: threshold.map(|m| m.mean),
        threshold_std: threshold.map(|m| m.std),
        inf_threshold_count: group.len() - finite.len(),
    }
}
