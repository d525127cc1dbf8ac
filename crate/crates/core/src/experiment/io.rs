//! File formats.
//!
//! Population CSV: `item_id,split,y_true` with split `cal` or `test`; test rows
//! may leave `y_true` empty, in which case no coverage can be scored.
//! Predictions CSV: `item_id,pred`, integer ranks for RA, reals for VA.
//! Result CSVs use a header row and write infinite thresholds as `inf`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde_json::json;

use super::{ExperimentOutput, PointOutput, Timing};
use crate::error::{Error, Result};
use crate::metrics::{MethodSummary, TrialResult};
use crate::population::{rank_view, CalibrationView, Jitter, Population, RankView, Split};
use crate::scores::{Predictions, ScoreKind};
use crate::seed::{purpose, rng_for};

/// A population and predictions read from disk.
#[derive(Debug, Clone)]
pub struct ExternalData {
    pub item_ids: Vec<String>,
    pub splits: Vec<Split>,
    pub values: Vec<Option<f64>>,
    pub view: CalibrationView,
    /// Present when every test row has `y_true`.
    pub truth: Option<RankView>,
    pub preds: Predictions,
}

impl ExternalData {
    pub fn population(&self) -> Option<Population> {
        let values: Option<Vec<f64>> = self.values.iter().copied().collect();
        Population::new(values?, self.splits.clone()).ok()
    }
}

fn column(headers: &csv::StringRecord, name: &str, source: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::data(source, 1, format!("missing column `{name}`")))
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Reads and cross-checks a population file and a predictions file.
pub fn load_external(population: &Path, predictions: &Path, kind: ScoreKind) -> Result<ExternalData> {
    let pop_name = population.display().to_string();
    let mut reader = csv::Reader::from_path(population)?;
    let headers = reader.headers()?.clone();
    let (id_col, split_col, y_col) = (
        column(&headers, "item_id", &pop_name)?,
        column(&headers, "split", &pop_name)?,
        column(&headers, "y_true", &pop_name)?,
    );

    let mut item_ids = Vec::new();
    let mut splits = Vec::new();
    let mut values = Vec::new();
    let mut index = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let id = record.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::data(&pop_name, line, "empty item_id"));
        }
        if index.insert(id.clone(), item_ids.len()).is_some() {
            return Err(Error::data(&pop_name, line, format!("duplicate item_id `{id}`")));
        }
        let split = match record.get(split_col).unwrap_or("").trim() {
            "cal" | "calibration" => Split::Calibration,
            "test" => Split::Test,
            other => return Err(Error::data(&pop_name, line, format!("split must be cal or test, got `{other}`"))),
        };
        let raw = record.get(y_col).unwrap_or("").trim();
        let value = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::data(&pop_name, line, format!("y_true `{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::data(&pop_name, line, "y_true must be finite"));
            }
            Some(v)
        };
        if split == Split::Calibration && value.is_none() {
            return Err(Error::data(&pop_name, line, "calibration rows need y_true"));
        }
        item_ids.push(id);
        splits.push(split);
        values.push(value);
    }
    let total = item_ids.len();
    let n = splits.iter().filter(|s| **s == Split::Calibration).count();
    if n == 0 || n == total {
        return Err(Error::data(&pop_name, 0, format!("need calibration and test rows, got n={n}, N={total}")));
    }

    let preds = load_predictions(predictions, &index, kind)?;

    let test_known = splits
        .iter()
        .zip(&values)
        .filter(|(s, v)| **s == Split::Test && v.is_some())
        .count();
    let truth = if test_known == total - n {
        let pop = Population::new(values.iter().map(|v| v.expect("all known")).collect(), splits.clone())?;
        Some(rank_view(&pop)?)
    } else if test_known == 0 {
        None
    } else {
        return Err(Error::data(&pop_name, 0, "y_true given for some test rows but not all"));
    };

    let view = match &truth {
        Some(rv) => rv.observed().clone(),
        None => calibration_only_view(&splits, &values)?,
    };
    Ok(ExternalData {
        item_ids,
        splits,
        values,
        view,
        truth,
        preds,
    })
}

fn calibration_only_view(splits: &[Split], values: &[Option<f64>]) -> Result<CalibrationView> {
    let calibration: Vec<usize> = (0..splits.len()).filter(|&i| splits[i] == Split::Calibration).collect();
    let mut order = calibration.clone();
    order.sort_by(|&a, &b| values[a].expect("calibration").total_cmp(&values[b].expect("calibration")));
    if order.windows(2).any(|w| values[w[0]] == values[w[1]]) {
        return Err(Error::TiesDetected);
    }
    let mut rel = vec![0; splits.len()];
    for (pos, &i) in order.iter().enumerate() {
        rel[i] = pos + 1;
    }
    let test = (0..splits.len()).filter(|&i| splits[i] == Split::Test).collect();
    let rel_ranks = calibration.iter().map(|&i| rel[i]).collect();
    CalibrationView::new(splits.len(), calibration, rel_ranks, test)
}

fn load_predictions(path: &Path, index: &HashMap<String, usize>, kind: ScoreKind) -> Result<Predictions> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let (id_col, pred_col) = (column(&headers, "item_id", &name)?, column(&headers, "pred", &name)?);
    let total = index.len();
    let mut raw: Vec<Option<(usize, String)>> = vec![None; total];
    for record in reader.records() {
        let record = record?;
        let line = line_of(&record);
        let id = record.get(id_col).unwrap_or("").trim();
        let &item = index
            .get(id)
            .ok_or_else(|| Error::data(&name, line, format!("item_id `{id}` not in population")))?;
        if raw[item].is_some() {
            return Err(Error::data(&name, line, format!("duplicate item_id `{id}`")));
        }
        raw[item] = Some((line, record.get(pred_col).unwrap_or("").trim().to_string()));
    }
    let entries: Vec<(usize, String)> = raw
        .into_iter()
        .enumerate()
        .map(|(i, e)| e.ok_or_else(|| Error::data(&name, 0, format!("no prediction for population row {}", i + 1))))
        .collect::<Result<_>>()?;

    match kind {
        ScoreKind::Ra => {
            let ranks = entries
                .iter()
                .map(|(line, text)| match text.parse::<usize>() {
                    Ok(r) if (1..=total).contains(&r) => Ok(r),
                    Ok(r) => Err(Error::data(&name, *line, format!("rank {r} outside [1, {total}]"))),
                    Err(_) => Err(Error::data(&name, *line, format!("RA prediction `{text}` is not an integer rank"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Predictions::ra(ranks)
        }
        ScoreKind::Va => {
            let values = entries
                .iter()
                .map(|(line, text)| match text.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::data(&name, *line, format!("VA prediction `{text}` is not a finite number"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Predictions::va_jittered(values, &Jitter::default(), &mut rng_for(0, &[purpose::JITTER]))
        }
    }
}

/// Writes `item_id,split,y_true` with ids `0..N`.
pub fn write_population_csv(path: &Path, pop: &Population) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item_id", "split", "y_true"])?;
    for (i, (v, s)) in pop.values().iter().zip(pop.assignment()).enumerate() {
        w.write_record([i.to_string(), s.as_str().to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `item_id,pred` with ids `0..N`.
pub fn write_predictions_csv(path: &Path, preds: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["item_id", "pred"])?;
    for i in 0..preds.len() {
        let pred = match preds {
            Predictions::Ra { ranks } => ranks[i].to_string(),
            Predictions::Va { values, .. } => values[i].to_string(),
        };
        w.write_record([i.to_string(), pred])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else {
        t.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `seed,method,coverage,fcp,rel_length,threshold`.
pub fn write_trials_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "method", "coverage", "fcp", "rel_length", "threshold"])?;
    for t in trials {
        w.write_record([
            t.seed.to_string(),
            t.method.clone(),
            fmt_opt(t.coverage),
            fmt_opt(t.fcp),
            t.relative_length.to_string(),
            fmt_threshold(t.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall times, kept apart from the deterministic outputs.
pub fn write_timings_csv(path: &Path, output: &ExperimentOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis_value", "seed", "method", "stage", "seconds"])?;
    for point in &output.points {
        let axis = fmt_opt(point.axis_value);
        for (method, secs) in &point.envelope_fit_seconds {
            w.write_record([axis.clone(), String::new(), method.clone(), "envelope_fit".into(), secs.to_string()])?;
        }
        for Timing { seed, method, seconds } in &point.timings {
            w.write_record([axis.clone(), seed.to_string(), method.clone(), "trial".into(), seconds.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn summary_json(s: &MethodSummary) -> serde_json::Value {
    json!({
        "name": s.name,
        "trials": s.trials,
        "single_trial": s.single_trial,
        "coverage_mean": s.coverage_mean,
        "coverage_std": s.coverage_std,
        "fcp_mean": s.fcp_mean,
        "fcp_std": s.fcp_std,
        "set_size_mean": s.set_size_mean,
        "rel_length_mean": s.rel_length_mean,
        "rel_length_std": s.rel_length_std,
        "threshold_mean": s.threshold_mean,
        "threshold_std": s.threshold_std,
        "inf_threshold_count": s.inf_threshold_count,
    })
}

fn point_json(p: &PointOutput) -> serde_json::Value {
    json!({
        "axis_value": p.axis_value,
        "n": p.n,
        "m": p.m,
        "alpha": p.alpha,
        "model_sigma": p.model_sigma,
        "methods": p.summaries.iter().map(summary_json).collect::<Vec<_>>(),
    })
}

/// Aggregate report: one point at top level, or a `points` array for sweeps.
pub fn report_json(output: &ExperimentOutput) -> serde_json::Value {
    let config = serde_json::to_value(&output.config).unwrap_or(serde_json::Value::Null);
    match output.axis {
        None => {
            let mut value = point_json(&output.points[0]);
            value["config"] = config;
            value
        }
        Some(axis) => json!({
            "config": config,
            "axis": axis.key(),
            "points": output.points.iter().map(point_json).collect::<Vec<_>>(),
        }),
    }
}

/// Long format `axis_value,method,metric,mean,std`.
pub fn write_sweep_csv(path: &Path, output: &ExperimentOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis_value", "method", "metric", "mean", "std"])?;
    for point in &output.points {
        let axis = fmt_opt(point.axis_value);
        for s in &point.summaries {
            let rows = [
                ("coverage", s.coverage_mean, s.coverage_std),
                ("fcp", s.fcp_mean, s.fcp_std),
                ("rel_length", Some(s.rel_length_mean), Some(s.rel_length_std)),
                ("threshold", s.threshold_mean, s.threshold_std),
            ];
            for (metric, mean, std) in rows {
                w.write_record([axis.clone(), s.name.clone(), metric.into(), fmt_opt(mean), fmt_opt(std)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `seed,method,item_id,lo,hi` for each test item of an external run.
pub fn write_sets_csv(path: &Path, data: &ExternalData, point: &PointOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "method", "item_id", "lo", "hi"])?;
    for trial in point.sets.iter().flatten() {
        for (&item, set) in data.view.test_items().iter().zip(&trial.sets) {
            w.write_record([
                trial.seed.to_string(),
                trial.method.clone(),
                data.item_ids[item].clone(),
                set.lo.to_string(),
                set.hi.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes every output of a run into `dir`.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput, external: Option<&ExternalData>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match output.axis {
        None => write_trials_csv(&dir.join("trials.csv"), &output.points[0].trials)?,
        Some(_) => {
            write_sweep_csv(&dir.join("sweep.csv"), output)?;
            for (i, point) in output.points.iter().enumerate() {
                write_trials_csv(&dir.join(format!("trials_{i}.csv")), &point.trials)?;
            }
        }
    }
    write_timings_csv(&dir.join("timings.csv"), output)?;
    let mut f = File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, &report_json(output))?;
    writeln!(f)?;
    if let Some(data) = external {
        write_sets_csv(&dir.join("sets.csv"), data, &output.points[0])?;
    }
    Ok(())
}
