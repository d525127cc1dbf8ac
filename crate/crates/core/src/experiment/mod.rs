//! Benchmark harness: trials over synthetic or external data, method runs,
//! scoring and sweeps.
//!
//! Trial `t` draws all of its randomness from streams keyed by
//! `derive_seed(base, [t])` and a purpose id, and results are merged by trial
//! index, so outputs do not depend on the worker count.

pub mod config;
pub mod io;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_population, noisy_value_ranker, random_unit_weight, train_linear_ranker, with_output, Link,
    SyntheticConfig,
};
use crate::dcr::{dcr_mixture_with, dcr_threshold, mdcr_threshold, prediction_sets, Threshold};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, score_trial, MethodSummary, TrialResult};
use crate::neghyper::NegHypergeomFamily;
use crate::population::{has_ties, rank_view, split_population, CalibrationView, Jitter, Population, RankView};
use crate::scores::{Predictions, RankInterval};
use crate::seed::{derive_seed, purpose, rng_for};
use crate::tcpr::{oracle_threshold, proxy_scores, tcpr_threshold, true_scores, Envelope, EnvelopeKind};

pub use config::{Axis, ExperimentConfig, GeneratorKind, MethodSpec, RankerChoice};
pub use io::{load_external, ExternalData};

/// Wall time of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub method: String,
    pub seconds: f64,
}

/// Results at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutput {
    pub axis_value: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub model_sigma: f64,
    /// Trial-major, methods in configured order.
    pub trials: Vec<TrialResult>,
    pub timings: Vec<Timing>,
    pub envelope_fit_seconds: BTreeMap<String, f64>,
    pub summaries: Vec<MethodSummary>,
    /// Per-trial prediction sets, kept only for external data.
    pub sets: Option<Vec<TrialSets>>,
}

impl PointOutput {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.name == method)
    }

    /// Thresholds of `method` in trial order.
    pub fn thresholds(&self, method: &str) -> Vec<f64> {
        self.trials.iter().filter(|t| t.method == method).map(|t| t.threshold).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSets {
    pub seed: u64,
    pub method: String,
    pub sets: Vec<RankInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub axis: Option<Axis>,
    pub points: Vec<PointOutput>,
}

/// What one trial hands to the methods. `truth` is only read by the oracle
/// and by scoring.
pub struct TrialInput<'a> {
    pub view: &'a CalibrationView,
    pub truth: Option<&'a RankView>,
    pub preds: &'a Predictions,
}

/// Per-grid-point state shared by all trials.
struct PointContext {
    alpha: f64,
    delta: Option<f64>,
    family: Option<NegHypergeomFamily>,
    envelopes: BTreeMap<EnvelopeKind, Envelope>,
}

/// Runs every grid point of `cfg` (a single point when nothing is swept).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Invariant(format!("cannot start worker pool: {e}")))?;
    let external = match cfg.generator {
        GeneratorKind::External => Some(load_external(
            cfg.population.as_deref().expect("validated"),
            cfg.predictions.as_deref().expect("validated"),
            cfg.score,
        )?),
        _ => None,
    };
    let axis = cfg.sweep_axis()?;
    let points = cfg
        .grid()?
        .into_iter()
        .map(|(value, point)| {
            let axis_value = axis.map(|_| value);
            pool.install(|| run_point(&point, axis_value, external.as_ref()))
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput {
        config: cfg.clone(),
        axis,
        points,
    })
}

/// Like [`run_experiment`] but insists on exactly one swept axis.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    if cfg.sweep_axis()?.is_none() {
        return Err(Error::config("alpha, n, m, model_sigma", "a sweep needs one axis with several values"));
    }
    run_experiment(cfg)
}

fn run_point(cfg: &ExperimentConfig, axis_value: Option<f64>, external: Option<&ExternalData>) -> Result<PointOutput> {
    let alpha = cfg.alpha[0];
    let (n, m) = match external {
        Some(data) => (data.view.n(), data.view.m()),
        None => (cfg.n[0], cfg.m[0]),
    };

    let mut envelope_fit_seconds = BTreeMap::new();
    let mut envelopes = BTreeMap::new();
    for method in &cfg.methods {
        if let MethodSpec::Tcpr(kind) = *method {
            if envelopes.contains_key(&kind) {
                continue;
            }
            let tcpr = cfg.tcpr_config(alpha)?;
            let seed = derive_seed(cfg.seed, &[purpose::ENVELOPE, n as u64, m as u64, method.stream_id()]);
            let start = Instant::now();
            let env = Envelope::fit(kind, n, m, &tcpr, seed)?;
            envelope_fit_seconds.insert(method.name(), start.elapsed().as_secs_f64());
            envelopes.insert(kind, env);
        }
    }
    let ctx = PointContext {
        alpha,
        delta: cfg.uses_tcpr().then(|| cfg.tcpr_config(alpha).map(|t| t.delta)).transpose()?,
        family: cfg
            .methods
            .contains(&MethodSpec::Dcr)
            .then(|| NegHypergeomFamily::new(n, m))
            .transpose()?,
        envelopes,
    };

    let weight = model_weight(cfg);

    let per_trial: Vec<(Vec<TrialResult>, Vec<Timing>, Vec<TrialSets>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = derive_seed(cfg.seed, &[t as u64]);
            match external {
                Some(data) => {
                    let input = TrialInput {
                        view: &data.view,
                        truth: data.truth.as_ref(),
                        preds: &data.preds,
                    };
                    run_methods(cfg, &ctx, &input, trial_seed, true)
                }
                None => {
                    let data = synthetic_data(cfg, &weight, trial_seed)?;
                    let view = rank_view(&data.population)?;
                    let input = TrialInput {
                        view: view.observed(),
                        truth: Some(&view),
                        preds: &data.preds,
                    };
                    run_methods(cfg, &ctx, &input, trial_seed, false)
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut trials = Vec::new();
    let mut timings = Vec::new();
    let mut sets = Vec::new();
    for (r, t, s) in per_trial {
        trials.extend(r);
        timings.extend(t);
        sets.extend(s);
    }
    let summaries = aggregate(&trials)?;
    Ok(PointOutput {
        axis_value,
        n,
        m,
        alpha,
        model_sigma: cfg.model_sigma[0],
        trials,
        timings,
        envelope_fit_seconds,
        summaries,
        sets: external.map(|_| sets),
    })
}

/// One synthetic draw: the evaluated population (training rows excluded)
/// and the ranker's predictions for it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub population: Population,
    pub preds: Predictions,
    /// Ridge used by the least-squares ranker.
    pub ridge: Option<f64>,
}

/// The experiment-level weight vector of the synthetic model.
pub fn model_weight(cfg: &ExperimentConfig) -> Vec<f64> {
    match cfg.link() {
        Link::Linear => random_unit_weight(cfg.feature_dim(), &mut rng_for(cfg.seed, &[purpose::WEIGHT])),
        Link::Logistic => vec![1.0; cfg.feature_dim()],
    }
}

/// Population, split and predictions of one synthetic trial.
pub fn synthetic_data(cfg: &ExperimentConfig, weight: &[f64], trial_seed: u64) -> Result<SyntheticData> {
    let (n, m) = (cfg.n[0], cfg.m[0]);
    let train = cfg.train_count(n, m);
    let model = SyntheticConfig {
        dim: weight.len(),
        weight: weight.to_vec(),
        noise_sigma: cfg.response_noise(),
        link: cfg.link(),
        size: train + n + m,
    };
    let (x, y) = generate_population(&model, &mut rng_for(trial_seed, &[purpose::POPULATION]))?;
    let mut values = y[train..].to_vec();
    if has_ties(&values) {
        values = Jitter::default().apply(&values, &mut rng_for(trial_seed, &[purpose::JITTER]))?;
    }
    let population = split_population(values.clone(), n, &mut rng_for(trial_seed, &[purpose::SPLIT]))?;

    let mut ranker_rng = rng_for(trial_seed, &[purpose::RANKER]);
    let (preds, ridge) = match cfg.ranker {
        RankerChoice::Noisy => (noisy_value_ranker(&values, cfg.model_sigma[0], &mut ranker_rng)?, None),
        RankerChoice::LeastSquares => {
            let fit = train_linear_ranker(&x.rows(0, train).into_owned(), &y[..train])?;
            let preds = fit.predictions(&x.rows(train, n + m).into_owned(), &mut ranker_rng)?;
            (preds, Some(fit.ridge))
        }
    };
    Ok(SyntheticData {
        population,
        preds: with_output(preds, cfg.score),
        ridge,
    })
}

/// The data of trial 0, as written by the `gen` command.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    if cfg.generator == GeneratorKind::External || cfg.sweep_axis()?.is_some() {
        return Err(Error::config("generator", "gen needs a single synthetic configuration"));
    }
    synthetic_data(cfg, &model_weight(cfg), derive_seed(cfg.seed, &[0]))
}

fn run_methods(
    cfg: &ExperimentConfig,
    ctx: &PointContext,
    input: &TrialInput<'_>,
    trial_seed: u64,
    keep_sets: bool,
) -> Result<(Vec<TrialResult>, Vec<Timing>, Vec<TrialSets>)> {
    let test_truth = input.truth.map(|t| t.test_abs_ranks());
    let mut results = Vec::with_capacity(cfg.methods.len());
    let mut timings = Vec::with_capacity(cfg.methods.len());
    let mut kept = Vec::new();
    for method in &cfg.methods {
        let start = Instant::now();
        let threshold = method_threshold(*method, ctx, input, trial_seed)?;
        let sets = prediction_sets(input.preds, input.view, &threshold);
        let seconds = start.elapsed().as_secs_f64();
        let name = method.name();
        results.push(score_trial(
            &name,
            trial_seed,
            &sets,
            test_truth.as_deref(),
            input.view.total(),
            threshold.value,
        )?);
        timings.push(Timing {
            seed: trial_seed,
            method: name.clone(),
            seconds,
        });
        if keep_sets {
            kept.push(TrialSets {
                seed: trial_seed,
                method: name,
                sets,
            });
        }
    }
    Ok((results, timings, kept))
}

fn method_threshold(method: MethodSpec, ctx: &PointContext, input: &TrialInput<'_>, trial_seed: u64) -> Result<Threshold> {
    let (preds, view) = (input.preds, input.view);
    match method {
        MethodSpec::Dcr => {
            let family = ctx.family.as_ref().ok_or_else(|| Error::Invariant("rank laws not prepared".into()))?;
            dcr_threshold(&dcr_mixture_with(preds, view, family)?, view.n(), ctx.alpha)
        }
        MethodSpec::Mdcr => {
            let mut rng = rng_for(trial_seed, &[purpose::MDCR, method.stream_id()]);
            mdcr_threshold(preds, view, ctx.alpha, &mut rng)
        }
        MethodSpec::Tcpr(kind) => {
            let env = ctx
                .envelopes
                .get(&kind)
                .ok_or_else(|| Error::Invariant(format!("{kind} envelope not fitted")))?;
            let delta = ctx.delta.ok_or_else(|| Error::Invariant("delta not resolved".into()))?;
            tcpr_threshold(&proxy_scores(env, preds, view)?, ctx.alpha, delta)
        }
        MethodSpec::Oracle => {
            let truth = input
                .truth
                .ok_or_else(|| Error::config("methods", "Oracle needs y_true for test items"))?;
            oracle_threshold(&true_scores(preds, view, truth.hidden()), ctx.alpha)
        }
    }
}
