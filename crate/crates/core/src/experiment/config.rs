//! Flat `key = value` experiment configuration.
//!
//! Keys (lists are comma separated; at most one of `alpha`, `n`, `m`,
//! `model_sigma` may hold more than one value, which makes it a sweep):
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `generator` | `linear` | `linear`, `logistic` or `external` |
//! | `data_noise` | 0.2 linear, 0.1 logistic | response noise of the synthetic model |
//! | `dim` | 20 linear, 10 logistic | feature dimension |
//! | `population` | | population CSV (external generator) |
//! | `predictions` | | predictions CSV (external generator) |
//! | `ranker` | `noisy` | `noisy` or `least_squares` |
//! | `model_sigma` | 0.2 | noise of the noisy ranker |
//! | `train_fraction` | 0.4 | share of items used to fit `least_squares` |
//! | `n`, `m` | 100, 500 | calibration and test counts |
//! | `alpha` | 0.1 | miscoverage level |
//! | `score` | `ra` | `ra` or `va` |
//! | `methods` | `dcr,mdcr,tcpr,oracle` | any of `dcr`, `mdcr`, `tcpr`, `tcpr-<envelope>`, `oracle` |
//! | `envelope` | `quantile` | envelope used by a bare `tcpr` |
//! | `delta` | `alpha / 10` | envelope slack, must be below every `alpha` |
//! | `K` | 100000 | envelope simulations |
//! | `trials` | 100 | independent trials per grid point |
//! | `seed` | 0 | base seed |
//! | `parallelism` | 1 | worker threads |
//! | `out_dir` | `out` | output directory |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{Link, SyntheticConfig};
use crate::error::{Error, Result};
use crate::scores::ScoreKind;
use crate::tcpr::{EnvelopeKind, TcprConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodSpec {
    Dcr,
    Mdcr,
    Tcpr(EnvelopeKind),
    Oracle,
}

impl MethodSpec {
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Dcr => "DCR".into(),
            MethodSpec::Mdcr => "MDCR".into(),
            MethodSpec::Tcpr(kind) => format!("TCPR-{kind}"),
            MethodSpec::Oracle => "Oracle".into(),
        }
    }

    /// Stream id used when deriving per-method seeds.
    pub fn stream_id(&self) -> u64 {
        match self {
            MethodSpec::Dcr => 0,
            MethodSpec::Mdcr => 1,
            MethodSpec::Tcpr(EnvelopeKind::Theoretical) => 2,
            MethodSpec::Tcpr(EnvelopeKind::Linear) => 3,
            MethodSpec::Tcpr(EnvelopeKind::Quantile) => 4,
            MethodSpec::Oracle => 5,
        }
    }

    fn parse(token: &str, default_envelope: EnvelopeKind) -> Result<Self> {
        let lower = token.trim().to_ascii_lowercase();
        match lower.as_str() {
            "dcr" => Ok(MethodSpec::Dcr),
            "mdcr" => Ok(MethodSpec::Mdcr),
            "oracle" => Ok(MethodSpec::Oracle),
            "tcpr" => Ok(MethodSpec::Tcpr(default_envelope)),
            other => match other.strip_prefix("tcpr-").or_else(|| other.strip_prefix("tcpr_")) {
                Some(kind) => Ok(MethodSpec::Tcpr(
                    kind.parse().map_err(|_| Error::config("methods", format!("unknown envelope in `{token}`")))?,
                )),
                None => Err(Error::config("methods", format!("unknown method `{token}`"))),
            },
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Linear,
    Logistic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerChoice {
    Noisy,
    LeastSquares,
}

/// The swept quantity of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Alpha,
    N,
    M,
    ModelSigma,
}

impl Axis {
    pub fn key(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::N => "n",
            Axis::M => "m",
            Axis::ModelSigma => "model_sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorKind,
    pub data_noise: Option<f64>,
    pub dim: Option<usize>,
    pub population: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub ranker: RankerChoice,
    pub model_sigma: Vec<f64>,
    pub train_fraction: f64,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub alpha: Vec<f64>,
    pub score: ScoreKind,
    pub methods: Vec<MethodSpec>,
    pub envelope: EnvelopeKind,
    pub delta: Option<f64>,
    pub sim_count: usize,
    pub trials: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorKind::Linear,
            data_noise: None,
            dim: None,
            population: None,
            predictions: None,
            ranker: RankerChoice::Noisy,
            model_sigma: vec![0.2],
            train_fraction: 0.4,
            n: vec![100],
            m: vec![500],
            alpha: vec![0.1],
            score: ScoreKind::Ra,
            methods: vec![
                MethodSpec::Dcr,
                MethodSpec::Mdcr,
                MethodSpec::Tcpr(EnvelopeKind::Quantile),
                MethodSpec::Oracle,
            ],
            envelope: EnvelopeKind::Quantile,
            delta: None,
            sim_count: TcprConfig::DEFAULT_SIM_COUNT,
            trials: 100,
            seed: 0,
            parallelism: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_one<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", raw.trim())))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(key, "empty list"));
    }
    Ok(items)
}

impl ExperimentConfig {
    /// Parses a config file and validates the result.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut methods = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected key = value, got `{line}`")))?;
            // methods may name a bare `tcpr`, resolved after `envelope` is known
            if key.trim() == "methods" {
                methods = Some(value.trim().to_string());
            } else {
                self.set(key.trim(), value.trim())?;
            }
        }
        if let Some(m) = methods {
            self.set("methods", &m)?;
        }
        Ok(())
    }

    /// Sets one key; the same schema serves files and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "generator" => {
                self.generator = match value.to_ascii_lowercase().as_str() {
                    "linear" => GeneratorKind::Linear,
                    "logistic" => GeneratorKind::Logistic,
                    "external" => GeneratorKind::External,
                    other => return Err(Error::config(key, format!("unknown generator `{other}`"))),
                }
            }
            "data_noise" => self.data_noise = Some(parse_one(key, value)?),
            "dim" => self.dim = Some(parse_one(key, value)?),
            "population" => self.population = Some(PathBuf::from(value)),
            "predictions" => self.predictions = Some(PathBuf::from(value)),
            "ranker" => {
                self.ranker = match value.to_ascii_lowercase().as_str() {
                    "noisy" | "noisy_value" => RankerChoice::Noisy,
                    "least_squares" | "linear" => RankerChoice::LeastSquares,
                    other => return Err(Error::config(key, format!("unknown ranker `{other}`"))),
                }
            }
            "model_sigma" => self.model_sigma = parse_list(key, value)?,
            "train_fraction" => self.train_fraction = parse_one(key, value)?,
            "n" => self.n = parse_list(key, value)?,
            "m" => self.m = parse_list(key, value)?,
            "alpha" => self.alpha = parse_list(key, value)?,
            "score" => self.score = parse_one(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| MethodSpec::parse(s, self.envelope))
                    .collect::<Result<_>>()?;
                if self.methods.is_empty() {
                    return Err(Error::config(key, "no methods selected"));
                }
            }
            "envelope" => {
                let kind: EnvelopeKind = value.parse()?;
                let old = self.envelope;
                self.envelope = kind;
                // a bare `tcpr` follows the envelope setting
                for method in &mut self.methods {
                    if *method == MethodSpec::Tcpr(old) {
                        *method = MethodSpec::Tcpr(kind);
                    }
                }
            }
            "delta" => self.delta = Some(parse_one(key, value)?),
            "K" | "k" | "sim_count" => self.sim_count = parse_one(key, value)?,
            "trials" => self.trials = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "parallelism" => self.parallelism = parse_one(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// The single axis holding several values, if any.
    pub fn sweep_axis(&self) -> Result<Option<Axis>> {
        let swept: Vec<Axis> = [
            (Axis::Alpha, self.alpha.len()),
            (Axis::N, self.n.len()),
            (Axis::M, self.m.len()),
            (Axis::ModelSigma, self.model_sigma.len()),
        ]
        .into_iter()
        .filter(|&(_, len)| len > 1)
        .map(|(axis, _)| axis)
        .collect();
        match swept.as_slice() {
            [] => Ok(None),
            [axis] => Ok(Some(*axis)),
            many => Err(Error::config(
                many.iter().map(|a| a.key()).collect::<Vec<_>>().join(", "),
                "only one axis may be swept at a time",
            )),
        }
    }

    /// Values along the swept axis (or the single point).
    pub fn grid(&self) -> Result<Vec<(f64, ExperimentConfig)>> {
        let axis = self.sweep_axis()?;
        let len = match axis {
            None => 1,
            Some(Axis::Alpha) => self.alpha.len(),
            Some(Axis::N) => self.n.len(),
            Some(Axis::M) => self.m.len(),
            Some(Axis::ModelSigma) => self.model_sigma.len(),
        };
        (0..len)
            .map(|i| {
                let mut point = self.clone();
                let value = match axis {
                    None => f64::NAN,
                    Some(Axis::Alpha) => {
                        point.alpha = vec![self.alpha[i]];
                        self.alpha[i]
                    }
                    Some(Axis::N) => {
                        point.n = vec![self.n[i]];
                        self.n[i] as f64
                    }
                    Some(Axis::M) => {
                        point.m = vec![self.m[i]];
                        self.m[i] as f64
                    }
                    Some(Axis::ModelSigma) => {
                        point.model_sigma = vec![self.model_sigma[i]];
                        self.model_sigma[i]
                    }
                };
                Ok((value, point))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep_axis()?;
        if self.trials == 0 {
            return Err(Error::config("trials", "need at least one trial"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("parallelism", "need at least one worker"));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::config("alpha", format!("{a} outside (0, 1)")));
        }
        if self.n.contains(&0) || self.m.contains(&0) {
            return Err(Error::config("n, m", "calibration and test counts must be positive"));
        }
        if let Some(s) = self.model_sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::config("model_sigma", format!("{s} must be >= 0")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "no methods selected"));
        }
        if self.uses_tcpr() {
            if self.sim_count == 0 {
                return Err(Error::config("K", "need at least one simulation"));
            }
            let min_alpha = self.alpha.iter().copied().fold(f64::INFINITY, f64::min);
            if let Some(d) = self.delta {
                if !(d > 0.0 && d < min_alpha) {
                    return Err(Error::config("delta", format!("need 0 < delta < min alpha = {min_alpha}, got {d}")));
                }
            }
        }
        if let Some(noise) = self.data_noise {
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::config("data_noise", format!("{noise} must be >= 0")));
            }
        }
        if self.generator == GeneratorKind::External {
            if self.population.is_none() || self.predictions.is_none() {
                return Err(Error::config("population", "external generator needs population and predictions files"));
            }
            if self.sweep_axis()?.is_some() {
                return Err(Error::config("generator", "external data cannot be swept"));
            }
        }
        Ok(())
    }

    pub fn uses_tcpr(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, MethodSpec::Tcpr(_)))
    }

    /// TCPR settings for a single grid point.
    pub fn tcpr_config(&self, alpha: f64) -> Result<TcprConfig> {
        TcprConfig::new(self.delta.unwrap_or(alpha / 10.0), self.sim_count)
            .map_err(|e| Error::config("delta", e.to_string()))
    }

    pub fn link(&self) -> Link {
        match self.generator {
            GeneratorKind::Logistic => Link::Logistic,
            _ => Link::Linear,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.dim.unwrap_or(match self.link() {
            Link::Linear => SyntheticConfig::LINEAR_DIM,
            Link::Logistic => SyntheticConfig::LOGISTIC_DIM,
        })
    }

    pub fn response_noise(&self) -> f64 {
        self.data_noise.unwrap_or(match self.link() {
            Link::Linear => SyntheticConfig::LINEAR_NOISE,
            Link::Logistic => SyntheticConfig::LOGISTIC_NOISE,
        })
    }

    /// Items reserved for fitting the least-squares ranker.
    pub fn train_count(&self, n: usize, m: usize) -> usize {
        match self.ranker {
            RankerChoice::Noisy => 0,
            RankerChoice::LeastSquares => {
                let f = self.train_fraction;
                ((n + m) as f64 * f / (1.0 - f)).ceil() as usize
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\nalpha = 0.05, 0.1\nmethods = dcr, tcpr\nenvelope = linear\nK = 1000\nscore = va\n",
        )
        .unwrap();
        assert_eq!(cfg.alpha, vec![0.05, 0.1]);
        assert_eq!(cfg.methods, vec![MethodSpec::Dcr, MethodSpec::Tcpr(EnvelopeKind::Linear)]);
        assert_eq!(cfg.sim_count, 1000);
        assert_eq!(cfg.score, ScoreKind::Va);
        assert_eq!(cfg.sweep_axis().unwrap(), Some(Axis::Alpha));
        assert_eq!(cfg.grid().unwrap().len(), 2);
    }

    #[test]
    fn rejects_two_swept_axes_and_bad_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("alpha", "0.1,0.2").unwrap();
        cfg.set("n", "10,20").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));

        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("methods", "dcr,foo").is_err());
        cfg.set("delta", "0.2").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("alpha", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!(MethodSpec::Tcpr(EnvelopeKind::Quantile).name(), "TCPR-quantile");
        assert_eq!(MethodSpec::parse("TCPR-theoretical", EnvelopeKind::Linear).unwrap(), MethodSpec::Tcpr(EnvelopeKind::Theoretical));
    }
}
