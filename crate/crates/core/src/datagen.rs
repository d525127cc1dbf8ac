//! Synthetic populations and simple black-box rankers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Jitter;
use crate::scores::{Predictions, ScoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Linear,
    Logistic,
}

/// `y = link(x . w) + noise` with standard Gaussian features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub weight: Vec<f64>,
    pub noise_sigma: f64,
    pub link: Link,
    pub size: usize,
}

impl SyntheticConfig {
    pub const LINEAR_DIM: usize = 20;
    pub const LINEAR_NOISE: f64 = 0.2;
    pub const LOGISTIC_DIM: usize = 10;
    pub const LOGISTIC_NOISE: f64 = 0.1;

    /// Linear model with `d = 20`, noise `0.2` and the given unit weight.
    pub fn linear(size: usize, weight: Vec<f64>) -> Result<Self> {
        let cfg = SyntheticConfig {
            dim: weight.len(),
            weight,
            noise_sigma: Self::LINEAR_NOISE,
            link: Link::Linear,
            size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Logistic model with `d = 10`, all-ones weight and noise variance 0.01.
    pub fn logistic(size: usize) -> Self {
        SyntheticConfig {
            dim: Self::LOGISTIC_DIM,
            weight: vec![1.0; Self::LOGISTIC_DIM],
            noise_sigma: Self::LOGISTIC_NOISE,
            link: Link::Logistic,
            size,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Result<Self> {
        self.noise_sigma = sigma;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.weight.len() != self.dim {
            return Err(Error::invalid("weight", format!("length {} for d={}", self.weight.len(), self.dim)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", format!("must be >= 0, got {}", self.noise_sigma)));
        }
        if self.link == Link::Linear {
            let norm = self.weight.iter().map(|w| w * w).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("weight", format!("linear weight must have unit norm, got {norm}")));
            }
        }
        Ok(())
    }
}

/// Standard Gaussian direction scaled to unit length.
pub fn random_unit_weight<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return w.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn features<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> DMatrix<f64> {
    // row-major draw order so regeneration does not depend on storage layout
    let draws: Vec<f64> = (0..cfg.size * cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(cfg.size, cfg.dim, &draws)
}

fn noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * rng.sample::<f64, _>(StandardNormal)
}

fn generate<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R, link: fn(f64) -> f64) -> (DMatrix<f64>, Vec<f64>) {
    let x = features(cfg, rng);
    let w = DVector::from_column_slice(&cfg.weight);
    let latent = &x * w;
    let y = latent.iter().map(|&z| link(z) + noise(cfg.noise_sigma, rng)).collect();
    (x, y)
}

/// Features and responses of the linear model.
pub fn gen_linear<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<(DMatrix<f64>, Vec<f64>)> {
    cfg.validate()?;
    if cfg.link != Link::Linear {
        return Err(Error::invalid("link", "gen_linear needs the linear link"));
    }
    Ok(generate(cfg, rng, |z| z))
}

/// Features and responses of the logistic model.
pub fn gen_logistic<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<(DMatrix<f64>, Vec<f64>)> {
    cfg.validate()?;
    if cfg.link != Link::Logistic {
        return Err(Error::invalid("link", "gen_logistic needs the logistic link"));
    }
    Ok(generate(cfg, rng, |z| 1.0 / (1.0 + (-z).exp())))
}

/// Dispatches on the configured link.
pub fn generate_population<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<(DMatrix<f64>, Vec<f64>)> {
    match cfg.link {
        Link::Linear => gen_linear(cfg, rng),
        Link::Logistic => gen_logistic(cfg, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankerKind {
    NoisyValue { model_sigma: f64 },
    LinearLeastSquares { train_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerSpec {
    pub kind: RankerKind,
    pub output: ScoreKind,
}

impl RankerSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RankerKind::NoisyValue { model_sigma } if !(model_sigma >= 0.0 && model_sigma.is_finite()) => {
                Err(Error::invalid("model_sigma", format!("must be >= 0, got {model_sigma}")))
            }
            RankerKind::LinearLeastSquares { train_fraction } if !(train_fraction > 0.0 && train_fraction < 1.0) => {
                Err(Error::invalid("train_fraction", format!("must lie in (0, 1), got {train_fraction}")))
            }
            _ => Ok(()),
        }
    }
}

/// `A(x_i) = y_i + N(0, sigma^2)`, jittered if that leaves ties.
pub fn noisy_value_ranker<R: Rng + ?Sized>(y: &[f64], model_sigma: f64, rng: &mut R) -> Result<Predictions> {
    if !(model_sigma >= 0.0 && model_sigma.is_finite()) {
        return Err(Error::invalid("model_sigma", format!("must be >= 0, got {model_sigma}")));
    }
    let values = if model_sigma == 0.0 {
        y.to_vec()
    } else {
        let dist = Normal::new(0.0, model_sigma).expect("finite positive sigma");
        y.iter().map(|&v| v + dist.sample(rng)).collect()
    };
    Predictions::va_jittered(values, &Jitter::default(), rng)
}

/// Least-squares weights with a small trace-scaled ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRanker {
    pub weights: Vec<f64>,
    pub ridge: f64,
}

impl LinearRanker {
    pub const RIDGE_SCALE: f64 = 1e-8;

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::invalid(
                "features",
                format!("{} columns for {} weights", x.ncols(), self.weights.len()),
            ));
        }
        Ok((x * DVector::from_column_slice(&self.weights)).iter().copied().collect())
    }

    /// Tie-free VA predictions for the rows of `x`.
    pub fn predictions<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<Predictions> {
        Predictions::va_jittered(self.predict(x)?, &Jitter::default(), rng)
    }
}

/// Solves `(X'X + lambda I) w = X'y` with `lambda = 1e-8 trace(X'X) / d`.
pub fn train_linear_ranker(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearRanker> {
    train_linear_ranker_with_ridge(x, y, LinearRanker::RIDGE_SCALE)
}

pub fn train_linear_ranker_with_ridge(x: &DMatrix<f64>, y: &[f64], ridge_scale: f64) -> Result<LinearRanker> {
    let (rows, d) = x.shape();
    if rows == 0 || rows != y.len() {
        return Err(Error::invalid("train", format!("{rows} feature rows for {} responses", y.len())));
    }
    if d == 0 || d > rows {
        return Err(Error::invalid("train", format!("need 1 <= d <= rows, got d={d}, rows={rows}")));
    }
    let mut gram = x.transpose() * x;
    let ridge = ridge_scale * gram.trace() / d as f64;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let rhs = x.transpose() * DVector::from_column_slice(y);
    let weights = gram.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(LinearRanker {
        weights: weights.iter().copied().collect(),
        ridge,
    })
}

/// Output conversion shared by all rankers.
pub fn with_output(preds: Predictions, output: ScoreKind) -> Predictions {
    match output {
        ScoreKind::Ra => preds.to_ra(),
        ScoreKind::Va => preds,
    }
}
