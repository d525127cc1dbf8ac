//! Joint high-probability bands for the absolute ranks of the calibration
//! order statistics.
//!
//! All Monte-Carlo envelopes draw their simulations in fixed-size chunks, each
//! with its own derived seed, so a fit is a pure function of `(n, m, cfg, seed)`
//! regardless of how many worker threads take part.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

const CHUNK: usize = 1024;

/// Slack used when testing whether an integer rank lies in a real band.
pub(crate) const BAND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Theoretical,
    Linear,
    Quantile,
}

impl EnvelopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeKind::Theoretical => "theoretical",
            EnvelopeKind::Linear => "linear",
            EnvelopeKind::Quantile => "quantile",
        }
    }
}

impl std::fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvelopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "theoretical" | "theory" => Ok(EnvelopeKind::Theoretical),
            "linear" => Ok(EnvelopeKind::Linear),
            "quantile" => Ok(EnvelopeKind::Quantile),
            other => Err(Error::config("envelope", format!("unknown envelope kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcprConfig {
    pub delta: f64,
    pub sim_count: usize,
}

impl TcprConfig {
    pub const DEFAULT_SIM_COUNT: usize = 100_000;

    pub fn new(delta: f64, sim_count: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
        }
        if sim_count == 0 {
            return Err(Error::invalid("sim_count", "need at least one simulation"));
        }
        Ok(TcprConfig { delta, sim_count })
    }

    /// `delta = alpha / 10` with the default simulation count.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha / 10.0, Self::DEFAULT_SIM_COUNT)
    }
}

/// Per relative rank `r` (index `r - 1`): a real band `[lower, upper]` that
/// jointly holds the absolute ranks of all calibration order statistics with
/// probability about `1 - delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kind: EnvelopeKind,
    pub delta: f64,
    /// Half-width term for the theoretical and linear kinds, trimmed
    /// fraction for the quantile kind.
    pub parameter: f64,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Whether every entry of a sorted rank vector lies inside its band.
    pub fn covers(&self, sorted_ranks: &[usize]) -> bool {
        sorted_ranks.iter().enumerate().all(|(i, &x)| {
            let x = x as f64;
            x >= self.lower[i] - BAND_TOLERANCE && x <= self.upper[i] + BAND_TOLERANCE
        })
    }

    /// Fits the envelope of the given kind.
    pub fn fit(kind: EnvelopeKind, n: usize, m: usize, cfg: &TcprConfig, seed: u64) -> Result<Self> {
        match kind {
            EnvelopeKind::Theoretical => theoretical_envelope(n, m, cfg.delta),
            EnvelopeKind::Linear => linear_envelope(n, m, cfg, seed),
            EnvelopeKind::Quantile => quantile_envelope(n, m, cfg, seed),
        }
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("n, m", format!("need n, m >= 1, got n={n}, m={m}")));
    }
    Ok(())
}

/// Sorted absolute ranks of `n` calibration items placed uniformly among `n + m`.
pub fn simulate_sorted_ranks<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut ranks: Vec<usize> = rand::seq::index::sample(rng, n + m, n)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    ranks.sort_unstable();
    ranks
}

/// Runs `per_sim` on `count` simulations, chunked by derived seed, and
/// returns the per-simulation outputs in simulation order.
fn map_simulations<T, F>(n: usize, m: usize, count: usize, seed: u64, per_sim: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[usize]) -> T + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_for(seed, &[c as u64]);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len)
                .map(|_| per_sim(&simulate_sorted_ranks(n, m, &mut rng)))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Closed-form band with constant width `2 (m + 1) eps`,
/// `eps = sqrt(ln(4 sqrt(2) pi sqrt(tau / delta)) / tau)`, `tau = n m / (n + m)`.
pub fn theoretical_envelope(n: usize, m: usize, delta: f64) -> Result<Envelope> {
    check_sizes(n, m)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let tau = (n * m) as f64 / (n + m) as f64;
    let log_term = (4.0 * SQRT_2 * PI * (tau / delta).sqrt()).ln();
    if !(log_term > 0.0) {
        return Err(Error::DeltaTooLarge {
            n,
            m,
            reason: format!("log term {log_term} is not positive"),
        });
    }
    let eps = (log_term / tau).sqrt();
    Ok(linear_band(n, m, eps, EnvelopeKind::Theoretical, delta))
}

fn linear_band(n: usize, m: usize, half_width: f64, kind: EnvelopeKind, delta: f64) -> Envelope {
    let scale = (m + 1) as f64;
    let (lower, upper) = (1..=n)
        .map(|r| {
            let centre = r as f64 + scale * r as f64 / n as f64;
            (centre - scale * half_width, centre + scale * half_width)
        })
        .unzip();
    Envelope {
        lower,
        upper,
        kind,
        delta,
        parameter: half_width,
    }
}

/// Smallest `c` such that `r + (m+1)(r/n +- c)` covers the simulation.
fn minimal_linear_width(sim: &[usize], n: usize, m: usize) -> f64 {
    let scale = (m + 1) as f64;
    sim.iter()
        .enumerate()
        .map(|(i, &x)| {
            let r = (i + 1) as f64;
            (x as f64 - r - scale * r / n as f64).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Linear band whose half-width is the smallest value leaving at most
/// `floor(K delta)` simulations uncovered.
pub fn linear_envelope(n: usize, m: usize, cfg: &TcprConfig, seed: u64) -> Result<Envelope> {
    check_sizes(n, m)?;
    let k = cfg.sim_count;
    let mut widths = map_simulations(n, m, k, seed, |sim| minimal_linear_width(sim, n, m));
    let allowed = allowed_failures(k, cfg.delta);
    let width = if allowed >= k {
        0.0
    } else {
        let idx = k - allowed - 1;
        *widths.select_nth_unstable_by(idx, f64::total_cmp).1
    };
    Ok(linear_band(n, m, width, EnvelopeKind::Linear, cfg.delta))
}

fn allowed_failures(k: usize, delta: f64) -> usize {
    let x = k as f64 * delta;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.floor() as usize
    }
}

/// Per-rank trimmed band: at rank `r` the `j`-th smallest and `j`-th largest
/// simulated value, with `j` as large as possible while at most
/// `floor(K delta)` simulations leave the band somewhere.
pub fn quantile_envelope(n: usize, m: usize, cfg: &TcprConfig, seed: u64) -> Result<Envelope> {
    check_sizes(n, m)?;
    let k = cfg.sim_count;
    let width = m + 1;

    // pass 1: per-rank histograms of the offset x - r in [0, m]
    let hist = (0..k.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, &[c as u64]);
            let mut local = vec![0u32; n * width];
            for _ in 0..CHUNK.min(k - c * CHUNK) {
                let sim = simulate_sorted_ranks(n, m, &mut rng);
                for (i, &x) in sim.iter().enumerate() {
                    local[i * width + (x - i - 1)] += 1;
                }
            }
            local
        })
        .reduce(
            || vec![0u32; n * width],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );

    // cumulative counts: cum[i][o] = #{sims with offset <= o at rank i + 1}
    let mut cum = hist;
    for row in cum.chunks_mut(width) {
        for o in 1..width {
            row[o] += row[o - 1];
        }
    }

    // pass 2: same simulations; depth of each one in the per-rank orderings
    let total = k as u32;
    let mut depths = map_simulations(n, m, k, seed, |sim| {
        sim.iter()
            .enumerate()
            .map(|(i, &x)| {
                let row = &cum[i * width..(i + 1) * width];
                let o = x - i - 1;
                let at_most = row[o];
                let at_least = total - if o == 0 { 0 } else { row[o - 1] };
                at_most.min(at_least)
            })
            .min()
            .expect("n >= 1")
    });

    let allowed = allowed_failures(k, cfg.delta);
    let trim = if allowed >= k {
        (k - 1) / 2
    } else {
        let d = *depths.select_nth_unstable(allowed).1 as usize;
        (d - 1).min((k - 1) / 2)
    };

    // band endpoints: trim-th smallest and trim-th largest per rank (0-indexed)
    let (lower, upper) = cum
        .chunks(width)
        .enumerate()
        .map(|(i, row)| {
            let lo = row.partition_point(|&c| (c as usize) <= trim);
            let hi = row.partition_point(|&c| (c as usize) < k - trim);
            ((lo + i + 1) as f64, (hi + i + 1) as f64)
        })
        .unzip();
    Ok(Envelope {
        lower,
        upper,
        kind: EnvelopeKind::Quantile,
        delta: cfg.delta,
        parameter: trim as f64 / k as f64,
    })
}

/// Fraction of `count` fresh simulations that leave `env` at some rank.
pub fn joint_violation_rate(env: &Envelope, m: usize, count: usize, seed: u64) -> f64 {
    let n = env.len();
    let misses = map_simulations(n, m, count, seed, |sim| !env.covers(sim))
        .into_iter()
        .filter(|&miss| miss)
        .count();
    misses as f64 / count as f64
}
